import pytest

from fedchain.pipeline import reset_layouts


@pytest.fixture(autouse=True)
def fresh_layouts():
    reset_layouts()
    yield
    reset_layouts()
