"""Link-speed assignment, delay sampling, and per-transfer timing."""

import pytest

from fedchain.netsim import (
    MIN_DELAY_S,
    NetworkError,
    TopologyConfig,
    build_profiles,
    round_delays,
    transfer_time,
)

PAPER_LT = (1, 3, 5, 7, 9, 11, 13, 15, 17, 18, 19, 20)


def topo(**kw):
    defaults = dict(total_nodes=20, lt_ids=PAPER_LT, seed=7)
    defaults.update(kw)
    return TopologyConfig(**defaults)


def profile(node, d, td):
    from fedchain.consensus import NodeNetProfile

    return NodeNetProfile(node=node, link_speed_d=d, delay_td=td)


# ---------------------------------------------------------------------------
# profile construction
# ---------------------------------------------------------------------------

def test_link_speed_is_linear_in_node_id():
    profiles = build_profiles(topo())
    assert profiles[0].link_speed_d == 77_000.0  # node 1
    assert profiles[19].link_speed_d == 210_000.0  # node 20
    assert [p.node for p in profiles] == list(range(1, 21))


def test_delays_drawn_within_range():
    profiles = build_profiles(topo())
    assert all(0.0 < p.delay_td <= 1.0 for p in profiles)


def test_same_seed_reproduces_delays():
    a = [p.delay_td for p in build_profiles(topo())]
    b = [p.delay_td for p in build_profiles(topo())]
    assert a == b


def test_different_seed_changes_delays():
    a = [p.delay_td for p in build_profiles(topo(seed=1))]
    b = [p.delay_td for p in build_profiles(topo(seed=2))]
    assert a != b


def test_zero_delay_clamped():
    profiles = build_profiles(topo(td_range=(0.0, 0.0)))
    assert all(p.delay_td == MIN_DELAY_S for p in profiles)


def test_config_validation():
    with pytest.raises(ValueError):
        topo(lt_ids=(0, 1))
    with pytest.raises(ValueError):
        topo(lt_ids=(25,))
    with pytest.raises(ValueError):
        topo(base_speed=0.0)
    with pytest.raises(ValueError):
        topo(td_range=(0.5, 0.1))


# ---------------------------------------------------------------------------
# transfer timing
# ---------------------------------------------------------------------------

def test_zero_payload_costs_only_endpoint_delays():
    a, b = profile(1, 77_000, 0.25), profile(2, 84_000, 0.5)
    assert transfer_time(a, b, 0) == 0.75


def test_reference_transfer():
    # 6137000 bytes over min(77000, 140000) B/s plus 0.1 + 0.2 seconds
    a, b = profile(1, 77_000, 0.1), profile(10, 140_000, 0.2)
    expected = 6_137_000 / 77_000 + 0.3
    assert transfer_time(a, b, 6_137_000) == pytest.approx(expected, rel=1e-12)
    assert transfer_time(a, b, 6_137_000) == pytest.approx(80.0013, abs=1e-4)


def test_transfer_is_symmetric():
    a, b = profile(1, 90_000, 0.3), profile(2, 120_000, 0.7)
    assert transfer_time(a, b, 123_456) == transfer_time(b, a, 123_456)


def test_receiver_delay_can_be_excluded():
    a, b = profile(1, 77_000, 0.25), profile(2, 84_000, 0.5)
    assert transfer_time(a, b, 0, include_receiver_td=False) == 0.25


def test_transfer_monotonicity():
    base = transfer_time(profile(1, 80_000, 0.3), profile(2, 90_000, 0.4), 1_000_000)
    faster = transfer_time(profile(1, 160_000, 0.3), profile(2, 90_000, 0.4), 1_000_000)
    bigger = transfer_time(profile(1, 80_000, 0.3), profile(2, 90_000, 0.4), 2_000_000)
    slower_td = transfer_time(profile(1, 80_000, 0.9), profile(2, 90_000, 0.4), 1_000_000)
    assert faster < base < bigger
    assert slower_td > base


def test_negative_payload_rejected():
    a, b = profile(1, 77_000, 0.25), profile(2, 84_000, 0.5)
    with pytest.raises(ValueError):
        transfer_time(a, b, -1)


def test_slowest_node_payload_term_independent_of_receiver():
    """The minimum-speed node is always the bottleneck, so only delay terms vary."""
    profiles = build_profiles(topo())
    slowest = profiles[0]
    payload = 6_137_000
    terms = {
        transfer_time(slowest, p, payload) - slowest.delay_td - p.delay_td
        for p in profiles[1:]
    }
    assert len(terms) == 1
    assert terms.pop() == pytest.approx(payload / slowest.link_speed_d, rel=1e-12)


# ---------------------------------------------------------------------------
# per-round transfer records
# ---------------------------------------------------------------------------

def test_one_record_per_transmitting_node():
    profiles = build_profiles(topo())
    payloads = {n: 1000 for n in PAPER_LT}
    records = round_delays(PAPER_LT, pa=16, profiles=profiles, payload_map=payloads, round=3)
    assert len(records) == 12
    assert [r.sender for r in records] == sorted(PAPER_LT)
    assert all(r.receiver == 16 and r.round == 3 for r in records)


def test_gated_node_produces_no_record():
    profiles = build_profiles(topo())
    payloads = {n: 1000 for n in PAPER_LT if n != 5}
    records = round_delays(PAPER_LT, 16, profiles, payloads)
    assert len(records) == 11
    assert 5 not in {r.sender for r in records}


def test_record_delay_matches_transfer_time():
    profiles = build_profiles(topo())
    by_node = {p.node: p for p in profiles}
    records = round_delays(PAPER_LT, 14, profiles, {n: 5000 for n in PAPER_LT})
    for r in records:
        assert r.delay_s == transfer_time(by_node[r.sender], by_node[14], 5000)


def test_unknown_nodes_rejected():
    profiles = build_profiles(topo())
    with pytest.raises(NetworkError):
        round_delays(PAPER_LT, 99, profiles, {n: 1 for n in PAPER_LT})
    with pytest.raises(NetworkError):
        round_delays([1, 99], 16, profiles, {1: 1, 99: 1})
