"""Credit clamping and token reward distribution."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedchain.incentives import (
    CR_MAX,
    CR_MIN,
    CreditConfig,
    CreditLedger,
    ExScore,
    IncentiveError,
    StakeLedger,
    token_rewards,
    update_credit,
)

NODES = [1, 3, 5, 7]


# ---------------------------------------------------------------------------
# credit scores
# ---------------------------------------------------------------------------

def test_reward_clamped_at_upper_bound():
    ledger = CreditLedger(NODES, CreditConfig(reward=5.0), initial=100.0)
    ledger.update_credit(almg={1}, ulmg=set())
    assert ledger[1] == 100.0


def test_penalty_clamped_at_lower_bound():
    ledger = CreditLedger(NODES, CreditConfig(penalty=-5.0), initial=100.0)
    ledger.scores[3] = 3.0
    ledger.update_credit(almg=set(), ulmg={3})
    assert ledger[3] == 0.0


def test_eleven_penalties_from_sixty():
    ledger = CreditLedger(NODES, CreditConfig(penalty=-5.0), initial=100.0)
    ledger.scores[5] = 60.0
    for _ in range(11):
        ledger.update_credit(almg=set(), ulmg={5})
    assert ledger[5] == 5.0


def test_untouched_nodes_unchanged():
    ledger = CreditLedger(NODES, CreditConfig(), initial=80.0)
    ledger.update_credit(almg={1}, ulmg={3})
    assert ledger[5] == 80.0 and ledger[7] == 80.0
    assert ledger[1] == 85.0 and ledger[3] == 75.0


def test_overlapping_groups_rejected():
    ledger = CreditLedger(NODES, CreditConfig())
    with pytest.raises(IncentiveError):
        ledger.update_credit(almg={1, 3}, ulmg={3})


def test_module_level_update_returns_ledger():
    ledger = CreditLedger(NODES, CreditConfig(), initial=50.0)
    assert update_credit(ledger, {1}, set()) is ledger
    assert ledger[1] == 55.0


def test_recovery_after_punishment():
    ledger = CreditLedger([5], CreditConfig(reward=5.0, penalty=-5.0), initial=100.0)
    for _ in range(25):
        ledger.update_credit(set(), {5})
    assert ledger[5] == 0.0
    ledger.update_credit({5}, set())
    assert ledger[5] == 5.0


@settings(max_examples=50)
@given(st.lists(st.sampled_from(["r", "p", "-"]), min_size=1, max_size=60))
def test_credit_always_within_bounds(history):
    ledger = CreditLedger([1], CreditConfig(reward=7.0, penalty=-9.0), initial=50.0)
    for step in history:
        ledger.update_credit({1} if step == "r" else set(), {1} if step == "p" else set())
        assert CR_MIN <= ledger[1] <= CR_MAX


def test_config_validation():
    with pytest.raises(ValueError):
        CreditConfig(reward=-1.0)
    with pytest.raises(ValueError):
        CreditConfig(penalty=1.0)
    with pytest.raises(ValueError):
        CreditConfig(kappa=-1)


# ---------------------------------------------------------------------------
# token rewards
# ---------------------------------------------------------------------------

def test_equal_scores_split_equally():
    payouts = token_rewards([ExScore(1, 0.05), ExScore(2, 0.05)], t_acc=0.01, tr_total=20.0)
    assert payouts == {1: 10.0, 2: 10.0}


def test_reference_proportional_split():
    # terms (0.03, 0.01) -> shares (15, 5) of 20
    payouts = token_rewards([ExScore(1, 0.02), ExScore(2, 0.00)], t_acc=0.01, tr_total=20.0)
    assert payouts[1] == pytest.approx(15.0, abs=1e-12)
    assert payouts[2] == pytest.approx(5.0, abs=1e-12)


def test_negative_terms_clamped_to_zero():
    # terms (-0.04, 0.04) clamp to (0, 0.04) -> payouts (0, 20)
    payouts = token_rewards([ExScore(1, -0.05), ExScore(2, 0.03)], t_acc=0.01, tr_total=20.0)
    assert payouts[1] == 0.0
    assert payouts[2] == pytest.approx(20.0, abs=1e-12)


def test_all_clamped_falls_back_to_equal_split():
    scores = [ExScore(n, -0.5) for n in (1, 2, 3, 4)]
    payouts = token_rewards(scores, t_acc=0.1, tr_total=20.0)
    assert all(v == 5.0 for v in payouts.values())


def test_conservation_over_random_vectors():
    rng = np.random.default_rng(77)
    for _ in range(500):
        n = int(rng.integers(1, 13))
        scores = [ExScore(i, float(rng.uniform(-1, 1))) for i in range(n)]
        payouts = token_rewards(scores, t_acc=0.01, tr_total=20.0)
        assert abs(sum(payouts.values()) - 20.0) < 1e-9
        assert all(v >= 0 for v in payouts.values())


def test_better_score_earns_strictly_more():
    base = [ExScore(1, 0.02), ExScore(2, 0.05), ExScore(3, 0.01)]
    better = [ExScore(1, 0.04), ExScore(2, 0.05), ExScore(3, 0.01)]
    a = token_rewards(base, t_acc=0.01, tr_total=20.0)
    b = token_rewards(better, t_acc=0.01, tr_total=20.0)
    assert b[1] > a[1]


def test_empty_scores_rejected():
    with pytest.raises(IncentiveError):
        token_rewards([], t_acc=0.01, tr_total=20.0)


def test_ex_score_out_of_range_rejected():
    with pytest.raises(ValueError):
        ExScore(1, 1.5)
    with pytest.raises(ValueError):
        ExScore(1, -1.01)


# ---------------------------------------------------------------------------
# stakes
# ---------------------------------------------------------------------------

def test_zero_payouts_leave_stakes_unchanged():
    stakes = StakeLedger(NODES)
    stakes.apply_rewards({n: 0.0 for n in NODES})
    assert all(stakes[n] == 0.0 for n in NODES)


def test_hundred_rounds_conserve_total():
    stakes = StakeLedger(NODES, tr_total=20.0)
    rng = np.random.default_rng(3)
    for _ in range(100):
        scores = [ExScore(n, float(rng.uniform(-0.2, 0.2))) for n in NODES]
        stakes.apply_rewards(token_rewards(scores, t_acc=0.01, tr_total=20.0))
    assert stakes.total() == pytest.approx(2000.0, abs=1e-6)


def test_consistently_best_node_accumulates_most():
    stakes = StakeLedger(NODES, tr_total=20.0)
    rng = np.random.default_rng(4)
    for _ in range(50):
        scores = [
            ExScore(n, 0.3 if n == 5 else float(rng.uniform(-0.05, 0.05))) for n in NODES
        ]
        stakes.apply_rewards(token_rewards(scores, t_acc=0.01, tr_total=20.0))
    assert stakes[5] == max(stakes.balances.values())
    assert stakes[5] > max(stakes[n] for n in NODES if n != 5)


def test_stakes_never_decrease():
    stakes = StakeLedger(NODES)
    with pytest.raises(IncentiveError):
        stakes.apply_rewards({1: -0.5})
