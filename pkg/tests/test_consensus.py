"""Weighted-value scoring, package-list selection, rotation, stake baseline."""

import numpy as np
import pytest

from fedchain.consensus import (
    EmptyCandidateError,
    InvalidProfileError,
    NodeNetProfile,
    PackageList,
    PowlsConfig,
    pos_select,
    producer_for_round,
    select_package_nodes,
    weighted_value,
)

PAPER_WEIGHTS = PowlsConfig(upsilon=1.0, phi=100.0, tau=3)


def profile(node, d, td):
    return NodeNetProfile(node=node, link_speed_d=d, delay_td=td)


# ---------------------------------------------------------------------------
# the scoring rule
# ---------------------------------------------------------------------------

def test_weighted_value_reference_point():
    # upsilon=1, phi=100, D=77000, TD=0.5 -> 77000 + 200
    assert weighted_value(profile(1, 77000, 0.5), PAPER_WEIGHTS) == 77200.0


def test_weighted_value_ignores_speed_when_upsilon_zero():
    cfg = PowlsConfig(upsilon=0.0, phi=1.0, tau=1)
    for d in (1.0, 77000.0, 1e9):
        assert weighted_value(profile(1, d, 0.25), cfg) == 4.0


def test_weighted_value_matches_oracle():
    rng = np.random.default_rng(42)
    cfg = PowlsConfig(upsilon=rng.uniform(0, 5), phi=rng.uniform(0, 500), tau=2)
    for _ in range(500):
        d = rng.uniform(1.0, 1e7)
        td = rng.uniform(1e-6, 10.0)
        expected = cfg.upsilon * d + cfg.phi * (1.0 / td)
        got = weighted_value(profile(1, d, td), cfg)
        assert got == pytest.approx(expected, rel=1e-12)


def test_nonpositive_delay_rejected():
    with pytest.raises(InvalidProfileError):
        NodeNetProfile(node=1, link_speed_d=100.0, delay_td=0.0)
    with pytest.raises(InvalidProfileError):
        NodeNetProfile(node=1, link_speed_d=0.0, delay_td=0.5)


def test_config_validation():
    with pytest.raises(ValueError):
        PowlsConfig(upsilon=0.0, phi=0.0)
    with pytest.raises(ValueError):
        PowlsConfig(tau=0)
    with pytest.raises(ValueError):
        PowlsConfig(upsilon=-1.0)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def test_top_tau_selected_descending():
    profiles = [profile(n, 10_000.0 * n, 0.5) for n in range(1, 9)]
    plist = select_package_nodes(profiles, lt_nodes=set(), cfg=PAPER_WEIGHTS)
    assert plist.members == (8, 7, 6)


def test_lt_nodes_never_selected():
    profiles = [profile(n, 10_000.0 * n, 0.5) for n in range(1, 9)]
    plist = select_package_nodes(profiles, lt_nodes={8, 7}, cfg=PAPER_WEIGHTS)
    assert plist.members == (6, 5, 4)
    assert not set(plist.members) & {8, 7}


def test_no_candidates_is_an_error():
    profiles = [profile(1, 100.0, 0.5)]
    with pytest.raises(EmptyCandidateError):
        select_package_nodes(profiles, lt_nodes={1}, cfg=PAPER_WEIGHTS)


def test_fewer_candidates_than_tau():
    profiles = [profile(n, 100.0 * n, 0.5) for n in (1, 2)]
    plist = select_package_nodes(profiles, lt_nodes=set(), cfg=PAPER_WEIGHTS)
    assert plist.members == (2, 1)


def test_wv_tie_broken_by_higher_link_speed():
    # 90000 + 100/0.5 == 80000 + 100/(100/10200.0): both exactly 90200.0
    a = profile(1, 90000.0, 0.5)
    b = profile(2, 80000.0, 100.0 / 10200.0)
    assert weighted_value(a, PAPER_WEIGHTS) == weighted_value(b, PAPER_WEIGHTS)
    plist = select_package_nodes([b, a], set(), PowlsConfig(1.0, 100.0, tau=1))
    assert plist.members == (1,)  # the D=90000 node wins the boundary


def test_wv_and_speed_tie_broken_by_lower_delay():
    # adjacent floats whose reciprocals collide: identical WV, distinct TD
    td_low, td_high = 0.7500000000000001, 0.7500000000000002
    a = profile(1, 90000.0, td_high)
    b = profile(2, 90000.0, td_low)
    assert weighted_value(a, PAPER_WEIGHTS) == weighted_value(b, PAPER_WEIGHTS)
    plist = select_package_nodes([a, b], set(), PowlsConfig(1.0, 100.0, tau=1))
    assert plist.members == (2,)  # the TD=...01 node wins


def test_full_tie_broken_by_lower_node_id():
    a = profile(9, 90000.0, 0.5)
    b = profile(4, 90000.0, 0.5)
    plist = select_package_nodes([a, b], set(), PowlsConfig(1.0, 100.0, tau=1))
    assert plist.members == (4,)


def test_scaling_speeds_preserves_selection_order():
    rng = np.random.default_rng(3)
    cfg = PowlsConfig(upsilon=2.0, phi=0.0, tau=4)
    profiles = [profile(n, rng.uniform(1e4, 1e6), rng.uniform(0.01, 1)) for n in range(1, 11)]
    baseline = select_package_nodes(profiles, set(), cfg).members
    for c in (0.5, 3.0, 1000.0):
        scaled = [profile(p.node, c * p.link_speed_d, p.delay_td) for p in profiles]
        assert select_package_nodes(scaled, set(), cfg).members == baseline


def test_improving_a_member_never_evicts_it():
    rng = np.random.default_rng(8)
    profiles = [profile(n, rng.uniform(1e4, 1e6), rng.uniform(0.01, 1)) for n in range(1, 11)]
    members = select_package_nodes(profiles, set(), PAPER_WEIGHTS).members
    target = members[-1]
    for boost in (1.01, 2.0, 100.0):
        better = [
            profile(p.node, p.link_speed_d * (boost if p.node == target else 1), p.delay_td)
            for p in profiles
        ]
        assert target in select_package_nodes(better, set(), PAPER_WEIGHTS).members
        slower_td = [
            profile(p.node, p.link_speed_d, p.delay_td / (boost if p.node == target else 1))
            for p in profiles
        ]
        assert target in select_package_nodes(slower_td, set(), PAPER_WEIGHTS).members


# ---------------------------------------------------------------------------
# producer rotation
# ---------------------------------------------------------------------------

def test_round_robin_rotation():
    plist = PackageList(members=(10, 20, 30), round_assigned=0)
    assert [producer_for_round(plist, r) for r in range(4)] == [10, 20, 30, 10]


def test_single_member_always_produces():
    plist = PackageList(members=(5,), round_assigned=0)
    assert all(producer_for_round(plist, r) == 5 for r in range(7))


def test_rotation_restarts_at_top_after_reselection():
    plist = PackageList(members=(10, 20, 30), round_assigned=4)
    assert producer_for_round(plist, 4) == 10
    assert producer_for_round(plist, 5) == 20


def test_rotation_visits_every_member_once_per_cycle():
    plist = PackageList(members=(3, 1, 4, 1_0, 5), round_assigned=2)
    for start in (2, 7, 12):
        seen = [producer_for_round(plist, r) for r in range(start, start + 5)]
        assert sorted(seen) == sorted(plist.members)


def test_empty_package_list_is_an_error():
    with pytest.raises(EmptyCandidateError):
        producer_for_round(PackageList(members=(), round_assigned=0), 1)


# ---------------------------------------------------------------------------
# stake baseline
# ---------------------------------------------------------------------------

def test_pos_selects_max_stake():
    assert pos_select({1: 5.0, 2: 9.0, 3: 1.0}, eligible={1, 2, 3}) == 2


def test_pos_tie_broken_by_lower_id():
    assert pos_select({4: 7.0, 2: 7.0, 9: 7.0}, eligible={4, 2, 9}) == 2


def test_pos_selection_tracks_stake_changes():
    stakes = {1: 5.0, 2: 3.0}
    assert pos_select(stakes, {1, 2}) == 1
    stakes[2] = 6.0
    assert pos_select(stakes, {1, 2}) == 2


def test_pos_missing_stake_counts_as_zero():
    assert pos_select({7: 1.0}, eligible={2, 7}) == 7
    assert pos_select({}, eligible={2, 7}) == 2


def test_pos_matches_bruteforce_max():
    rng = np.random.default_rng(123)
    for _ in range(200):
        nodes = rng.choice(100, size=rng.integers(1, 12), replace=False)
        stakes = {int(n): float(rng.integers(0, 5)) for n in nodes}
        winner = pos_select(stakes, eligible=set(stakes))
        best = max(stakes.values())
        assert stakes[winner] == best
        assert winner == min(n for n, s in stakes.items() if s == best)


def test_pos_empty_eligible_is_an_error():
    with pytest.raises(EmptyCandidateError):
        pos_select({1: 2.0}, eligible=set())
