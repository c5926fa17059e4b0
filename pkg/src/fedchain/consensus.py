"""Package-node selection.

The weighted-link-speed rule scores each candidate as
``upsilon * link_speed + phi * (1 / transmission_delay)`` and admits the
top tau non-training nodes to the packaging list; producers rotate
through that list round-robin starting from the highest score. A
stake-based selector is provided as the comparison baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence


class ConsensusError(Exception):
    pass


class InvalidProfileError(ConsensusError):
    pass


class EmptyCandidateError(ConsensusError):
    pass


@dataclass(frozen=True)
class NodeNetProfile:
    """Per-node network characteristics feeding the selection rule."""

    node: int
    link_speed_d: float  # bytes/second
    delay_td: float  # seconds

    def __post_init__(self):
        if self.link_speed_d <= 0:
            raise InvalidProfileError(f"node {self.node}: link speed must be positive")
        if self.delay_td <= 0:
            raise InvalidProfileError(f"node {self.node}: delay must be positive")


@dataclass(frozen=True)
class PowlsConfig:
    upsilon: float = 1.0
    phi: float = 100.0
    tau: int = 3

    def __post_init__(self):
        if self.upsilon < 0 or self.phi < 0:
            raise ValueError("weights must be non-negative")
        if self.upsilon == 0 and self.phi == 0:
            raise ValueError("at least one weight must be positive")
        if self.tau < 1:
            raise ValueError("tau must be at least 1")


@dataclass(frozen=True)
class PackageList:
    """Packaging nodes in descending score order."""

    members: tuple[int, ...]
    round_assigned: int = 0


def weighted_value(p: NodeNetProfile, cfg: PowlsConfig) -> float:
    if p.delay_td <= 0:
        raise InvalidProfileError(f"node {p.node}: delay must be positive")
    return cfg.upsilon * p.link_speed_d + cfg.phi * (1.0 / p.delay_td)


def select_package_nodes(
    profiles: Sequence[NodeNetProfile],
    lt_nodes: Iterable[int],
    cfg: PowlsConfig,
    round_assigned: int = 0,
) -> PackageList:
    """Pick the tau highest-scoring non-training nodes.

    Ties are broken by higher link speed, then lower delay, then lower
    node id, so the selection is a total order.
    """
    lt = set(lt_nodes)
    eligible = [p for p in profiles if p.node not in lt]
    if not eligible:
        raise EmptyCandidateError("no eligible packaging candidates")
    ranked = sorted(
        eligible,
        key=lambda p: (-weighted_value(p, cfg), -p.link_speed_d, p.delay_td, p.node),
    )
    members = tuple(p.node for p in ranked[: cfg.tau])
    return PackageList(members=members, round_assigned=round_assigned)


def producer_for_round(plist: PackageList, round: int) -> int:
    """Round-robin over the package list, starting at the top-scored node."""
    if not plist.members:
        raise EmptyCandidateError("package list is empty")
    return plist.members[(round - plist.round_assigned) % len(plist.members)]


def pos_select(stakes: Mapping[int, float], eligible: Iterable[int]) -> int:
    """Stake baseline: the eligible node with the most stake, lowest id on ties."""
    candidates = sorted(eligible)
    if not candidates:
        raise EmptyCandidateError("no eligible stake candidates")
    return max(candidates, key=lambda n: (stakes.get(n, 0.0), -n))
