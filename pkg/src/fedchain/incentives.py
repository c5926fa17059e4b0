"""Credit scores and token rewards.

Nodes whose updates land in ALMG earn credit, ULMG members lose it, and
scores stay clamped to [0, 100]. A fixed token pool is split each round
in proportion to each contributor's accuracy gain over the previous
global model, shifted by the accuracy tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

CR_MIN = 0.0
CR_MAX = 100.0


class IncentiveError(Exception):
    pass


@dataclass(frozen=True)
class CreditConfig:
    threshold: float = 50.0  # transmit freely at or above this score
    reward: float = 5.0
    penalty: float = -5.0
    kappa: int = 0  # gated nodes transmit every kappa rounds; 0 = no gating

    def __post_init__(self):
        if self.reward < 0:
            raise ValueError("credit reward must be non-negative")
        if self.penalty > 0:
            raise ValueError("credit penalty must be non-positive")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")


class CreditLedger:
    """Per-node credit score, clamped to [0, 100]."""

    def __init__(self, nodes: Iterable[int], cfg: CreditConfig, initial: float = 100.0):
        if not CR_MIN <= initial <= CR_MAX:
            raise ValueError(f"initial credit must lie in [{CR_MIN}, {CR_MAX}]")
        self.cfg = cfg
        self.scores: dict[int, float] = {n: float(initial) for n in nodes}

    def __getitem__(self, node: int) -> float:
        return self.scores[node]

    def update_credit(self, almg: Iterable[int], ulmg: Iterable[int]) -> None:
        """Reward ALMG members, penalize ULMG members, leave the rest alone."""
        almg, ulmg = set(almg), set(ulmg)
        overlap = almg & ulmg
        if overlap:
            raise IncentiveError(f"nodes in both ALMG and ULMG: {sorted(overlap)}")
        for node in almg:
            self.scores[node] = min(CR_MAX, self.scores[node] + self.cfg.reward)
        for node in ulmg:
            self.scores[node] = max(CR_MIN, self.scores[node] + self.cfg.penalty)


def update_credit(ledger: CreditLedger, almg: Iterable[int], ulmg: Iterable[int]) -> CreditLedger:
    ledger.update_credit(almg, ulmg)
    return ledger


@dataclass(frozen=True)
class ExScore:
    """A node's local accuracy minus the previous round's global accuracy."""

    node: int
    ex: float

    def __post_init__(self):
        if not -1.0 <= self.ex <= 1.0:
            raise ValueError("accuracy difference must lie in [-1, 1]")


def token_rewards(
    scores: Sequence[ExScore], t_acc: float, tr_total: float
) -> dict[int, float]:
    """Split tr_total in proportion to max(0, ex + t_acc).

    Negative shifted terms are clamped to zero so payouts are never
    negative; if everything clamps to zero the pool is split equally.
    The payouts always sum to tr_total.
    """
    if not scores:
        raise IncentiveError("no contribution scores to reward")
    terms = [max(0.0, s.ex + t_acc) for s in scores]
    total = sum(terms)
    if total == 0.0:
        share = tr_total / len(scores)
        return {s.node: share for s in scores}
    return {s.node: (term / total) * tr_total for s, term in zip(scores, terms)}


class StakeLedger:
    """Cumulative token balances; rewards only, stakes never decrease."""

    def __init__(self, nodes: Iterable[int], tr_total: float = 20.0, initial: float = 0.0):
        if initial < 0:
            raise ValueError("initial stake must be non-negative")
        self.tr_total = tr_total
        self.balances: dict[int, float] = {n: float(initial) for n in nodes}

    def __getitem__(self, node: int) -> float:
        return self.balances[node]

    def apply_rewards(self, payouts: Mapping[int, float]) -> None:
        for node, amount in payouts.items():
            if amount < 0:
                raise IncentiveError(f"negative payout for node {node}")
            self.balances[node] = self.balances.get(node, 0.0) + amount

    def total(self) -> float:
        return sum(self.balances.values())
