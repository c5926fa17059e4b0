"""Virtual-time network model.

Nodes get a configured link speed and a per-node transmission delay drawn
once at setup; a transfer of S bytes between two nodes then costs
``S / min(speed_a, speed_b)`` plus the endpoint delays. Nothing ever
sleeps: delays are computed and recorded in virtual time only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .consensus import NodeNetProfile
from .rng import generator_for

MIN_DELAY_S = 1e-6  # zero delays would blow up the 1/TD consensus term


class NetworkError(Exception):
    pass


@dataclass(frozen=True)
class TopologyConfig:
    total_nodes: int = 20
    lt_ids: tuple[int, ...] = (1, 3, 5, 7, 9, 11, 13, 15, 17, 18, 19, 20)
    base_speed: float = 70_000.0  # bytes/second
    speed_step: float = 7_000.0
    td_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.total_nodes < 1:
            raise ValueError("need at least one node")
        if self.base_speed <= 0 or self.speed_step <= 0:
            raise ValueError("link speeds must be positive")
        lo, hi = self.td_range
        if lo < 0 or hi < lo:
            raise ValueError("delay range must satisfy 0 <= lo <= hi")
        bad = [n for n in self.lt_ids if not 1 <= n <= self.total_nodes]
        if bad:
            raise ValueError(f"training node ids out of range: {bad}")


@dataclass(frozen=True)
class TransferRecord:
    round: int
    sender: int
    receiver: int
    payload_bytes: int
    delay_s: float


def build_profiles(cfg: TopologyConfig) -> list[NodeNetProfile]:
    """Link speed grows linearly with node id; delays are drawn once per node."""
    rng = generator_for(cfg.seed, "topology")
    lo, hi = cfg.td_range
    delays = rng.uniform(lo, hi, size=cfg.total_nodes)
    profiles = []
    for node in range(1, cfg.total_nodes + 1):
        td = max(float(delays[node - 1]), MIN_DELAY_S)
        profiles.append(
            NodeNetProfile(
                node=node,
                link_speed_d=cfg.base_speed + cfg.speed_step * node,
                delay_td=td,
            )
        )
    return profiles


def transfer_time(
    sender: NodeNetProfile,
    receiver: NodeNetProfile,
    payload_bytes: int,
    include_receiver_td: bool = True,
) -> float:
    """Seconds to move payload_bytes from sender to receiver.

    The transfer runs at the slower endpoint's link speed; endpoint delays
    are added on top (the receiver's can be switched off).
    """
    if payload_bytes < 0:
        raise ValueError("payload size must be non-negative")
    speed = min(sender.link_speed_d, receiver.link_speed_d)
    delay = payload_bytes / speed + sender.delay_td
    if include_receiver_td:
        delay += receiver.delay_td
    return delay


def round_delays(
    lt_set: Iterable[int],
    pa: int,
    profiles: Sequence[NodeNetProfile],
    payload_map: Mapping[int, int],
    round: int = 0,
    include_receiver_td: bool = True,
) -> list[TransferRecord]:
    """One record per transmitting training node, in sender-id order.

    Nodes without an entry in payload_map did not transmit this round and
    produce no record.
    """
    by_node = {p.node: p for p in profiles}
    try:
        receiver = by_node[pa]
    except KeyError:
        raise NetworkError(f"unknown receiver node {pa}") from None
    records = []
    for sender in sorted(lt_set):
        if sender not in by_node:
            raise NetworkError(f"unknown sender node {sender}")
        if sender not in payload_map:
            continue
        payload = payload_map[sender]
        records.append(
            TransferRecord(
                round=round,
                sender=sender,
                receiver=pa,
                payload_bytes=payload,
                delay_s=transfer_time(
                    by_node[sender], receiver, payload, include_receiver_td
                ),
            )
        )
    return records
