"""Append-only chain of hash-commitment transactions and global models.

Local training nodes commit a SHA-256 digest of each update before
transmitting it; the round's producer packages those commitments plus
the aggregated global model into a block. Only digests of local models
go on-chain, the full global model is stored in the block itself.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .pipeline import (
    DIGEST_SIZE,
    HEADER,
    MAGIC,
    ModelParams,
    canonical_serialize,
    hash_digest,
)

GENESIS_PREV_HASH = bytes(DIGEST_SIZE)

_HEX_RE = re.compile(r"^[0-9a-f]*$")


class LedgerError(Exception):
    """Base error for chain construction."""


class UnauthorizedProducerError(LedgerError):
    """Block producer is not in the authorized packaging set for the round."""


# ---------------------------------------------------------------------------
# Transactions and the mempool
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HashTransaction:
    """On-chain commitment: digest of one node's update for one round."""

    sender: int
    round: int
    model_digest: bytes


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    reason: Optional[str] = None


class Mempool:
    """Pending commitments, shared by all packaging nodes in the simulation.

    At most one transaction per (sender, round) is ever accepted, even
    after the original has been packaged into a block.
    """

    def __init__(self):
        self._pending: dict[tuple[int, int], HashTransaction] = {}
        self._seen: set[tuple[int, int]] = set()

    def submit(self, tx: HashTransaction) -> SubmitResult:
        if not isinstance(tx.sender, int) or isinstance(tx.sender, bool) or tx.sender < 0:
            return SubmitResult(False, "malformed")
        if not isinstance(tx.round, int) or isinstance(tx.round, bool) or tx.round < 0:
            return SubmitResult(False, "malformed")
        if len(tx.model_digest) != DIGEST_SIZE:
            return SubmitResult(False, "malformed")
        key = (tx.sender, tx.round)
        if key in self._seen:
            return SubmitResult(False, "duplicate")
        self._seen.add(key)
        self._pending[key] = tx
        return SubmitResult(True)

    def lookup_commitment(self, sender: int, round: int) -> Optional[bytes]:
        tx = self._pending.get((sender, round))
        return tx.model_digest if tx else None

    def pending_for_round(self, round: int) -> list[HashTransaction]:
        txs = [tx for (_, r), tx in self._pending.items() if r == round]
        return sorted(txs, key=lambda tx: tx.sender)

    def take_round(self, round: int) -> list[HashTransaction]:
        """Remove and return this round's transactions in sender order."""
        txs = self.pending_for_round(round)
        for tx in txs:
            del self._pending[(tx.sender, tx.round)]
        return txs

    def __len__(self) -> int:
        return len(self._pending)


def submit_hash_tx(mempool: Mempool, tx: HashTransaction) -> SubmitResult:
    return mempool.submit(tx)


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    """One chain record. global_model is None for blocks read back from export."""

    height: int
    round: int
    prev_hash: bytes
    producer: int
    transactions: tuple[HashTransaction, ...]
    global_model: Optional[ModelParams]
    global_model_bytes: bytes
    block_hash: bytes


def encode_block_payload(
    height: int,
    round: int,
    prev_hash: bytes,
    producer: int,
    transactions: Sequence[HashTransaction],
    global_model_bytes: bytes,
) -> bytes:
    """Canonical block encoding hashed into block_hash (block_hash excluded)."""
    parts = [
        height.to_bytes(8, "little"),
        round.to_bytes(8, "little"),
        prev_hash,
        producer.to_bytes(8, "little"),
        len(transactions).to_bytes(4, "little"),
    ]
    for tx in transactions:
        parts.append(tx.sender.to_bytes(8, "little"))
        parts.append(tx.round.to_bytes(8, "little"))
        parts.append(tx.model_digest)
    parts.append(len(global_model_bytes).to_bytes(8, "little"))
    parts.append(global_model_bytes)
    return b"".join(parts)


def _payload_of(block: Block) -> bytes:
    return encode_block_payload(
        block.height,
        block.round,
        block.prev_hash,
        block.producer,
        block.transactions,
        block.global_model_bytes,
    )


def make_genesis(global_model: ModelParams) -> Block:
    """Height-0 block carrying the randomly initialized global model."""
    model_bytes = canonical_serialize(global_model)
    payload = encode_block_payload(0, 0, GENESIS_PREV_HASH, 0, (), model_bytes)
    return Block(
        height=0,
        round=0,
        prev_hash=GENESIS_PREV_HASH,
        producer=0,
        transactions=(),
        global_model=global_model,
        global_model_bytes=model_bytes,
        block_hash=hash_digest(payload),
    )


def package_block(
    mempool: Mempool,
    global_model: ModelParams,
    producer: int,
    round: int,
    parent: Block,
    authorized: Iterable[int],
) -> Block:
    """Package this round's commitments and the aggregated model into a block.

    Transactions are ordered by ascending sender id so every node packaging
    the same mempool state produces an identical block hash. The packaged
    transactions are removed from the mempool.
    """
    if producer not in set(authorized):
        raise UnauthorizedProducerError(
            f"node {producer} is not authorized to package round {round}"
        )
    txs = tuple(mempool.take_round(round))
    model_bytes = canonical_serialize(global_model)
    height = parent.height + 1
    payload = encode_block_payload(
        height, round, parent.block_hash, producer, txs, model_bytes
    )
    return Block(
        height=height,
        round=round,
        prev_hash=parent.block_hash,
        producer=producer,
        transactions=txs,
        global_model=global_model,
        global_model_bytes=model_bytes,
        block_hash=hash_digest(payload),
    )


# ---------------------------------------------------------------------------
# The chain
# ---------------------------------------------------------------------------

class Chain:
    def __init__(self, genesis: Block):
        if genesis.height != 0 or genesis.prev_hash != GENESIS_PREV_HASH:
            raise LedgerError("genesis must have height 0 and all-zero prev_hash")
        self._blocks: list[Block] = [genesis]
        self._commitments: dict[tuple[int, int], bytes] = {}

    @property
    def blocks(self) -> list[Block]:
        return list(self._blocks)

    @property
    def tip(self) -> Block:
        return self._blocks[-1]

    def __len__(self) -> int:
        return len(self._blocks)

    def append(self, block: Block) -> None:
        tip = self.tip
        if block.height != tip.height + 1:
            raise LedgerError(f"expected height {tip.height + 1}, got {block.height}")
        if block.prev_hash != tip.block_hash:
            raise LedgerError("block does not link to the current tip")
        if block.block_hash != hash_digest(_payload_of(block)):
            raise LedgerError("block hash does not match block contents")
        self._blocks.append(block)
        for tx in block.transactions:
            self._commitments[(tx.sender, tx.round)] = tx.model_digest

    def lookup_commitment(self, sender: int, round: int) -> Optional[bytes]:
        return self._commitments.get((sender, round))

    def latest_global_model(self) -> ModelParams:
        model = self.tip.global_model
        if model is None:
            raise LedgerError("tip block has no in-memory global model")
        return model


def _check_model_bytes(data: bytes) -> bool:
    if len(data) < HEADER.size:
        return False
    magic, _layout, count = HEADER.unpack_from(data)
    return magic == MAGIC and len(data) == HEADER.size + 8 * count


def verify_chain(chain: "Chain | Sequence[Block]") -> Optional[int]:
    """Re-check every hash, link, and ordering rule.

    Returns None if the chain verifies end-to-end, otherwise the height of
    the first failing block.
    """
    blocks = chain.blocks if isinstance(chain, Chain) else list(chain)
    if not blocks:
        return 0
    seen_commitments: set[tuple[int, int]] = set()
    for i, block in enumerate(blocks):
        if block.height != i:
            return i
        if i == 0:
            if block.prev_hash != GENESIS_PREV_HASH:
                return i
        elif block.prev_hash != blocks[i - 1].block_hash:
            return i
        senders = [tx.sender for tx in block.transactions]
        if senders != sorted(set(senders)):
            return i
        ok_txs = all(
            len(tx.model_digest) == DIGEST_SIZE and tx.round == block.round
            for tx in block.transactions
        )
        if not ok_txs:
            return i
        pairs = {(tx.sender, tx.round) for tx in block.transactions}
        if pairs & seen_commitments:
            return i
        seen_commitments |= pairs
        if not _check_model_bytes(block.global_model_bytes):
            return i
        if block.block_hash != hash_digest(_payload_of(block)):
            return i
    return None


# ---------------------------------------------------------------------------
# Flat-file export: one JSON object per block per line
# ---------------------------------------------------------------------------

_BLOCK_KEYS = {
    "height",
    "round",
    "producer",
    "prev_hash",
    "block_hash",
    "transactions",
    "global_model",
}
_TX_KEYS = {"sender", "round", "digest"}


def block_to_json_line(block: Block) -> str:
    record = {
        "height": block.height,
        "round": block.round,
        "producer": block.producer,
        "prev_hash": block.prev_hash.hex(),
        "block_hash": block.block_hash.hex(),
        "transactions": [
            {"sender": tx.sender, "round": tx.round, "digest": tx.model_digest.hex()}
            for tx in block.transactions
        ],
        "global_model": block.global_model_bytes.hex(),
    }
    return json.dumps(record, separators=(",", ":"))


def export_chain(chain: "Chain | Sequence[Block]") -> bytes:
    blocks = chain.blocks if isinstance(chain, Chain) else list(chain)
    return "".join(block_to_json_line(b) + "\n" for b in blocks).encode("ascii")


def _int_field(obj: dict, key: str) -> int:
    value = obj[key]
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise ValueError(f"field {key} must be a non-negative integer")
    return value


def _hex_field(obj: dict, key: str, exact_bytes: Optional[int] = None) -> bytes:
    value = obj[key]
    if not isinstance(value, str) or len(value) % 2 or not _HEX_RE.match(value):
        raise ValueError(f"field {key} must be lowercase hex")
    raw = bytes.fromhex(value)
    if exact_bytes is not None and len(raw) != exact_bytes:
        raise ValueError(f"field {key} must encode {exact_bytes} bytes")
    return raw


def _parse_block_line(line: bytes, height: int) -> Block:
    obj = json.loads(line.decode("utf-8"))
    if not isinstance(obj, dict) or set(obj) != _BLOCK_KEYS:
        raise ValueError("unexpected block record shape")
    txs = []
    if not isinstance(obj["transactions"], list):
        raise ValueError("transactions must be a list")
    for tx_obj in obj["transactions"]:
        if not isinstance(tx_obj, dict) or set(tx_obj) != _TX_KEYS:
            raise ValueError("unexpected transaction record shape")
        txs.append(
            HashTransaction(
                sender=_int_field(tx_obj, "sender"),
                round=_int_field(tx_obj, "round"),
                model_digest=_hex_field(tx_obj, "digest", DIGEST_SIZE),
            )
        )
    parsed_height = _int_field(obj, "height")
    if parsed_height != height:
        raise ValueError(f"line {height} declares height {parsed_height}")
    return Block(
        height=parsed_height,
        round=_int_field(obj, "round"),
        prev_hash=_hex_field(obj, "prev_hash", DIGEST_SIZE),
        producer=_int_field(obj, "producer"),
        transactions=tuple(txs),
        global_model=None,
        global_model_bytes=_hex_field(obj, "global_model"),
        block_hash=_hex_field(obj, "block_hash", DIGEST_SIZE),
    )


def verify_chain_export(data: bytes) -> Optional[int]:
    """Verify an exported chain; returns None or the first bad block height.

    A line that fails to parse names its own height, so any single-byte
    mutation of the export is attributed to the block it landed in.
    """
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    blocks: list[Block] = []
    for i, line in enumerate(lines):
        try:
            blocks.append(_parse_block_line(line, i))
        except (ValueError, UnicodeDecodeError, KeyError, TypeError):
            return i
    return verify_chain(blocks)
