"""End-to-end experiment orchestration over virtual time.

Each round: eligible training nodes produce local updates, commit their
digests to the mempool, and seal the updates for the round's producer;
the network model prices every transfer; the producer opens, digest-
verifies, and classifies the updates, aggregates the usable ones, and
packages the block; credit and token ledgers are settled. Every random
draw descends from the experiment seed, so runs are reproducible down to
the output bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import POWLS, ConfigError, ExperimentConfig, FaultConfig
from .consensus import (
    PackageList,
    pos_select,
    producer_for_round,
    select_package_nodes,
)
from .fl import (
    SYNTHETIC,
    DatasetEvaluator,
    FederatedData,
    ScriptedEvaluator,
    SyntheticAccuracyModel,
    TrainerSpec,
    evaluate_accuracy,
    fed_avg,
    generate_federated_data,
    local_train,
    may_transmit,
    verify_and_collect,
)
from .incentives import CreditLedger, ExScore, StakeLedger, token_rewards
from .ledger import (
    Chain,
    HashTransaction,
    Mempool,
    export_chain,
    make_genesis,
    package_block,
    verify_chain,
)
from .netsim import TransferRecord, build_profiles, round_delays
from .pipeline import (
    AuthenticationError,
    DecompressionError,
    KeyUnwrapError,
    MalformedInputError,
    ModelParams,
    SealedUpdate,
    canonical_deserialize,
    canonical_serialize,
    generate_keypair,
    hash_digest,
    open_update,
    register_layout,
    seal_update,
)
from .rng import derive_seed, generator_for

TAMPER_TARGETS = ("ciphertext", "nonce", "wrapped_key", "params")

_INITIAL_SYNTHETIC_ACC = 0.5  # untrained-model baseline for scripted runs


class RunnerError(Exception):
    pass


# ---------------------------------------------------------------------------
# Fault injection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FaultPlan:
    """In-transit adversary: bit flips and dropped transfers."""

    tamper: dict[tuple[int, int], str]  # (round, sender) -> target field
    drop: frozenset[tuple[int, int]]

    @classmethod
    def from_config(cls, fc: FaultConfig) -> "FaultPlan":
        tamper: dict[tuple[int, int], str] = {}
        for entry in fc.tamper:
            parts = entry.split(":")
            if len(parts) == 2:
                parts.append("ciphertext")
            if len(parts) != 3 or parts[2] not in TAMPER_TARGETS:
                raise ConfigError(f"bad tamper entry {entry!r}")
            tamper[(int(parts[0]), int(parts[1]))] = parts[2]
        drop = set()
        for entry in fc.drop:
            parts = entry.split(":")
            if len(parts) != 2:
                raise ConfigError(f"bad drop entry {entry!r}")
            drop.add((int(parts[0]), int(parts[1])))
        return cls(tamper=tamper, drop=frozenset(drop))


def flip_bit(data: bytes, bit: int) -> bytes:
    out = bytearray(data)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def tamper_sealed(sealed: SealedUpdate, target: str, bit_seed: int) -> SealedUpdate:
    """Flip one pseudo-random bit in the chosen wire field."""
    if target not in ("ciphertext", "nonce", "wrapped_key"):
        raise ValueError(f"cannot tamper field {target!r} on the wire")
    blob = getattr(sealed, target)
    bit = derive_seed(bit_seed, "tamper-bit", target) % (len(blob) * 8)
    return dataclasses.replace(sealed, **{target: flip_bit(blob, bit)})


# ---------------------------------------------------------------------------
# Role assignment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoleAssignment:
    lt: tuple[int, ...]
    package_list: PackageList
    bp: tuple[int, ...]


def assign_roles(cfg: ExperimentConfig, profiles) -> RoleAssignment:
    """Training nodes come from config; packagers are selected, the rest relay."""
    lt = tuple(sorted(cfg.topology.lt_ids))
    non_lt = [p.node for p in profiles if p.node not in set(lt)]
    if cfg.powls.tau > len(non_lt):
        raise ConfigError("not enough non-training nodes for the package list")
    plist = select_package_nodes(profiles, lt, cfg.powls, round_assigned=1)
    bp = tuple(sorted(set(non_lt) - set(plist.members)))
    return RoleAssignment(lt=lt, package_list=plist, bp=bp)


# ---------------------------------------------------------------------------
# Round bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoundReport:
    round: int
    producer: int
    transfers: tuple[TransferRecord, ...]
    almg: tuple[int, ...]
    ulmg: tuple[int, ...]
    rejected: tuple[tuple[int, str], ...]
    global_accuracy: float
    round_time_s: float
    block_hash: bytes


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    out_dir: Optional[Path]
    reports: list[RoundReport]
    chain: Chain
    final_global_accuracy: float
    files: dict[str, Path]


# ---------------------------------------------------------------------------
# The experiment
# ---------------------------------------------------------------------------

class Experiment:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.seed = cfg.seed
        topo = dataclasses.replace(cfg.topology, seed=derive_seed(cfg.seed, "topology"))
        self.profiles = build_profiles(topo)
        self.profile_by_node = {p.node: p for p in self.profiles}
        self.roles = assign_roles(cfg, self.profiles)
        self.lt = list(self.roles.lt)
        self.non_lt = sorted(set(self.profile_by_node) - set(self.lt))
        self.package_list = self.roles.package_list

        self.node_keys = {
            node: generate_keypair(derive_seed(cfg.seed, "node-key", node), owner=node)
            for node in self.non_lt
        }

        self.fed_data: Optional[FederatedData] = None
        if cfg.trainer.kind == SYNTHETIC:
            length = cfg.trainer.params_length
            script = SyntheticAccuracyModel(
                base=cfg.trainer.accuracy_base,
                jitter=cfg.trainer.accuracy_jitter,
                node_accuracy=dict(cfg.trainer.node_accuracy),
                seed=derive_seed(cfg.seed, "accuracy"),
            )
            self.pa_evaluator = ScriptedEvaluator(script)
            partitions = None
            self.prev_acc_self = _INITIAL_SYNTHETIC_ACC
            self.prev_acc_test = _INITIAL_SYNTHETIC_ACC
        else:
            self.fed_data = generate_federated_data(
                self.lt, cfg.data, derive_seed(cfg.seed, "data")
            )
            self.pa_evaluator = DatasetEvaluator(self.fed_data.pa_eval)
            partitions = self.fed_data.partitions
            length = cfg.data.dim + 1

        self.layout_id = length
        register_layout(self.layout_id, length)
        self.trainer_spec = TrainerSpec(
            kind=cfg.trainer.kind,
            local_epochs=cfg.trainer.local_epochs,
            learning_rate=cfg.trainer.learning_rate,
            batch_size=cfg.trainer.batch_size,
            data_partition=partitions,
            perturbation_scale=cfg.trainer.perturbation_scale,
        )

        init_rng = generator_for(cfg.seed, "genesis")
        self.global_model = ModelParams(
            init_rng.normal(0.0, 0.1, size=length), self.layout_id
        )
        if self.fed_data is not None:
            self.prev_acc_self = evaluate_accuracy(self.global_model, self.fed_data.pa_eval)
            self.prev_acc_test = evaluate_accuracy(self.global_model, self.fed_data.global_test)

        self.chain = Chain(make_genesis(self.global_model))
        self.mempool = Mempool()
        self.credit = CreditLedger(self.lt, cfg.credit)
        self.stakes = StakeLedger(self.lt, tr_total=cfg.incentive.tr_total)
        self.faults = FaultPlan.from_config(cfg.faults)
        self.train_seed = derive_seed(cfg.seed, "training")
        self.reports: list[RoundReport] = []

        self.delay_rows: list[list] = []
        self.accuracy_rows: list[list] = []
        self.credit_rows: list[list] = []

    # -- consensus ---------------------------------------------------------

    def _producer_for(self, round: int) -> tuple[int, set[int]]:
        if self.cfg.consensus == POWLS:
            every = self.cfg.reselect_every
            if every > 0 and round > 1 and (round - 1) % every == 0:
                self.package_list = select_package_nodes(
                    self.profiles, self.lt, self.cfg.powls, round_assigned=round
                )
            producer = producer_for_round(self.package_list, round)
            return producer, set(self.package_list.members)
        producer = pos_select(self.stakes.balances, self.non_lt)
        return producer, {producer}

    # -- one full round ------------------------------------------------------

    def run_round(self, round: int) -> RoundReport:
        cfg = self.cfg
        producer, authorized = self._producer_for(round)
        producer_keys = self.node_keys[producer]

        transmitted: dict[int, bool] = {n: False for n in self.lt}
        sealed_updates: list[SealedUpdate] = []
        for node in self.lt:
            if not may_transmit(node, round, self.credit[node], cfg.credit):
                continue
            transmitted[node] = True
            params = local_train(
                self.global_model, self.trainer_spec, node, round, self.train_seed
            )
            digest = hash_digest(canonical_serialize(params))
            result = self.mempool.submit(HashTransaction(node, round, digest))
            if not result.accepted:
                raise RunnerError(
                    f"round {round}: commitment from node {node} rejected "
                    f"({result.reason})"
                )
            sealed_updates.append(
                seal_update(
                    params,
                    node,
                    round,
                    producer_keys.public_key,
                    derive_seed(self.seed, "seal", node, round),
                )
            )

        arriving: list[SealedUpdate] = []
        for sealed in sealed_updates:
            key = (round, sealed.sender)
            if key in self.faults.drop:
                continue
            target = self.faults.tamper.get(key)
            if target in ("ciphertext", "nonce", "wrapped_key"):
                sealed = tamper_sealed(
                    sealed, target, derive_seed(self.seed, "fault", round, sealed.sender)
                )
            arriving.append(sealed)

        payload_map = {
            s.sender: (cfg.network.payload_override or s.payload_bytes)
            for s in arriving
        }
        transfers = round_delays(
            self.lt,
            producer,
            self.profiles,
            payload_map,
            round=round,
            include_receiver_td=cfg.network.include_receiver_td,
        )

        opened: list[tuple[int, ModelParams]] = []
        open_failures: list[tuple[int, str]] = []
        for sealed in arriving:
            try:
                params, _digest = open_update(sealed, producer_keys.secret_key)
            except KeyUnwrapError:
                open_failures.append((sealed.sender, "unwrap-failure"))
                continue
            except AuthenticationError:
                open_failures.append((sealed.sender, "auth-failure"))
                continue
            except DecompressionError:
                open_failures.append((sealed.sender, "decompression-failure"))
                continue
            except MalformedInputError:
                open_failures.append((sealed.sender, "deserialization-failure"))
                continue
            if self.faults.tamper.get((round, sealed.sender)) == "params":
                mutated = self._tamper_params(params, round, sealed.sender)
                if mutated is None:
                    open_failures.append((sealed.sender, "deserialization-failure"))
                    continue
                params = mutated
            opened.append((sealed.sender, params))

        almg, ulmg, rejected = verify_and_collect(
            opened,
            self.mempool,
            round,
            self.prev_acc_self,
            cfg.incentive.t_acc,
            self.pa_evaluator,
        )
        all_rejected = sorted(open_failures + [(r.sender, r.reason) for r in rejected])

        if almg:
            new_global = fed_avg([v.params for v in almg])
        else:
            new_global = self.global_model  # nothing usable arrived; carry forward

        block = package_block(
            self.mempool, new_global, producer, round, self.chain.tip, authorized
        )
        self.chain.append(block)
        self.global_model = new_global

        almg_nodes = {v.sender for v in almg}
        ulmg_nodes = {v.sender for v in ulmg}
        self.credit.update_credit(almg_nodes, ulmg_nodes)

        verified = sorted(almg + ulmg, key=lambda v: v.sender)
        scores = [
            ExScore(v.sender, self._contribution(v.params, v.classification))
            for v in verified
        ]
        if scores:
            payouts = token_rewards(scores, cfg.incentive.t_acc, cfg.incentive.tr_total)
            self.stakes.apply_rewards(payouts)

        self._advance_accuracy(almg, new_global)

        report = RoundReport(
            round=round,
            producer=producer,
            transfers=tuple(transfers),
            almg=tuple(sorted(almg_nodes)),
            ulmg=tuple(sorted(ulmg_nodes)),
            rejected=tuple(all_rejected),
            global_accuracy=self.prev_acc_test,
            round_time_s=max((t.delay_s for t in transfers), default=0.0),
            block_hash=block.block_hash,
        )
        self.reports.append(report)
        self._record_rows(report, verified, transmitted)
        return report

    def _tamper_params(self, params: ModelParams, round: int, sender: int) -> Optional[ModelParams]:
        """Flip a bit in the recovered serialization (post-decryption attack)."""
        plain = canonical_serialize(params)
        bit = derive_seed(self.seed, "fault-params", round, sender) % (len(plain) * 8)
        try:
            return canonical_deserialize(flip_bit(plain, bit))
        except MalformedInputError:
            return None

    def _contribution(self, params: ModelParams, classification) -> float:
        if self.fed_data is not None:
            measured = evaluate_accuracy(params, self.fed_data.global_test)
        else:
            measured = classification.measured_accuracy
        return max(-1.0, min(1.0, measured - self.prev_acc_test))

    def _advance_accuracy(self, almg, new_global: ModelParams) -> None:
        if self.fed_data is not None:
            self.prev_acc_self = evaluate_accuracy(new_global, self.fed_data.pa_eval)
            self.prev_acc_test = evaluate_accuracy(new_global, self.fed_data.global_test)
        elif almg:
            acc = sum(v.classification.measured_accuracy for v in almg) / len(almg)
            self.prev_acc_self = acc
            self.prev_acc_test = acc

    def _record_rows(self, report: RoundReport, verified, transmitted) -> None:
        for t in report.transfers:
            self.delay_rows.append(
                [t.round, t.sender, t.receiver, t.payload_bytes, t.delay_s, self.cfg.consensus]
            )
        verdicts = {v.sender: v.classification for v in verified}
        rejected = dict(report.rejected)

        def verdict_label(node):
            if node in verdicts:
                return verdicts[node].verdict
            if node in rejected:
                return "rejected"
            return "dropped" if transmitted[node] else ""

        for node in self.lt:
            if not transmitted[node]:
                continue
            cls = verdicts.get(node)
            measured = cls.measured_accuracy if cls is not None else ""
            self.accuracy_rows.append(
                [report.round, node, "lt", measured, verdict_label(node), report.global_accuracy]
            )
        for node in self.lt:
            self.credit_rows.append(
                [
                    report.round,
                    node,
                    self.credit[node],
                    self.stakes[node],
                    transmitted[node],
                    verdict_label(node),
                ]
            )

    # -- whole experiment ----------------------------------------------------

    def run(self) -> list[RoundReport]:
        for r in range(1, self.cfg.rounds + 1):
            self.run_round(r)
        return self.reports


def _csv_bytes(header: list[str], rows: list[list]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _dataset_array(fed: FederatedData, partitions_order: list[int]) -> np.ndarray:
    """Single reproducible array: feature columns, label, owner tag.

    Owner is the training node id for partition rows, -1 for the PA
    evaluation split, -2 for the global test split.
    """
    chunks = []
    for node in partitions_order:
        part = fed.partitions[node]
        owner = np.full((len(part), 1), float(node))
        chunks.append(np.hstack([part.features, part.labels[:, None], owner]))
    for split, tag in ((fed.pa_eval, -1.0), (fed.global_test, -2.0)):
        owner = np.full((len(split), 1), tag)
        chunks.append(np.hstack([split.features, split.labels[:, None], owner]))
    return np.vstack(chunks)


def run_experiment(cfg: ExperimentConfig, write_outputs: bool = True) -> ExperimentResult:
    """Run all rounds and (optionally) write the metric and chain files."""
    exp = Experiment(cfg)
    reports = exp.run()

    bad = verify_chain(exp.chain)
    if bad is not None:
        raise RunnerError(f"chain verification failed at height {bad}")

    files: dict[str, Path] = {}
    out_dir: Optional[Path] = None
    if write_outputs:
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs: dict[str, bytes] = {
            "delays.csv": _csv_bytes(
                ["round", "sender", "receiver", "payload_bytes", "delay_s", "consensus"],
                exp.delay_rows,
            ),
            "accuracy.csv": _csv_bytes(
                ["round", "node", "role", "measured_acc", "verdict", "global_acc"],
                exp.accuracy_rows,
            ),
            "credit.csv": _csv_bytes(
                ["round", "node", "cr", "stake", "transmitted", "verdict"],
                exp.credit_rows,
            ),
            "chain.jsonl": export_chain(exp.chain),
        }
        manifest = {
            "version": __version__,
            "config": cfg.to_dict(),
            "seed": cfg.seed,
            "files": sorted(outputs) + (["dataset.npy"] if exp.fed_data else []),
            "rounds_completed": len(reports),
            "final_global_accuracy": exp.prev_acc_test,
            "package_list": list(exp.package_list.members),
        }
        outputs["manifest.json"] = (
            json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        ).encode("utf-8")
        for name, blob in outputs.items():
            path = out_dir / name
            path.write_bytes(blob)
            files[name] = path
        if exp.fed_data is not None:
            data_path = out_dir / "dataset.npy"
            np.save(data_path, _dataset_array(exp.fed_data, exp.lt))
            files["dataset.npy"] = data_path

    return ExperimentResult(
        config=cfg,
        out_dir=out_dir,
        reports=reports,
        chain=exp.chain,
        final_global_accuracy=exp.prev_acc_test,
        files=files,
    )
