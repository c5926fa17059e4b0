"""Blockchain-anchored federated learning simulator.

Encrypted local-update transport with on-chain digest commitments,
weighted-link-speed selection of packaging nodes (with a stake baseline),
a virtual-time network delay model, and a credit/token incentive layer,
driven by a deterministic seeded experiment runner.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .consensus import (
    NodeNetProfile,
    PackageList,
    PowlsConfig,
    pos_select,
    producer_for_round,
    select_package_nodes,
    weighted_value,
)
from .fl import (
    ALMG,
    ULMG,
    TrainerSpec,
    classify_update,
    fed_avg,
    local_train,
    may_transmit,
    verify_and_collect,
)
from .incentives import CreditLedger, ExScore, StakeLedger, token_rewards
from .ledger import (
    Block,
    Chain,
    HashTransaction,
    Mempool,
    export_chain,
    make_genesis,
    package_block,
    verify_chain,
    verify_chain_export,
)
from .netsim import TopologyConfig, TransferRecord, build_profiles, round_delays, transfer_time
from .pipeline import (
    KeyPair,
    ModelParams,
    SealedUpdate,
    canonical_deserialize,
    canonical_serialize,
    compress,
    decompress,
    generate_keypair,
    hash_digest,
    open_update,
    register_layout,
    seal_update,
)
from .runner import Experiment, ExperimentResult, RoundReport, assign_roles, run_experiment
