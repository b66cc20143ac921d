"""Deterministic federated-learning simulation lab.

FedLion (sign-momentum local updates with an integer-valued, bit-packable
uplink) next to FedAvg and momentum-averaging baselines, with exact
communication accounting and convergence analyzers.
"""

from .algorithms import (
    ALGORITHMS,
    ClientUpdate,
    FederatedConfig,
    GlobalState,
    RunResult,
    fedavg_client_round,
    fedlion_client_round,
    fedlion_server_step,
    mfl_client_round,
    run_federation,
    sample_clients,
    server_step,
)
from .codec import (
    CommsAccount,
    DeltaVector,
    HistogramReport,
    UplinkPacket,
    account_round,
    bit_width,
    decode_delta,
    delta_histogram,
    encode_delta,
)
from .data import (
    ClientShard,
    ProblemSpec,
    dirichlet_partition,
    load_csv_dataset,
    next_minibatch,
)
from .errors import (
    CodecError,
    ConfigError,
    FedSimError,
    NumericError,
    PartitionError,
    ShapeError,
)
from .metrics import (
    DensityReport,
    HeterogeneityReport,
    RateFit,
    RoundRecord,
    emit_metrics,
    estimate_alpha,
    fit_rate,
    gradient_density,
    read_metrics,
)
from .models import ModelArch, grad, init_params, load_checkpoint, loss, save_checkpoint
from .plan import ExperimentPlan, build_problem, load_plan, run_plan
from .problems import (
    DatasetProblem,
    QuadraticProblem,
    make_classification_federation,
    make_csv_federation,
    make_quadratic_federation,
)
from .vectors import ParamVector, l1_norm, l2_norm, lerp, mean_reduce, sign

__version__ = "0.1.0"
