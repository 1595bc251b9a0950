"""Deterministic simulator for coreset-based federated learning.

Clients hold noisy, non-IID shards of a synthetic dataset; the server
guides each client's coreset selection by broadcasting per-class
validation-gradient rows of the softmax layer, and aggregates the clients'
local updates.  Baselines (fedavg, fedprox, skyline, random and
facility-location coresets) run on the same realized data for paired
comparison, with all compute and traffic metered by deterministic counters.
"""

from .config import (
    DatasetConfig,
    ExperimentConfig,
    ModelConfig,
    SweepSpec,
    parse_config,
)
from .coreset import (
    Coreset,
    SelectionConfig,
    facility_location_select,
    labelwise_omp_select,
    omp_select,
    random_select,
)
from .data import (
    ClientChunk,
    Dataset,
    NoiseSpec,
    dirichlet_partition,
    inject_attribute,
    inject_closed_set,
    inject_open_set,
    load_dataset_csv,
    make_blobs,
    save_dataset_csv,
    split_train_val_test,
)
from .errors import ConfigurationError
from .federation import (
    Algo,
    ClientState,
    CostLedger,
    ServerState,
    TrainingResult,
    aggregate,
    client_update,
    compute_cost_ratio,
    fine_tune_on_server,
    prepare_experiment,
    run_round,
    run_training,
)
from .metrics import (
    RoundMetrics,
    RunManifest,
    coreset_composition,
    evaluate_accuracy,
    read_round_log,
    write_round_log,
    write_summary,
)
from .model import (
    LastLayerGradient,
    ModelSpec,
    ParamVector,
    init_params,
    labelwise_validation_grads,
    loss,
    mean_last_layer_grad,
    per_sample_last_layer_grads,
    sgd_epochs,
)

__version__ = "0.1.0"
