"""The federated protocol engine.

One round: the server samples m of N clients and broadcasts the current
parameters; on refresh rounds (t % K == 0) the gcfl arm additionally
broadcasts per-class validation gradient rows and the sampled clients
re-select their coresets by gradient matching.  Clients train locally for E
epochs on their algorithm's training set (full chunk, clean-only, or
coreset), upload parameter deltas, and the server applies the global-rate
mean.  All compute and traffic is metered in a :class:`CostLedger`.

Scheduling independence: every client draws from a private RNG stream
keyed by (run seed, client id, round), and deltas are aggregated in a
canonical order, so results do not depend on the order clients run in.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from .coreset import (
    Coreset,
    SelectionConfig,
    facility_location_select,
    labelwise_omp_select,
    random_select,
)
from .data import (
    ClientChunk,
    Dataset,
    dirichlet_partition,
    inject_attribute,
    inject_closed_set,
    inject_open_set,
    load_dataset_csv,
    make_blobs,
    round_half_away,
    split_train_val_test,
)
from .errors import ConfigurationError
from .metrics import RoundMetrics, dataset_fingerprint, evaluate_accuracy
from .model import ModelSpec, ParamVector, init_params, labelwise_validation_grads, loss, sgd_epochs
from .seeding import derive_seed, spawn_rng

if TYPE_CHECKING:
    from .config import ExperimentConfig

__all__ = [
    "ALGO_KINDS",
    "CORESET_KINDS",
    "Algo",
    "parse_algo",
    "CostLedger",
    "ServerState",
    "ClientState",
    "TrainingResult",
    "Prepared",
    "prepare_experiment",
    "client_update",
    "aggregate",
    "run_round",
    "run_training",
    "fine_tune_on_server",
    "compute_cost_ratio",
]

ALGO_KINDS = ("gcfl", "fedavg", "fedprox", "skyline", "random", "facility_location")
CORESET_KINDS = ("gcfl", "random", "facility_location")

DEFAULT_FEDPROX_MU = 0.1


@dataclass(frozen=True)
class Algo:
    """An algorithm arm.  ``mu`` is the fedprox proximal coefficient."""

    kind: str
    mu: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ALGO_KINDS:
            raise ConfigurationError(f"algo must be one of {ALGO_KINDS}, got {self.kind!r}")
        if self.mu < 0:
            raise ConfigurationError("fedprox mu must be non-negative")

    @property
    def uses_coreset(self) -> bool:
        return self.kind in CORESET_KINDS

    @property
    def label(self) -> str:
        if self.kind == "fedprox":
            return f"fedprox_mu{self.mu:g}"
        return self.kind


def parse_algo(token: str) -> Algo:
    """Parse an arm token like ``gcfl`` or ``fedprox:0.5``."""
    name, _, arg = token.strip().partition(":")
    name = name.strip()
    if name == "fedprox":
        try:
            mu = float(arg) if arg else DEFAULT_FEDPROX_MU
        except ValueError:
            raise ConfigurationError(f"bad fedprox mu in arm {token!r}") from None
        return Algo("fedprox", mu=mu)
    if arg:
        raise ConfigurationError(f"arm {token!r} does not take an argument")
    return Algo(name)


@dataclass
class CostLedger:
    """Deterministic compute and traffic counters.

    ``per_sample_grad_evals`` counts client-side last-layer gradient
    evaluations spent on coreset selection; server-side validation
    gradients are not client compute and are not metered here.  Broadcast
    and upload counters are in units of real values sent.
    """

    per_sample_grad_evals: int = 0
    sgd_sample_visits: int = 0
    params_broadcast: int = 0
    grads_broadcast: int = 0
    update_uploads: int = 0

    def snapshot(self) -> "CostLedger":
        return replace(self)


@dataclass
class ServerState:
    params: ParamVector
    round: int
    val_set: Dataset
    global_lr: float


@dataclass
class ClientState:
    chunk: ClientChunk
    coreset: Coreset | None
    local_lr: float
    local_epochs: int

    @property
    def client_id(self) -> int:
        return self.chunk.client_id


@dataclass(frozen=True)
class Prepared:
    """One realized (noisy) data world, shared by every arm of a run."""

    chunks: list[ClientChunk]
    val: Dataset
    test: Dataset
    num_classes: int
    input_dim: int
    fingerprint: str


@dataclass
class TrainingResult:
    algo: Algo
    rounds: list[RoundMetrics]
    final_params: ParamVector
    final_accuracy: float
    ledger: CostLedger
    fine_tuned_accuracy: float | None = None


def client_update(
    state: ClientState,
    theta_t: ParamVector,
    train_indices: np.ndarray,
    prox: tuple[float, ParamVector] | None = None,
    *,
    batch_size: int,
    seed: int,
    ledger: CostLedger | None = None,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    cosine_lr: bool = False,
) -> ParamVector:
    """E local epochs from theta_t on the indexed subset; returns the delta
    theta' - theta_t and meters E * |subset| sample visits."""
    idx = np.asarray(train_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("client has no training samples for this round")
    subset = state.chunk.dataset.subset(idx)
    theta_prime = sgd_epochs(
        theta_t,
        subset,
        epochs=state.local_epochs,
        lr=state.local_lr,
        batch_size=batch_size,
        seed=seed,
        prox=prox,
        momentum=momentum,
        weight_decay=weight_decay,
        cosine_lr=cosine_lr,
    )
    if ledger is not None:
        ledger.sgd_sample_visits += state.local_epochs * idx.size
    return theta_t.with_values(theta_prime.values - theta_t.values)


def aggregate(server: ServerState, deltas: list[ParamVector]) -> ParamVector:
    """theta + global_lr * mean(deltas).

    The stacked deltas are summed in a canonical (lexicographic) order so
    the result is bitwise independent of how the caller ordered them.
    """
    if not deltas:
        raise ValueError("aggregate needs at least one delta")
    size = server.params.values.size
    for d in deltas:
        if d.values.size != size:
            raise ValueError("delta length does not match server parameters")
    stack = np.stack([d.values for d in deltas])
    order = np.lexsort(stack.T[::-1])
    mean = stack[order].mean(axis=0)
    return server.params.with_values(server.params.values + server.global_lr * mean)


def _client_budget(chunk: ClientChunk, budget_fraction: float) -> int:
    return round_half_away(budget_fraction * chunk.n)


def _init_coreset(
    algo: Algo, chunk: ClientChunk, budget: int, master_seed: int
) -> Coreset | None:
    """Round-0 coresets: random for gcfl and the random baseline, feature
    driven for facility location.  Zero-budget (tiny) clients stay empty."""
    if not algo.uses_coreset:
        return None
    if budget < 1 or chunk.n == 0:
        return Coreset(np.empty(0, dtype=np.int64), np.empty(0))
    if algo.kind == "facility_location":
        return facility_location_select(chunk, budget)
    seed = derive_seed(master_seed, "coreset0", chunk.client_id)
    return random_select(chunk, budget, seed)


def _training_indices(state: ClientState, algo: Algo) -> np.ndarray:
    if algo.kind in ("fedavg", "fedprox"):
        return np.arange(state.chunk.n, dtype=np.int64)
    if algo.kind == "skyline":
        return np.flatnonzero(state.chunk.clean_flags)
    assert state.coreset is not None
    return state.coreset.indices


def run_round(
    server: ServerState,
    clients: list[ClientState],
    algo: Algo,
    cfg: "ExperimentConfig",
    round_index: int,
    rng: np.random.Generator,
    ledger: CostLedger,
    test_set: Dataset,
) -> tuple[ServerState, RoundMetrics]:
    """Execute one communication round and return the new server state plus
    that round's metrics."""
    n_clients = len(clients)
    m = cfg.clients_per_round or n_clients
    if m > n_clients:
        raise ConfigurationError(
            f"clients_per_round {m} exceeds num_clients {n_clients}"
        )
    sampled = np.sort(rng.choice(n_clients, size=m, replace=False))
    theta_t = server.params
    theta_size = theta_t.values.size

    refresh = algo.kind == "gcfl" and round_index % cfg.refresh_period == 0
    if refresh:
        rows = labelwise_validation_grads(theta_t, server.val_set)
        row_values = sum(r.size for r in rows.values())
        sel_cfg = SelectionConfig(
            budget_fraction=cfg.budget_fraction,
            lam=cfg.lam,
            per_iteration_picks=cfg.per_iteration_picks,
            residual_tolerance=cfg.residual_tolerance,
        )
        for cid in sampled:
            ledger.grads_broadcast += row_values
            state = clients[cid]
            budget = _client_budget(state.chunk, cfg.budget_fraction)
            if state.chunk.n == 0 or budget < 1:
                continue
            ledger.per_sample_grad_evals += state.chunk.n
            state.coreset = labelwise_omp_select(
                state.chunk, theta_t, rows, budget, sel_cfg
            )

    deltas: list[ParamVector] = []
    for cid in sampled:
        state = clients[cid]
        ledger.params_broadcast += theta_size
        idx = _training_indices(state, algo)
        if idx.size == 0:
            continue  # nothing to train on; client sits this round out
        prox = (algo.mu, theta_t) if algo.kind == "fedprox" else None
        seed = derive_seed(cfg.seed, "client", int(cid), "round", round_index)
        delta = client_update(
            state,
            theta_t,
            idx,
            prox,
            batch_size=cfg.batch_size,
            seed=seed,
            ledger=ledger,
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
            cosine_lr=cfg.cosine_lr,
        )
        ledger.update_uploads += theta_size
        deltas.append(delta)

    if deltas:
        new_params = aggregate(server, deltas)
    else:
        new_params = theta_t.copy()
    new_server = ServerState(new_params, server.round + 1, server.val_set, server.global_lr)

    losses, weights = [], []
    for cid in sampled:
        chunk = clients[cid].chunk
        if chunk.n:
            losses.append(loss(new_params, chunk.dataset))
            weights.append(chunk.n)
    mean_loss = float(np.average(losses, weights=weights)) if losses else float("nan")

    clean_frac = None
    if algo.uses_coreset:
        picked = clean = 0
        for cid in sampled:
            cs = clients[cid].coreset
            if cs is not None and cs.size:
                picked += cs.size
                clean += int(clients[cid].chunk.clean_flags[cs.indices].sum())
        clean_frac = clean / picked if picked else 1.0

    rm = RoundMetrics(
        round=round_index,
        test_accuracy=evaluate_accuracy(new_params, test_set),
        mean_train_loss=mean_loss,
        coreset_clean_fraction=clean_frac,
        ledger_snapshot=ledger.snapshot(),
    )
    return new_server, rm


def prepare_experiment(cfg: "ExperimentConfig") -> Prepared:
    """Synthesize, split, partition and corrupt one data world from cfg.seed."""
    dc = cfg.dataset
    if dc.kind == "blobs":
        ds = make_blobs(
            dc.num_blobs,
            dc.dim,
            dc.resolved_stds(),
            dc.samples_per_blob,
            derive_seed(cfg.seed, "dataset"),
        )
    else:
        ds = load_dataset_csv(dc.csv_path)

    train, val, test = split_train_val_test(
        ds, cfg.val_frac, cfg.test_frac, derive_seed(cfg.seed, "split")
    )
    chunks = dirichlet_partition(
        train, cfg.num_clients, cfg.dirichlet_alpha, derive_seed(cfg.seed, "partition")
    )

    noise = cfg.noise
    num_classes = ds.num_classes
    if noise.kind == "closed_set" and noise.ratio > 0:
        chunks = [
            inject_closed_set(c, noise.ratio, derive_seed(cfg.seed, "noise", c.client_id))
            for c in chunks
        ]
    elif noise.kind == "attribute" and noise.ratio > 0:
        chunks = [
            inject_attribute(
                c, noise.ratio, noise.severity, derive_seed(cfg.seed, "noise", c.client_id)
            )
            for c in chunks
        ]
    elif noise.kind == "open_set" and noise.ratio > 0:
        chunks, test, val, kept = inject_open_set(
            chunks, test, val, noise.ratio, derive_seed(cfg.seed, "noise")
        )
        num_classes = kept.size

    return Prepared(
        chunks=chunks,
        val=val,
        test=test,
        num_classes=int(num_classes),
        input_dim=ds.dim,
        fingerprint=dataset_fingerprint(chunks, val, test),
    )


def run_training(
    cfg: "ExperimentConfig",
    algo: Algo | None = None,
    prepared: Prepared | None = None,
) -> TrainingResult:
    """Run T rounds of one algorithm arm, fully determined by cfg.seed."""
    algo = algo if algo is not None else cfg.arms[0]
    if prepared is None:
        prepared = prepare_experiment(cfg)

    spec = ModelSpec(
        arch=cfg.model.arch,
        input_dim=prepared.input_dim,
        num_classes=prepared.num_classes,
        hidden_dim=cfg.model.hidden_dim,
    )
    params = init_params(spec, derive_seed(cfg.seed, "init"))
    server = ServerState(params, 0, prepared.val, cfg.global_lr)
    clients = [
        ClientState(
            chunk,
            _init_coreset(algo, chunk, _client_budget(chunk, cfg.budget_fraction), cfg.seed),
            cfg.local_lr,
            cfg.local_epochs,
        )
        for chunk in prepared.chunks
    ]
    ledger = CostLedger()

    series: list[RoundMetrics] = []
    for t in range(cfg.rounds):
        rng = spawn_rng(cfg.seed, "sample", t)
        server, rm = run_round(
            server, clients, algo, cfg, t, rng, ledger, prepared.test
        )
        series.append(rm)

    final_acc = evaluate_accuracy(server.params, prepared.test)
    result = TrainingResult(
        algo=algo,
        rounds=series,
        final_params=server.params,
        final_accuracy=final_acc,
        ledger=ledger,
    )
    if cfg.fine_tune_epochs > 0:
        tuned = fine_tune_on_server(
            server.params,
            prepared.val,
            cfg.fine_tune_epochs,
            cfg.fine_tune_lr or cfg.local_lr,
            batch_size=cfg.batch_size,
            seed=derive_seed(cfg.seed, "finetune"),
        )
        result.fine_tuned_accuracy = evaluate_accuracy(tuned, prepared.test)
    return result


def fine_tune_on_server(
    params: ParamVector,
    val: Dataset,
    epochs: int,
    lr: float,
    *,
    batch_size: int = 32,
    seed: int = 0,
) -> ParamVector:
    """Post-hoc SGD on the server's validation data."""
    if val.n == 0:
        raise ValueError("cannot fine-tune on an empty validation set")
    if epochs == 0:
        return params
    return sgd_epochs(params, val, epochs=epochs, lr=lr, batch_size=batch_size, seed=seed)


def compute_cost_ratio(ledger_gcfl: CostLedger, ledger_fedavg: CostLedger) -> float:
    """Client compute of the coreset arm relative to plain federated
    averaging: (sgd visits + selection gradient evals) / fedavg sgd visits."""
    if ledger_fedavg.sgd_sample_visits == 0:
        raise ValueError("fedavg ledger has zero sample visits")
    numer = ledger_gcfl.sgd_sample_visits + ledger_gcfl.per_sample_grad_evals
    return numer / ledger_fedavg.sgd_sample_visits
