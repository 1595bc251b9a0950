"""Coreset selection: greedy gradient matching plus the two baselines.

The matching-pursuit selector greedily grows a support, at each step adding
the candidate gradient(s) closest to the current residual and re-solving a
ridge least-squares problem over the whole support.  The residual that
drives selection and stopping comes from the unclipped solve (this is what
makes its norm non-increasing); the nonnegativity clip is applied to the
weights that are returned.  Weights only steer selection: local training on
a coreset is unweighted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ClientChunk
from .errors import ConfigurationError
from .model import ParamVector, last_layer_grad_stack

__all__ = [
    "Coreset",
    "SelectionConfig",
    "omp_select",
    "labelwise_omp_select",
    "random_select",
    "facility_location_select",
]


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs for gradient-matching selection."""

    budget_fraction: float = 0.1
    lam: float = 0.5  # ridge coefficient on the weight solve
    per_iteration_picks: int = 1
    residual_tolerance: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.budget_fraction <= 1.0:
            raise ConfigurationError("budget_fraction must be in (0, 1]")
        if self.lam < 0:
            raise ConfigurationError("lambda must be non-negative")
        if self.per_iteration_picks < 1:
            raise ConfigurationError("per_iteration_picks must be >= 1")
        if self.residual_tolerance < 0:
            raise ConfigurationError("residual_tolerance must be non-negative")


@dataclass
class Coreset:
    """Selected sample indices with nonnegative importance weights.

    ``per_class`` is populated by label-wise selection and maps a class to
    its (indices, weights) share.  ``residual_norms`` traces the matching
    residual after each weight re-solve, for diagnostics.
    """

    indices: np.ndarray
    weights: np.ndarray
    per_class: dict[int, tuple[np.ndarray, np.ndarray]] | None = None
    residual_norms: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        self.indices = np.asarray(self.indices, dtype=np.int64).ravel()
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if self.indices.size != self.weights.size:
            raise ValueError("weights must align with indices")
        if self.indices.size != np.unique(self.indices).size:
            raise ValueError("coreset indices must be distinct")
        if np.any(self.weights < 0):
            raise ValueError("coreset weights must be non-negative")

    @property
    def size(self) -> int:
        return self.indices.size


def _solve_ridge(columns: np.ndarray, target: np.ndarray, lam: float) -> np.ndarray:
    """argmin_w lam*||w||^2 + ||columns @ w - target||^2 via normal equations."""
    gram = columns.T @ columns + lam * np.eye(columns.shape[1])
    rhs = columns.T @ target
    w, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
    return w


def _greedy_match(
    cands: np.ndarray,
    target: np.ndarray,
    budget: int,
    lam: float,
    picks: int,
    tol: float,
) -> tuple[list[int], np.ndarray, list[float]]:
    n = cands.shape[0]
    selected: list[int] = []
    weights = np.empty(0)
    residual = target.astype(np.float64, copy=True)
    norms: list[float] = []
    taken = np.zeros(n, dtype=bool)
    while len(selected) < budget and float(np.linalg.norm(residual)) > tol:
        if taken.all():
            break
        dist = np.linalg.norm(cands - residual, axis=1)
        dist[taken] = np.inf
        k = min(picks, budget - len(selected), int(n - taken.sum()))
        # stable sort: ties resolved toward the lowest sample index
        chosen = np.argsort(dist, kind="stable")[:k]
        selected.extend(int(j) for j in chosen)
        taken[chosen] = True
        weights = _solve_ridge(cands[selected].T, target, lam)
        residual = target - cands[selected].T @ weights
        norms.append(float(np.linalg.norm(residual)))
    return selected, weights, norms


def omp_select(
    candidate_grads: np.ndarray | list[np.ndarray],
    target: np.ndarray,
    budget: int,
    lam: float = 0.5,
    per_iteration_picks: int = 1,
    tol: float = 0.0,
) -> Coreset:
    """Match ``target`` with a sparse nonnegative combination of candidates.

    Iterates greedy pick(s) of the candidates nearest the residual followed
    by a ridge re-solve over the support, until the budget is reached or
    the residual norm drops to ``tol``.  A zero target therefore yields an
    empty coreset.  Ties in the greedy argmin go to the lowest index.
    """
    cands = np.atleast_2d(np.asarray(candidate_grads, dtype=np.float64))
    target = np.asarray(target, dtype=np.float64).ravel()
    if cands.size == 0:
        raise ValueError("candidate list is empty")
    if cands.shape[1] != target.size:
        raise ValueError(
            f"candidate dim {cands.shape[1]} != target dim {target.size}"
        )
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if per_iteration_picks < 1:
        raise ConfigurationError("per_iteration_picks must be >= 1")
    if lam < 0 or tol < 0:
        raise ConfigurationError("lambda and tol must be non-negative")

    selected, weights, norms = _greedy_match(
        cands, target, budget, lam, per_iteration_picks, tol
    )
    return Coreset(
        np.asarray(selected, dtype=np.int64),
        np.maximum(weights, 0.0),
        residual_norms=tuple(norms),
    )


def _split_budget(budget: int, class_counts: dict[int, int]) -> dict[int, int]:
    """floor(budget/k) per class, remainder going to the largest classes."""
    classes = sorted(class_counts)
    k = len(classes)
    base = budget // k
    shares = {c: base for c in classes}
    by_size = sorted(classes, key=lambda c: (-class_counts[c], c))
    for c in by_size[: budget % k]:
        shares[c] += 1
    return shares


def labelwise_omp_select(
    chunk: ClientChunk,
    params: ParamVector,
    server_rows: dict[int, np.ndarray],
    budget: int,
    cfg: SelectionConfig,
) -> Coreset:
    """Run one matching-pursuit instance per class the client shares with
    the server, each against that class's broadcast gradient row.

    The budget splits as floor(budget/|shared|) per class with the
    remainder allotted to the largest classes; classes the server did not
    broadcast are skipped and their share flows back into the split.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    labels = chunk.dataset.labels
    present = set(int(c) for c in np.unique(labels))
    shared = sorted(present & set(server_rows))
    if not shared:
        raise ValueError("client and server share no classes")

    stack = last_layer_grad_stack(params, chunk.dataset)
    counts = {c: int((labels == c).sum()) for c in shared}
    shares = _split_budget(budget, counts)

    all_idx: list[np.ndarray] = []
    all_w: list[np.ndarray] = []
    per_class: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for c in shared:
        if shares[c] == 0:
            continue
        local = np.flatnonzero(labels == c)
        sub = omp_select(
            stack[local, c, :],
            server_rows[c],
            shares[c],
            lam=cfg.lam,
            per_iteration_picks=cfg.per_iteration_picks,
            tol=cfg.residual_tolerance,
        )
        idx = local[sub.indices]
        per_class[c] = (idx, sub.weights)
        all_idx.append(idx)
        all_w.append(sub.weights)

    indices = np.concatenate(all_idx) if all_idx else np.empty(0, dtype=np.int64)
    weights = np.concatenate(all_w) if all_w else np.empty(0)
    return Coreset(indices, weights, per_class=per_class)


def random_select(chunk: ClientChunk, budget: int, seed: int) -> Coreset:
    """Uniform sample without replacement, unit weights.

    A budget above the chunk size is clamped to it, so empty chunks yield
    empty coresets.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    size = min(budget, chunk.n)
    idx = rng.choice(chunk.n, size=size, replace=False) if size else np.empty(0)
    return Coreset(np.sort(idx.astype(np.int64)), np.ones(size))


def facility_location_select(chunk: ClientChunk, budget: int) -> Coreset:
    """Greedy facility-location maximization on shifted cosine similarity.

    Similarity is (1 + cos(v, s)) / 2 over raw features.  Each selected
    point's weight is the number of ground-set points it represents (their
    best-similarity selected point, earliest selection winning ties).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    n = chunk.n
    if n == 0:
        return Coreset(np.empty(0, dtype=np.int64), np.empty(0))

    feats = chunk.dataset.features
    norms = np.linalg.norm(feats, axis=1)
    unit = feats / np.maximum(norms, 1e-300)[:, None]
    sim = 0.5 * (1.0 + unit @ unit.T)

    size = min(budget, n)
    selected: list[int] = []
    best = np.zeros(n)
    for _ in range(size):
        gains = np.maximum(sim, best[:, None]).sum(axis=0) - best.sum()
        gains[selected] = -np.inf
        j = int(np.argmax(gains))  # argmax ties -> lowest index
        selected.append(j)
        best = np.maximum(best, sim[:, j])

    # weight = size of the cluster each selected point represents
    sel_sim = sim[:, selected]
    rep = np.argmax(sel_sim, axis=1)  # earliest selected wins ties
    weights = np.bincount(rep, minlength=size).astype(np.float64)
    return Coreset(np.asarray(selected, dtype=np.int64), weights)
