"""Bradley-Terry core: preference probability, loss, derivatives, and a
deterministic full-batch trainer for a linear reward model.

A linear reward model scores a response as theta . phi(x, y).  A pairwise
comparison is fully summarised by the difference feature
psi = phi(x, y_chosen) - phi(x, y_rejected), so that

    margin          delta = theta . psi
    P(chosen wins)  sigmoid(delta)
    per-sample loss -log sigmoid(delta) = log(1 + exp(-delta))

All operations here are pure with respect to their inputs; feature arrays are
stored read-only so shared datasets are safe to use concurrently.  Training
returns a fresh parameter vector and never mutates its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatchError,
    DivergenceError,
    EmptyDatasetError,
)

ORIGIN_HUMAN = "human"
ORIGIN_SYNTHETIC = "synthetic"


def _as_feature_vec(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TextPayload:
    """Raw text triple kept alongside features in text mode."""

    prompt: str
    chosen: str
    rejected: str


@dataclass(frozen=True, eq=False)
class PreferenceTuple:
    """One comparison: chosen/rejected features plus the cached difference psi."""

    id: str
    chosen_feat: np.ndarray
    rejected_feat: np.ndarray
    psi: np.ndarray
    origin: str = ORIGIN_HUMAN
    parent_id: str | None = None
    payload: TextPayload | None = None

    @property
    def dim(self) -> int:
        return int(self.psi.shape[0])


def preference_tuple(
    tuple_id: str,
    chosen_feat,
    rejected_feat,
    *,
    origin: str = ORIGIN_HUMAN,
    parent_id: str | None = None,
    payload: TextPayload | None = None,
) -> PreferenceTuple:
    """Validate and build a PreferenceTuple; psi is always recomputed here."""
    chosen = _as_feature_vec(chosen_feat, "chosen_feat")
    rejected = _as_feature_vec(rejected_feat, "rejected_feat")
    if chosen.shape != rejected.shape:
        raise DimensionMismatchError(chosen.size, rejected.size, context=str(tuple_id))
    if origin not in (ORIGIN_HUMAN, ORIGIN_SYNTHETIC):
        raise ConfigError(f"unknown origin {origin!r}")
    if (origin == ORIGIN_SYNTHETIC) != (parent_id is not None):
        raise ConfigError("origin=synthetic requires parent_id, and parent_id requires origin=synthetic")
    psi = chosen - rejected
    psi.setflags(write=False)
    return PreferenceTuple(
        id=str(tuple_id),
        chosen_feat=chosen,
        rejected_feat=rejected,
        psi=psi,
        origin=origin,
        parent_id=parent_id,
        payload=payload,
    )


def swap_sides(tup: PreferenceTuple) -> PreferenceTuple:
    """Return the same comparison with chosen and rejected exchanged."""
    payload = None
    if tup.payload is not None:
        payload = TextPayload(tup.payload.prompt, tup.payload.rejected, tup.payload.chosen)
    return preference_tuple(
        tup.id,
        tup.rejected_feat,
        tup.chosen_feat,
        origin=tup.origin,
        parent_id=tup.parent_id,
        payload=payload,
    )


@dataclass(frozen=True, eq=False)
class RewardParams:
    """Parameter vector theta of the linear reward model."""

    theta: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.theta.shape[0])


def reward_params(theta) -> RewardParams:
    return RewardParams(_as_feature_vec(theta, "theta"))


def zero_params(dim: int) -> RewardParams:
    if dim < 1:
        raise ConfigError(f"dim must be positive, got {dim}")
    return reward_params(np.zeros(dim))


@dataclass(frozen=True)
class TrainConfig:
    """Full-batch gradient descent settings.

    learning_rate 0 is accepted and leaves parameters unchanged, which is
    occasionally useful as a no-op baseline.
    """

    learning_rate: float = 0.5
    epochs_inner: int = 100
    l2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs_inner < 1:
            raise ConfigError(f"epochs_inner must be >= 1, got {self.epochs_inner}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")


class Dataset:
    """Ordered immutable collection of tuples sharing one feature dimension."""

    __slots__ = ("tuples", "_psi")

    def __init__(self, tuples: Iterable[PreferenceTuple]):
        tt = tuple(tuples)
        if not tt:
            raise EmptyDatasetError("dataset must contain at least one tuple")
        d0 = tt[0].dim
        for t in tt[1:]:
            if t.dim != d0:
                raise DimensionMismatchError(d0, t.dim, context=t.id)
        self.tuples = tt
        self._psi: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.tuples)

    def __iter__(self) -> Iterator[PreferenceTuple]:
        return iter(self.tuples)

    def __getitem__(self, i: int) -> PreferenceTuple:
        return self.tuples[i]

    @property
    def dim(self) -> int:
        return self.tuples[0].dim

    @property
    def psi_matrix(self) -> np.ndarray:
        """(n, d) matrix of difference features, row order = dataset order."""
        if self._psi is None:
            psi = np.vstack([t.psi for t in self.tuples])
            psi.setflags(write=False)
            self._psi = psi
        return self._psi

    def ids(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.tuples)

    def extend(self, more: Iterable[PreferenceTuple]) -> "Dataset":
        return Dataset(self.tuples + tuple(more))


def _check_params_dim(params: RewardParams, dim: int) -> None:
    if params.dim != dim:
        raise DimensionMismatchError(dim, params.dim, context="theta")


def sigmoid(t):
    """Logistic function 1 / (1 + exp(-t)), stable for |t| up to ~745.

    Branches on sign so exp() is only ever taken of a non-positive argument.
    Accepts scalars or arrays; scalars come back as float.
    """
    arr = np.asarray(t, dtype=np.float64)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    e = np.exp(arr[~pos])
    out[~pos] = e / (1.0 + e)
    if arr.ndim == 0:
        return float(out)
    return out


def margin(params: RewardParams, tup: PreferenceTuple) -> float:
    """Reward difference theta . psi for one comparison."""
    if params.dim != tup.dim:
        raise DimensionMismatchError(tup.dim, params.dim, context=tup.id)
    return float(params.theta @ tup.psi)


def bt_prob(params: RewardParams, tup: PreferenceTuple) -> float:
    """Probability that the chosen response beats the rejected one."""
    return sigmoid(margin(params, tup))


def dataset_margins(params: RewardParams, dataset: Dataset) -> np.ndarray:
    """All margins at once, in dataset order."""
    _check_params_dim(params, dataset.dim)
    return dataset.psi_matrix @ params.theta


def nll_loss(params: RewardParams, dataset: Dataset, l2: float = 0.0) -> float:
    """Mean negative log-likelihood, log(1 + exp(-delta)) per sample.

    Computed via logaddexp so large |delta| never overflows.  When l2 > 0 a
    ridge term (l2/2)*||theta||^2 is added.
    """
    margins = dataset_margins(params, dataset)
    loss = float(np.mean(np.logaddexp(0.0, -margins)))
    if l2 > 0:
        loss += 0.5 * l2 * float(params.theta @ params.theta)
    return loss


def grad(params: RewardParams, dataset: Dataset, l2: float = 0.0) -> np.ndarray:
    """Gradient of nll_loss: mean of (sigmoid(delta) - 1) * psi, plus l2*theta."""
    margins = dataset_margins(params, dataset)
    s = sigmoid(margins)
    g = dataset.psi_matrix.T @ (s - 1.0) / len(dataset)
    if l2 > 0:
        g = g + l2 * params.theta
    return g


def curvature_factor(delta):
    """Logistic curvature c(delta) = sigmoid(delta) * (1 - sigmoid(delta))."""
    s = sigmoid(delta)
    return s * (1.0 - s)


def per_sample_hessian(params: RewardParams, tup: PreferenceTuple) -> np.ndarray:
    """Hessian of one sample's loss: c(delta) * psi psi^T (rank <= 1, PSD)."""
    delta = margin(params, tup)
    return curvature_factor(delta) * np.outer(tup.psi, tup.psi)


def train(params: RewardParams, dataset: Dataset, cfg: TrainConfig) -> RewardParams:
    """Run cfg.epochs_inner full-batch gradient steps from params.

    Deterministic given (params, dataset order, cfg).  Raises DivergenceError
    naming the step index if the loss, gradient, or updated parameters ever
    go non-finite.
    """
    _check_params_dim(params, dataset.dim)
    psi = dataset.psi_matrix
    n = len(dataset)
    theta = params.theta.copy()
    # Overflow is not a warning here: any non-finite value aborts explicitly.
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(cfg.epochs_inner):
            margins = psi @ theta
            loss = float(np.mean(np.logaddexp(0.0, -margins)))
            if not np.isfinite(loss):
                raise DivergenceError(step, "non-finite loss")
            s = sigmoid(margins)
            g = psi.T @ (s - 1.0) / n
            if cfg.l2 > 0:
                g += cfg.l2 * theta
            if not np.all(np.isfinite(g)):
                raise DivergenceError(step, "non-finite gradient")
            theta -= cfg.learning_rate * g
            if not np.all(np.isfinite(theta)):
                raise DivergenceError(step, "non-finite parameters after update")
    return reward_params(theta)
