"""The self-refining augmentation loop.

Each epoch: score every comparison's margin under the current model, convert
absolute margins to allocation weights with a temperature-tau softmax (small
|margin| gets more weight), round the per-epoch budget to integer counts with
largest-remainder apportionment, synthesize preference pairs around each
budgeted tuple, union them into the training set, and retrain warm-started
from the previous parameters.

The uniform baseline runs the identical loop with the softmax replaced by
equal weights.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .augmentation import SIDE_CHOSEN, SIDE_REJECTED, Augmenter
from .bt_core import (
    ORIGIN_HUMAN,
    Dataset,
    PreferenceTuple,
    RewardParams,
    TextPayload,
    TrainConfig,
    dataset_margins,
    nll_loss,
    preference_tuple,
    train,
)
from .errors import AugmentationError, ConfigError, EmptyDatasetError, MarsError
from .metrics import snr_from_margins

SPLIT_BALANCED = "balanced"
SPLIT_CHOSEN_ONLY = "chosen_only"
SPLIT_REJECTED_ONLY = "rejected_only"
_SPLIT_POLICIES = (SPLIT_BALANCED, SPLIT_CHOSEN_ONLY, SPLIT_REJECTED_ONLY)


@dataclass(frozen=True)
class MarsConfig:
    epochs_T: int = 3
    budget_B: int = 0
    tau: float = 0.1
    split_policy: str = SPLIT_BALANCED
    cumulative: bool = True
    seed: int = 0
    # Synthetic tuples are not re-augmented unless explicitly allowed.
    allow_reaugment: bool = False

    def __post_init__(self):
        if self.epochs_T < 1:
            raise ConfigError(f"epochs_T must be >= 1, got {self.epochs_T}")
        if self.budget_B < 0:
            raise ConfigError(f"budget_B must be >= 0, got {self.budget_B}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.split_policy not in _SPLIT_POLICIES:
            raise ConfigError(f"unknown split_policy {self.split_policy!r}")


@dataclass(frozen=True)
class AllocationWeights:
    """Softmax allocation weights, one per scored tuple; sums to 1."""

    q: np.ndarray


@dataclass(frozen=True)
class PlanRecord:
    tuple_id: str
    q: float
    b: int
    n_plus: int
    n_minus: int


@dataclass(frozen=True)
class AugmentationPlan:
    records: tuple[PlanRecord, ...]
    budget: int

    def __post_init__(self):
        total = sum(r.b for r in self.records)
        if total != self.budget:
            raise ConfigError(f"plan allocates {total}, budget is {self.budget}")
        for r in self.records:
            if r.n_plus + r.n_minus != r.b or r.n_plus < 0 or r.n_minus < 0:
                raise ConfigError(f"bad split for tuple {r.tuple_id}")


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    margins: np.ndarray
    dataset_size_before: int
    dataset_size_after: int
    synthetic_added: int
    loss_before: float
    loss_after: float
    mean_abs_margin: float
    snr: float


def score_margins(params: RewardParams, dataset: Dataset) -> list[tuple[str, float]]:
    """(tuple id, margin) for every tuple, in dataset order."""
    margins = dataset_margins(params, dataset)
    return [(t.id, float(m)) for t, m in zip(dataset.tuples, margins)]


def allocate(margins, cfg: MarsConfig) -> AllocationWeights:
    """Softmax of -tau * |margin|, max-shifted for stability."""
    m = np.asarray(list(margins), dtype=np.float64)
    if m.size == 0:
        raise EmptyDatasetError("allocate needs at least one margin")
    logits = -cfg.tau * np.abs(m)
    logits -= logits.max()
    w = np.exp(logits)
    q = w / w.sum()
    return AllocationWeights(q=q)


def round_budget(weights: AllocationWeights, budget_B: int, abs_margins=None, tuple_ids=None) -> np.ndarray:
    """Integer counts b_i = floor(B*q_i) topped up by largest remainder.

    Remainder ties break toward the smaller |margin| first, then the smaller
    tuple id; when those keys are not supplied, position order decides.
    """
    if budget_B < 0:
        raise ConfigError(f"budget must be >= 0, got {budget_B}")
    q = weights.q
    n = q.size
    raw = budget_B * q
    b = np.floor(raw).astype(np.int64)
    remainder = raw - b
    deficit = int(budget_B - b.sum())
    if deficit > 0:
        absm = np.asarray(abs_margins, dtype=np.float64) if abs_margins is not None else np.zeros(n)
        ids = list(tuple_ids) if tuple_ids is not None else [""] * n
        order = sorted(range(n), key=lambda i: (-remainder[i], absm[i], ids[i], i))
        for k in range(deficit):
            b[order[k % n]] += 1
    return b


def split_counts(b_i: int, split_policy: str) -> tuple[int, int]:
    """Split a tuple's budget into chosen/rejected variant counts."""
    if b_i < 0:
        raise ConfigError(f"count must be >= 0, got {b_i}")
    if split_policy == SPLIT_BALANCED:
        return math.ceil(b_i / 2), b_i // 2
    if split_policy == SPLIT_CHOSEN_ONLY:
        return b_i, 0
    if split_policy == SPLIT_REJECTED_ONLY:
        return 0, b_i
    raise ConfigError(f"unknown split_policy {split_policy!r}")


def build_plan(scored: list[tuple[str, float]], cfg: MarsConfig, uniform: bool = False) -> AugmentationPlan:
    """Allocate, round, and split the epoch budget over scored tuples."""
    ids = [tid for tid, _ in scored]
    margins = [m for _, m in scored]
    if uniform:
        q = np.full(len(scored), 1.0 / len(scored)) if scored else np.array([])
        weights = AllocationWeights(q=q)
    else:
        weights = allocate(margins, cfg)
    absm = np.abs(np.asarray(margins))
    b = round_budget(weights, cfg.budget_B, abs_margins=absm, tuple_ids=ids)
    records = []
    for i, tid in enumerate(ids):
        n_plus, n_minus = split_counts(int(b[i]), cfg.split_policy)
        records.append(PlanRecord(tuple_id=tid, q=float(weights.q[i]), b=int(b[i]), n_plus=n_plus, n_minus=n_minus))
    return AugmentationPlan(records=tuple(records), budget=cfg.budget_B)


def synthesize_pairs(
    tup: PreferenceTuple,
    n_plus: int,
    n_minus: int,
    augmenter: Augmenter,
    epoch: int = 0,
) -> list[PreferenceTuple]:
    """Cartesian product of {original + variants} on each side, minus the
    original pair: exactly (n_plus+1)*(n_minus+1) - 1 synthetic tuples.

    All-or-nothing: if either side's variants fail, nothing is emitted.
    Every synthetic tuple keeps the parent's preference direction.
    """
    if n_plus < 0 or n_minus < 0:
        raise ConfigError("variant counts must be >= 0")
    if n_plus == 0 and n_minus == 0:
        return []
    try:
        plus = augmenter.side_variants(tup, SIDE_CHOSEN, n_plus)
        minus = augmenter.side_variants(tup, SIDE_REJECTED, n_minus)
    except AugmentationError as exc:
        raise AugmentationError(f"augmentation failed: {exc}", tup.id) from exc

    orig_chosen_text = tup.payload.chosen if tup.payload else None
    orig_rejected_text = tup.payload.rejected if tup.payload else None
    chosen_side = [(orig_chosen_text, tup.chosen_feat)] + plus
    rejected_side = [(orig_rejected_text, tup.rejected_feat)] + minus

    out = []
    for i, j in itertools.product(range(len(chosen_side)), range(len(rejected_side))):
        if i == 0 and j == 0:
            continue
        c_text, c_feat = chosen_side[i]
        r_text, r_feat = rejected_side[j]
        payload = None
        if tup.payload is not None and c_text is not None and r_text is not None:
            payload = TextPayload(tup.payload.prompt, c_text, r_text)
        out.append(
            preference_tuple(
                f"{tup.id}/e{epoch}/c{i}r{j}",
                c_feat,
                r_feat,
                origin="synthetic",
                parent_id=tup.id,
                payload=payload,
            )
        )
    return out


def _epoch_stats(margins: np.ndarray) -> tuple[float, float]:
    mean_abs = float(np.mean(np.abs(margins)))
    snr, _ = snr_from_margins(margins)
    return mean_abs, snr


def _run_loop(
    dataset0: Dataset,
    params0: RewardParams,
    cfg: MarsConfig,
    train_cfg: TrainConfig,
    augmenter: Augmenter,
    uniform: bool,
) -> tuple[RewardParams, list[EpochReport]]:
    dataset = dataset0
    params = params0
    reports: list[EpochReport] = []
    try:
        for t in range(1, cfg.epochs_T + 1):
            scoring_set = dataset if cfg.cumulative else dataset0
            by_id = {tup.id: tup for tup in scoring_set}
            scored = score_margins(params, scoring_set)
            eligible = [
                (tid, m)
                for (tid, m) in scored
                if cfg.allow_reaugment or by_id[tid].origin == ORIGIN_HUMAN
            ]
            synthetic: list[PreferenceTuple] = []
            if cfg.budget_B > 0 and eligible:
                epoch_augmenter = augmenter.reseeded(cfg.seed, t)
                plan = build_plan(eligible, cfg, uniform=uniform)
                for record in plan.records:
                    if record.b == 0:
                        continue
                    synthetic.extend(
                        synthesize_pairs(
                            by_id[record.tuple_id], record.n_plus, record.n_minus, epoch_augmenter, epoch=t
                        )
                    )
            base = dataset if cfg.cumulative else dataset0
            new_dataset = base.extend(synthetic) if synthetic else base
            loss_before = nll_loss(params, new_dataset, l2=train_cfg.l2)
            params = train(params, new_dataset, train_cfg)
            loss_after = nll_loss(params, new_dataset, l2=train_cfg.l2)
            margins_arr = np.asarray([m for _, m in scored])
            mean_abs, snr = _epoch_stats(margins_arr)
            reports.append(
                EpochReport(
                    epoch=t,
                    margins=margins_arr,
                    dataset_size_before=len(base),
                    dataset_size_after=len(new_dataset),
                    synthetic_added=len(synthetic),
                    loss_before=loss_before,
                    loss_after=loss_after,
                    mean_abs_margin=mean_abs,
                    snr=snr,
                )
            )
            dataset = new_dataset
    except MarsError as exc:
        # an epoch-level failure aborts the run; completed epochs stay readable
        exc.partial_reports = tuple(reports)
        raise
    return params, reports


def run_mars(
    dataset0: Dataset,
    params0: RewardParams,
    cfg: MarsConfig,
    train_cfg: TrainConfig,
    augmenter: Augmenter,
) -> tuple[RewardParams, list[EpochReport]]:
    """Margin-aware training: the softmax allocation drives augmentation."""
    return _run_loop(dataset0, params0, cfg, train_cfg, augmenter, uniform=False)


def run_uniform_baseline(
    dataset0: Dataset,
    params0: RewardParams,
    cfg: MarsConfig,
    train_cfg: TrainConfig,
    augmenter: Augmenter,
) -> tuple[RewardParams, list[EpochReport]]:
    """Same loop with every eligible tuple weighted 1/N."""
    return _run_loop(dataset0, params0, cfg, train_cfg, augmenter, uniform=True)
