"""Evaluation metrics over a scored preference dataset."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bt_core import Dataset, RewardParams, dataset_margins
from .errors import ConfigError, EmptyDatasetError


@dataclass(frozen=True)
class EvalSummary:
    """One dataset's scores: accuracy, margin moments, SNR, and a histogram.

    The histogram uses fixed-width bins anchored at zero: bin k covers
    [k*bin_width, (k+1)*bin_width); counts[i] is the count for bin
    bin_start + i.
    """

    n: int
    pairwise_accuracy: float
    margin_mean: float
    margin_std: float
    snr: float
    snr_degenerate: bool
    bin_width: float
    bin_start: int
    counts: tuple[int, ...]


def pairwise_accuracy(params: RewardParams, dataset: Dataset) -> float:
    """Fraction of comparisons the model ranks correctly; exact ties count 0.5."""
    margins = dataset_margins(params, dataset)
    wins = float(np.count_nonzero(margins > 0))
    ties = float(np.count_nonzero(margins == 0))
    return (wins + 0.5 * ties) / len(dataset)


def snr_from_margins(margins: np.ndarray) -> tuple[float, bool]:
    """mean/std with population std; returns a degenerate flag when std is 0.

    The degenerate sentinel is signed infinity (0.0 if the mean is also 0).
    """
    mean = float(np.mean(margins))
    std = float(np.std(margins))
    if std == 0.0:
        if mean == 0.0:
            return 0.0, True
        return math.copysign(math.inf, mean), True
    return mean / std, False


def margin_snr(params: RewardParams, dataset: Dataset) -> float:
    """Margin signal-to-noise ratio mean/std over the dataset (population std)."""
    if len(dataset) < 2:
        raise EmptyDatasetError("margin_snr needs at least 2 tuples")
    snr, _ = snr_from_margins(dataset_margins(params, dataset))
    return snr


def _histogram(margins: np.ndarray, bin_width: float) -> tuple[int, tuple[int, ...]]:
    idx = np.floor(margins / bin_width).astype(np.int64)
    lo, hi = int(idx.min()), int(idx.max())
    counts = np.zeros(hi - lo + 1, dtype=np.int64)
    for i in idx:
        counts[i - lo] += 1
    return lo, tuple(int(c) for c in counts)


def evaluate(params: RewardParams, dataset: Dataset, hist_bin_width: float = 0.5) -> EvalSummary:
    if len(dataset) < 2:
        raise EmptyDatasetError("evaluate needs at least 2 tuples")
    if hist_bin_width <= 0:
        raise ConfigError(f"hist_bin_width must be > 0, got {hist_bin_width}")
    margins = dataset_margins(params, dataset)
    snr, degenerate = snr_from_margins(margins)
    bin_start, counts = _histogram(margins, hist_bin_width)
    return EvalSummary(
        n=len(dataset),
        pairwise_accuracy=pairwise_accuracy(params, dataset),
        margin_mean=float(np.mean(margins)),
        margin_std=float(np.std(margins)),
        snr=snr,
        snr_degenerate=degenerate,
        bin_width=hist_bin_width,
        bin_start=bin_start,
        counts=counts,
    )
