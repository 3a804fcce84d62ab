"""Seeded synthetic benchmark used by the trend acceptance test.

Construction (per master seed), d = 16 split into two 8-dim halves:

  - the true parameter has unit-norm components in both halves
  - 70% easy comparisons live entirely in the first half with true |margin|
    in [1, 4]; 30% hard comparisons live in the second half with |margin|
    in [0.02, 0.5], so the second half of the parameter vector is only
    learnable from hard, ambiguous comparisons
  - training labels are BT-noisy (sides swapped with probability
    1 - sigmoid(margin), the mechanism preference labels actually follow)
  - test comparisons are fresh draws with noise-free orientation, but their
    features carry measurement noise the crisp training set does not show

Concentrating augmentation budget on low-margin comparisons speeds up
exactly the directions the model has not yet learned, which is the
behaviour the margin-aware allocation is supposed to buy.  All three
training modes (margin-aware, uniform, no augmentation) share the same
data, initial parameters, optimizer settings, and augmenter seed; only the
allocation rule differs.
"""

import numpy as np

from mars.augmentation import Augmenter, AugmenterSpec, mix_seed
from mars.bt_core import (
    Dataset,
    TrainConfig,
    margin,
    preference_tuple,
    reward_params,
    sigmoid,
    swap_sides,
    zero_params,
)
from mars.data_io import generate_synthetic
from mars.mars_engine import MarsConfig, run_mars, run_uniform_baseline
from mars.metrics import margin_snr, pairwise_accuracy

DIM = 16
HALF = 8
N_TRAIN = 500
N_TEST = 2000
HARD_FRAC = 0.3
EASY_REGIME = (1.0, 4.0)
HARD_REGIME = (0.02, 0.5)
EPOCHS = 3
BUDGET = 2 * N_TRAIN
TAU = 1.0
JITTER = 0.1
TEST_NOISE = 0.2
TRAIN_CFG = TrainConfig(learning_rate=0.5, epochs_inner=40, l2=1e-3)


def _half_theta(master_seed, tag):
    rng = np.random.default_rng(mix_seed(master_seed, "theta", tag))
    v = rng.standard_normal(HALF)
    return reward_params(v / np.linalg.norm(v))


def _embed(tup, offset, new_id):
    chosen = np.zeros(DIM)
    rejected = np.zeros(DIM)
    chosen[offset : offset + HALF] = tup.chosen_feat
    rejected[offset : offset + HALF] = tup.rejected_feat
    return preference_tuple(new_id, chosen, rejected)


def _mixture(theta_a, theta_b, n, master_seed, tag):
    n_hard = int(round(n * HARD_FRAC))
    easy = generate_synthetic(HALF, n - n_hard, EASY_REGIME, theta_a, mix_seed(master_seed, tag, "easy"))
    hard = generate_synthetic(HALF, n_hard, HARD_REGIME, theta_b, mix_seed(master_seed, tag, "hard"))
    tuples = [_embed(t, 0, f"{tag}-e{i}") for i, t in enumerate(easy)]
    tuples += [_embed(t, HALF, f"{tag}-h{i}") for i, t in enumerate(hard)]
    return Dataset(tuples)


def _orient_positive(ds, theta):
    return Dataset(t if margin(theta, t) > 0 else swap_sides(t) for t in ds)


def _bt_relabel(ds, theta, master_seed):
    rng = np.random.default_rng(mix_seed(master_seed, "labels"))
    out = []
    for t in ds:
        m = margin(theta, t)
        if rng.random() < 1.0 - sigmoid(m):
            t = swap_sides(t)
        out.append(t)
    return Dataset(out)


def _with_feature_noise(ds, scale, master_seed):
    rng = np.random.default_rng(mix_seed(master_seed, "testnoise"))
    out = []
    for t in ds:
        chosen = t.chosen_feat + rng.uniform(-scale, scale, size=DIM)
        rejected = t.rejected_feat + rng.uniform(-scale, scale, size=DIM)
        out.append(preference_tuple(t.id, chosen, rejected))
    return Dataset(out)


def build_instance(master_seed):
    theta_a = _half_theta(master_seed, "a")
    theta_b = _half_theta(master_seed, "b")
    theta = reward_params(np.concatenate([theta_a.theta, theta_b.theta]))
    train_ds = _bt_relabel(
        _orient_positive(_mixture(theta_a, theta_b, N_TRAIN, master_seed, "tr"), theta), theta, master_seed
    )
    test_ds = _with_feature_noise(
        _orient_positive(_mixture(theta_a, theta_b, N_TEST, master_seed, "te"), theta), TEST_NOISE, master_seed
    )
    return theta, train_ds, test_ds


def run_method(train_ds, test_ds, master_seed, method):
    """method: 'mars' | 'uniform' | 'plain'. Returns (accuracy, snr)."""
    budget = 0 if method == "plain" else BUDGET
    cfg = MarsConfig(epochs_T=EPOCHS, budget_B=budget, tau=TAU, seed=master_seed)
    augmenter = Augmenter(AugmenterSpec(kind="feature_jitter", seed=mix_seed(master_seed, "aug"), jitter_scale=JITTER))
    runner = run_uniform_baseline if method == "uniform" else run_mars
    params, _ = runner(train_ds, zero_params(DIM), cfg, TRAIN_CFG, augmenter)
    return pairwise_accuracy(params, test_ds), margin_snr(params, test_ds)


def run_benchmark(seeds):
    """Per-method lists of (accuracy, snr) across the given master seeds."""
    results = {"mars": [], "uniform": [], "plain": []}
    for seed in seeds:
        _, train_ds, test_ds = build_instance(seed)
        for method in results:
            results[method].append(run_method(train_ds, test_ds, seed, method))
    return results
