"""Allocation, rounding, synthesis, and the epoch loop.

Budget apportionment is checked against an independently written
largest-remainder oracle; pair synthesis against plain enumeration; the
identity-augmenter run against an explicitly duplicated dataset.
"""

import math

import numpy as np
import pytest

from mars.augmentation import Augmenter, AugmenterSpec
from mars.bt_core import Dataset, TrainConfig, dataset_margins, preference_tuple, train, zero_params
from mars.errors import AugmentationError, ConfigError, EmptyDatasetError
from mars.mars_engine import (
    AllocationWeights,
    AugmentationPlan,
    MarsConfig,
    PlanRecord,
    allocate,
    build_plan,
    round_budget,
    run_mars,
    run_uniform_baseline,
    score_margins,
    split_counts,
    synthesize_pairs,
)

from conftest import random_dataset, random_params, random_tuple

E_OVER_E_PLUS_1 = 0.7310585786300049  # e/(e+1), mpmath 50 digits


def identity_augmenter(seed=0):
    return Augmenter(AugmenterSpec(kind="feature_jitter", seed=seed, jitter_scale=0.0))


def jitter_augmenter(scale=0.05, seed=0):
    return Augmenter(AugmenterSpec(kind="feature_jitter", seed=seed, jitter_scale=scale))


class TestScoreMargins:
    def test_zero_theta(self, rng):
        ds = random_dataset(rng, 6, 3)
        scored = score_margins(zero_params(3), ds)
        assert [m for _, m in scored] == [0.0] * 6

    def test_hand_computed(self):
        ds = Dataset(
            [
                preference_tuple("a", [1.0, 0.0], [0.0, 0.0]),   # psi = (1, 0)
                preference_tuple("b", [0.0, 2.0], [0.0, 0.0]),   # psi = (0, 2)
                preference_tuple("c", [1.0, 1.0], [0.0, 0.0]),   # psi = (1, 1)
            ]
        )
        params = zero_params(2).theta.copy()
        params[:] = [2.0, -1.0]
        from mars.bt_core import reward_params

        scored = dict(score_margins(reward_params(params), ds))
        assert scored == {"a": 2.0, "b": -2.0, "c": 1.0}

    def test_order_stable_and_permutation_invariant(self, rng):
        ds = random_dataset(rng, 8, 4)
        params = random_params(rng, 4)
        scored = score_margins(params, ds)
        assert [tid for tid, _ in scored] == list(ds.ids())
        perm = rng.permutation(8)
        shuffled = Dataset([ds[i] for i in perm])
        assert dict(score_margins(params, shuffled)) == dict(scored)


class TestAllocate:
    def test_uniform_when_equal(self):
        cfg = MarsConfig(tau=0.1)
        w = allocate([1.5, -1.5, 1.5, 1.5], cfg)
        np.testing.assert_allclose(w.q, 0.25, atol=1e-15)

    def test_two_point_closed_form(self):
        cfg = MarsConfig(tau=0.1)
        w = allocate([0.0, 10.0], cfg)
        assert w.q[0] / w.q[1] == pytest.approx(math.e, rel=1e-12)
        assert w.q[0] == pytest.approx(E_OVER_E_PLUS_1, abs=1e-12)

    def test_sharper_tau_moves_mass_to_small_margin(self):
        margins = [0.5, 3.0, 7.0]
        soft = allocate(margins, MarsConfig(tau=0.1)).q
        sharp = allocate(margins, MarsConfig(tau=1.0)).q
        assert sharp[0] > soft[0]

    def test_sums_to_one(self, rng):
        for _ in range(50):
            margins = rng.uniform(-30, 30, size=rng.integers(1, 40))
            q = allocate(margins, MarsConfig(tau=float(rng.uniform(0.01, 1.0)))).q
            assert abs(q.sum() - 1.0) <= 1e-12
            assert np.all(q >= 0)

    def test_monotone_in_abs_margin(self, rng):
        margins = rng.uniform(-5, 5, size=30)
        q = allocate(margins, MarsConfig(tau=0.7)).q
        order = np.argsort(np.abs(margins))
        assert np.all(np.diff(q[order]) <= 1e-15)

    def test_stable_for_huge_margins(self):
        q = allocate([0.0, 5000.0], MarsConfig(tau=1.0)).q
        assert np.all(np.isfinite(q))
        assert q[0] == pytest.approx(1.0)

    def test_empty_rejected(self):
        with pytest.raises(EmptyDatasetError):
            allocate([], MarsConfig())


def oracle_largest_remainder(q, budget):
    """Independent reimplementation: floors, then +1 by largest fraction."""
    floors = [math.floor(budget * qi) for qi in q]
    fracs = sorted(range(len(q)), key=lambda i: (-(budget * q[i] - floors[i]), i))
    short = budget - sum(floors)
    for k in range(short):
        floors[fracs[k]] += 1
    return floors


class TestRoundBudget:
    def test_zero_budget(self):
        w = AllocationWeights(q=np.array([0.4, 0.6]))
        assert round_budget(w, 0).tolist() == [0, 0]

    def test_exact_proportions(self):
        w = AllocationWeights(q=np.array([0.5, 0.3, 0.2]))
        assert round_budget(w, 10).tolist() == [5, 3, 2]

    def test_equal_thirds(self):
        w = AllocationWeights(q=np.array([1.0, 1.0, 1.0]) / 3.0)
        b = round_budget(w, 10)
        assert b.sum() == 10
        assert b.max() - b.min() <= 1

    def test_matches_oracle_without_tie_keys(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 25))
            raw = rng.uniform(0.01, 1.0, size=n)
            q = raw / raw.sum()
            budget = int(rng.integers(0, 200))
            ours = round_budget(AllocationWeights(q=q), budget)
            assert ours.sum() == budget
            assert ours.tolist() == oracle_largest_remainder(q.tolist(), budget)

    def test_remainder_tie_breaks_to_smaller_margin_then_id(self):
        q = np.array([0.25, 0.25, 0.25, 0.25])
        w = AllocationWeights(q=q)
        # budget 2: all remainders 0.5; two units go to smallest |margin|
        b = round_budget(w, 2, abs_margins=[3.0, 1.0, 2.0, 0.5], tuple_ids=["a", "b", "c", "d"])
        assert b.tolist() == [0, 1, 0, 1]
        # equal margins: ids decide
        b = round_budget(w, 2, abs_margins=[1.0, 1.0, 1.0, 1.0], tuple_ids=["d", "a", "c", "b"])
        assert b.tolist() == [0, 1, 0, 1]


class TestSplitCounts:
    def test_balanced_odd(self):
        assert split_counts(5, "balanced") == (3, 2)

    def test_zero(self):
        assert split_counts(0, "balanced") == (0, 0)

    def test_one_sided(self):
        assert split_counts(4, "chosen_only") == (4, 0)
        assert split_counts(4, "rejected_only") == (0, 4)

    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            split_counts(-1, "balanced")


class TestSynthesizePairs:
    def test_one_one_yields_three(self, rng):
        tup = random_tuple(rng, 3, "t0")
        out = synthesize_pairs(tup, 1, 1, jitter_augmenter())
        assert len(out) == 3

    def test_zero_zero_yields_nothing(self, rng):
        tup = random_tuple(rng, 3, "t0")
        assert synthesize_pairs(tup, 0, 0, jitter_augmenter()) == []

    def test_enumeration_two_three(self, rng):
        tup = random_tuple(rng, 4, "t0")
        out = synthesize_pairs(tup, 2, 3, jitter_augmenter(), epoch=2)
        assert len(out) == (2 + 1) * (3 + 1) - 1
        ids = {t.id for t in out}
        assert len(ids) == 11
        for t in out:
            assert t.origin == "synthetic"
            assert t.parent_id == "t0"

    def test_label_preserved_and_psi_consistent(self, rng):
        tup = random_tuple(rng, 4, "t0")
        out = synthesize_pairs(tup, 2, 2, jitter_augmenter(scale=0.01), epoch=1)
        for t in out:
            np.testing.assert_allclose(t.psi, t.chosen_feat - t.rejected_feat, atol=1e-15)
            # variants stay near their own side's parent payload
            assert (
                np.max(np.abs(t.chosen_feat - tup.chosen_feat)) <= 0.01 + 1e-12
                or np.max(np.abs(t.rejected_feat - tup.rejected_feat)) <= 0.01 + 1e-12
            )

    def test_original_pair_excluded(self, rng):
        tup = random_tuple(rng, 3, "t0")
        out = synthesize_pairs(tup, 1, 1, identity_augmenter(), epoch=1)
        # with an identity augmenter features coincide, but ids never do
        assert all(t.id != tup.id for t in out)
        assert len(out) == 3

    def test_failure_is_all_or_nothing(self, rng):
        tup = random_tuple(rng, 3, "t0")  # no payload: text augmenter must fail
        aug = Augmenter(AugmenterSpec(kind="token_perturb", seed=0, edit_rate=0.2))
        with pytest.raises(AugmentationError) as exc:
            synthesize_pairs(tup, 1, 1, aug)
        assert exc.value.parent_id == "t0"


class TestBuildPlan:
    def test_budget_conserved_and_validated(self, rng):
        scored = [(f"t{i}", float(m)) for i, m in enumerate(rng.uniform(-4, 4, size=17))]
        plan = build_plan(scored, MarsConfig(budget_B=31, tau=0.6))
        assert sum(r.b for r in plan.records) == 31
        assert all(r.n_plus + r.n_minus == r.b for r in plan.records)

    def test_hard_sample_gets_weakly_largest_budget(self, rng):
        for trial in range(30):
            margins = rng.uniform(-6, 6, size=12)
            scored = [(f"t{i}", float(m)) for i, m in enumerate(margins)]
            plan = build_plan(scored, MarsConfig(budget_B=int(rng.integers(0, 60)), tau=1.0))
            hardest = int(np.argmin(np.abs(margins)))
            assert plan.records[hardest].b == max(r.b for r in plan.records)

    def test_plan_invariant_enforced(self):
        with pytest.raises(ConfigError):
            AugmentationPlan(records=(PlanRecord("a", 1.0, 2, 1, 1),), budget=3)
        with pytest.raises(ConfigError):
            AugmentationPlan(records=(PlanRecord("a", 1.0, 2, 2, 1),), budget=2)


class TestRunMars:
    def test_budget_zero_equals_plain_training(self, rng):
        ds = random_dataset(rng, 12, 4)
        tc = TrainConfig(learning_rate=0.4, epochs_inner=20)
        cfg = MarsConfig(epochs_T=2, budget_B=0)
        params, reports = run_mars(ds, zero_params(4), cfg, tc, jitter_augmenter())
        # two plain rounds of training on the unchanged dataset
        direct = train(train(zero_params(4), ds, tc), ds, tc)
        np.testing.assert_array_equal(params.theta, direct.theta)
        assert all(r.synthetic_added == 0 for r in reports)
        assert all(r.dataset_size_after == 12 for r in reports)

    def test_single_epoch_synthetic_count_matches_enumeration(self, rng):
        ds = random_dataset(rng, 4, 3)
        cfg = MarsConfig(epochs_T=1, budget_B=8, tau=0.5, split_policy="balanced")
        scored = score_margins(zero_params(3), ds)
        plan = build_plan(scored, cfg)
        expected = sum((r.n_plus + 1) * (r.n_minus + 1) - 1 for r in plan.records)
        _, reports = run_mars(ds, zero_params(3), cfg, TrainConfig(epochs_inner=5), jitter_augmenter())
        assert reports[0].synthetic_added == expected
        assert reports[0].dataset_size_after == 4 + expected

    def test_report_size_invariant(self, rng):
        ds = random_dataset(rng, 6, 3)
        cfg = MarsConfig(epochs_T=3, budget_B=5, tau=0.9)
        _, reports = run_mars(ds, zero_params(3), cfg, TrainConfig(epochs_inner=3), jitter_augmenter())
        for r in reports:
            assert r.dataset_size_after == r.dataset_size_before + r.synthetic_added

    def test_duplication_equivalence_identity_augmenter(self, rng):
        # scale-0 jitter makes synthetic tuples exact copies, so one epoch is
        # the same as training on an explicitly duplicated dataset
        ds = random_dataset(rng, 5, 3)
        tc = TrainConfig(learning_rate=0.3, epochs_inner=25)
        cfg = MarsConfig(epochs_T=1, budget_B=7, tau=0.8, cumulative=False)
        params, reports = run_mars(ds, zero_params(3), cfg, tc, identity_augmenter())

        plan = build_plan(score_margins(zero_params(3), ds), cfg)
        dup_tuples = list(ds.tuples)
        for record, tup in zip(plan.records, ds.tuples):
            copies = (record.n_plus + 1) * (record.n_minus + 1) - 1
            dup_tuples.extend(
                preference_tuple(f"{tup.id}/dup{k}", tup.chosen_feat, tup.rejected_feat) for k in range(copies)
            )
        direct = train(zero_params(3), Dataset(dup_tuples), tc)
        np.testing.assert_allclose(
            dataset_margins(params, ds), dataset_margins(direct, ds), atol=1e-12
        )

    def test_non_cumulative_resets_base(self, rng):
        ds = random_dataset(rng, 6, 3)
        cfg = MarsConfig(epochs_T=3, budget_B=6, tau=0.5, cumulative=False)
        _, reports = run_mars(ds, zero_params(3), cfg, TrainConfig(epochs_inner=3), jitter_augmenter())
        assert all(r.dataset_size_before == 6 for r in reports)

    def test_cumulative_grows_and_synthetic_not_reaugmented(self, rng):
        ds = random_dataset(rng, 6, 3)
        cfg = MarsConfig(epochs_T=2, budget_B=6, tau=0.5, cumulative=True)
        _, reports = run_mars(ds, zero_params(3), cfg, TrainConfig(epochs_inner=3), jitter_augmenter())
        assert reports[1].dataset_size_before == reports[0].dataset_size_after
        # budget is still fully spent on the originals each epoch
        assert reports[1].synthetic_added > 0

    def test_determinism_bit_identical(self, rng):
        ds = random_dataset(rng, 10, 4)
        cfg = MarsConfig(epochs_T=2, budget_B=12, tau=0.7, seed=5)
        tc = TrainConfig(learning_rate=0.4, epochs_inner=10)
        p1, r1 = run_mars(ds, zero_params(4), cfg, tc, jitter_augmenter(seed=3))
        p2, r2 = run_mars(ds, zero_params(4), cfg, tc, jitter_augmenter(seed=3))
        np.testing.assert_array_equal(p1.theta, p2.theta)
        for a, b in zip(r1, r2):
            assert a.loss_after == b.loss_after
            np.testing.assert_array_equal(a.margins, b.margins)

    def test_epoch_seed_varies_noise(self, rng):
        # same parent augmented in two epochs must not get identical noise
        ds = random_dataset(rng, 2, 3)
        cfg = MarsConfig(epochs_T=2, budget_B=2, tau=1.0, cumulative=True)
        collected = {}

        class Spy:
            def __init__(self, inner):
                self.inner = inner
                self.spec = inner.spec

            def reseeded(self, *salts):
                return Spy(self.inner.reseeded(*salts))

            def side_variants(self, tup, side, count):
                out = self.inner.side_variants(tup, side, count)
                collected.setdefault((tup.id, side), []).extend(vec for _, vec in out)
                return out

        _, reports = run_mars(ds, zero_params(3), cfg, TrainConfig(epochs_inner=1), Spy(jitter_augmenter(scale=0.1)))
        assert reports[0].synthetic_added > 0 and reports[1].synthetic_added > 0
        for vecs in collected.values():
            if len(vecs) >= 2:
                assert not np.array_equal(vecs[0], vecs[1])

    def test_allow_reaugment_extends_eligibility(self, rng):
        # with re-augmentation on, epoch-2 budget spreads over synthetic
        # tuples too, so the synthesized counts diverge from the default run
        ds = random_dataset(rng, 3, 3)
        tc = TrainConfig(epochs_inner=2)
        base = dict(epochs_T=2, budget_B=9, tau=0.5, cumulative=True)
        _, with_reaug = run_mars(ds, zero_params(3), MarsConfig(**base, allow_reaugment=True), tc, jitter_augmenter())
        _, without = run_mars(ds, zero_params(3), MarsConfig(**base), tc, jitter_augmenter())
        assert with_reaug[0].synthetic_added == without[0].synthetic_added
        assert with_reaug[1].synthetic_added != without[1].synthetic_added
        for reports in (with_reaug, without):
            assert all(r.dataset_size_after == r.dataset_size_before + r.synthetic_added for r in reports)


class TestRunAbort:
    def test_epoch_failure_carries_partial_reports(self, rng):
        # the augmenter survives exactly one epoch's calls (4 budgeted
        # tuples x 2 sides), then dies during epoch 2
        ds = random_dataset(rng, 4, 3)
        calls_left = [8]

        class DyingAugmenter:
            def __init__(self, inner):
                self.inner = inner
                self.spec = inner.spec

            def reseeded(self, *salts):
                return self

            def side_variants(self, tup, side, count):
                calls_left[0] -= 1
                if calls_left[0] < 0:
                    raise AugmentationError("augmenter down", tup.id)
                return self.inner.side_variants(tup, side, count)

        cfg = MarsConfig(epochs_T=3, budget_B=4, tau=0.5)
        with pytest.raises(AugmentationError) as exc:
            run_mars(ds, zero_params(3), cfg, TrainConfig(epochs_inner=2), DyingAugmenter(jitter_augmenter()))
        assert len(exc.value.partial_reports) == 1
        assert exc.value.partial_reports[0].epoch == 1


class TestUniformBaseline:
    def test_equal_margins_match_mars(self, rng):
        tuples = [preference_tuple(f"t{i}", [1.0, float(i)], [0.0, float(i)]) for i in range(4)]
        ds = Dataset(tuples)  # all psi = (1, 0): equal margins under any theta
        cfg = MarsConfig(epochs_T=1, budget_B=8, tau=0.3)
        tc = TrainConfig(epochs_inner=5)
        pm, rm = run_mars(ds, zero_params(2), cfg, tc, jitter_augmenter(seed=1))
        pu, ru = run_uniform_baseline(ds, zero_params(2), cfg, tc, jitter_augmenter(seed=1))
        np.testing.assert_array_equal(pm.theta, pu.theta)
        assert rm[0].synthetic_added == ru[0].synthetic_added

    def test_exact_division(self, rng):
        ds = random_dataset(rng, 4, 3)
        cfg = MarsConfig(epochs_T=1, budget_B=8, tau=0.3)
        scored = score_margins(random_params(rng, 3), ds)
        plan = build_plan(scored, cfg, uniform=True)
        assert [r.b for r in plan.records] == [2, 2, 2, 2]

    def test_differs_from_mars_on_spread_margins(self, rng):
        # margins spread enough that the softmax moves >= 1 unit after rounding
        tuples = [
            preference_tuple("near", [0.1, 0.0], [0.0, 0.0]),
            preference_tuple("far", [8.0, 0.0], [0.0, 0.0]),
        ]
        ds = Dataset(tuples)
        from mars.bt_core import reward_params

        params = reward_params([1.0, 0.0])
        cfg = MarsConfig(epochs_T=1, budget_B=10, tau=1.0)
        scored = score_margins(params, ds)
        mars_plan = build_plan(scored, cfg)
        uniform_plan = build_plan(scored, cfg, uniform=True)
        assert [r.b for r in uniform_plan.records] == [5, 5]
        assert mars_plan.records[0].b > uniform_plan.records[0].b


class TestConfigValidation:
    def test_tau_domain(self):
        with pytest.raises(ConfigError):
            MarsConfig(tau=0.0)
        with pytest.raises(ConfigError):
            MarsConfig(tau=1.5)

    def test_budget_nonnegative(self):
        with pytest.raises(ConfigError):
            MarsConfig(budget_B=-1)

    def test_split_policy_checked(self):
        with pytest.raises(ConfigError):
            MarsConfig(split_policy="sideways")
