import math
import time
import unittest

import numpy as np

from attacks import AttackError, AttackKind, AttackMode, AttackPlan, ConstraintCheck, PoisonResult, \
    acceptance_test, faker_backdoor, faker_diversefl, faker_flame, faker_for_defense, faker_fltrust, faker_krum, \
    faker_normclip, faker_shieldfl, faker_sybil, fltrust_roots, grouped_objective, krum_bound, la_attack, \
    mb_attack, oracle_grid_max, output_layer_subset
from defenses import ClientUpdate, DefenseContext, DefenseKind, foolsgold, krum, shieldfl
from fl_sim import judge_attack_success
from model_core import GroupPartition, ModelVector, PartitionStrategy, ScalarVector, flatten, partition_groups
from similarity import IndexSubset, SimilarityMetric, cosine_similarity, euclidean_distance, l2_norm, objective_f


def per_parameter(w: ModelVector) -> GroupPartition:
    return GroupPartition(np.arange(w.dim), w.dim)


class PlanTests(unittest.TestCase):

    def test_margin_range(self):
        p = GroupPartition([0, 1], 2)
        with self.assertRaises(AttackError):
            AttackPlan(AttackKind.FAKER, DefenseKind.KRUM, AttackMode.SINGLE, p, margin=1.0)

    def test_cooperative_needs_two(self):
        p = GroupPartition([0, 1], 2)
        with self.assertRaises(AttackError):
            AttackPlan(AttackKind.FAKER, DefenseKind.KRUM, AttackMode.COOPERATIVE, p, m=1)

    def test_kind_names(self):
        self.assertEqual(AttackKind.from_name('faker_sybil'), AttackKind.FAKER_SYBIL)
        self.assertEqual(AttackMode.from_name('cooperative'), AttackMode.COOPERATIVE)
        with self.assertRaises(ValueError):
            AttackKind.from_name('gaussian')

    def test_failed_follows_checks(self):
        w = ModelVector([1.0])
        result = PoisonResult(w, None, 0.0, [ConstraintCheck('a', 1.0, 0.0, True),
                                             ConstraintCheck('b', -1.0, 0.0, False)])
        self.assertTrue(result.failed)
        self.assertFalse(result.succeeded)
        self.assertEqual(result.check('b').value, -1.0)
        self.assertIsNone(result.check('c'))


class ObjectiveTests(unittest.TestCase):

    def test_grouped_objective_matches_per_parameter_objective(self):
        rng = np.random.default_rng(3)
        for metric in SimilarityMetric:
            w = ModelVector(rng.normal(size=9))
            a = ScalarVector(rng.uniform(0.2, 2.0, size=9))
            self.assertAlmostEqual(grouped_objective(w.values ** 2, a.values, metric), objective_f(w, a, metric))

    def test_grouped_objective_rows(self):
        psi = np.array([1.0, 4.0])
        values = grouped_objective(psi, np.array([[2.0, 1.0], [1.0, 1.0]]), SimilarityMetric.COSINE_TIMES_NORM_RATIO)
        self.assertTrue(np.allclose(values, [2.25, 2.0]))

    def test_grouped_norm_ratio_is_relative_to_the_model(self):
        psi = np.array([9.0, 16.0])
        self.assertAlmostEqual(grouped_objective(psi, np.ones(2), SimilarityMetric.L2_RATIO), 2.0)
        # sqrt((4 * 9 + 1 * 16) / 25) * 3
        self.assertAlmostEqual(grouped_objective(psi, np.array([2.0, 1.0]), SimilarityMetric.L2_RATIO),
                               math.sqrt(52.0 / 25.0) * 3.0)


class FltrustTests(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(17)

    def test_known_instance(self):
        w = ModelVector([1.0, 2.0])
        result = faker_fltrust(w, per_parameter(w), self.rng, free_group=0, fixed_scalars=[1.0, 1.0])
        self.assertAlmostEqual(result.scalars.values[0], 2.0)
        self.assertAlmostEqual(result.scalars.values[1], 1.0)
        self.assertAlmostEqual(result.objective_value, 2.25)
        self.assertTrue(result.succeeded)
        self.assertTrue(np.allclose(result.poisoned.values, [2.0, 2.0]))

    def test_roots(self):
        plus, minus = fltrust_roots(1.0, 4.0, 4.0, 1.0)
        self.assertAlmostEqual(plus, 2.0)
        self.assertAlmostEqual(minus, -2.0)

    def test_roots_match_textbook_formula(self):
        for _ in range(200):
            psi, lam, beta, gam = self.rng.uniform(0.1, 5.0, size=4)
            q = psi * (beta - lam * gam)
            s = math.sqrt(psi * (lam ** 2 + psi * beta) * (psi * gam ** 2 + beta))
            d = psi * (lam + psi * gam)
            plus, minus = fltrust_roots(psi, lam, beta, gam)
            self.assertTrue(math.isclose(plus, (q + s) / d, rel_tol=1e-9))
            self.assertTrue(math.isclose(minus, (q - s) / d, rel_tol=1e-9))
            self.assertTrue(math.isclose(plus * minus, -beta / psi, rel_tol=1e-9))

    def test_random_models_keep_positive_cosine(self):
        for _ in range(50):
            w = flatten([self.rng.normal(size=(6, 4)), self.rng.normal(size=4), self.rng.normal(size=(4, 3)),
                         self.rng.normal(size=3)])
            p = partition_groups(w, PartitionStrategy.OUTPUT_LAYER_SPLIT)
            result = faker_fltrust(w, p, self.rng)
            self.assertTrue(result.succeeded, str(result.constraint_report))
            self.assertGreater(cosine_similarity(result.poisoned, w), 0.0)

    def test_closed_form_beats_grid(self):
        w = ModelVector(self.rng.normal(size=8))
        p = per_parameter(w)
        result = faker_fltrust(w, p, self.rng, free_group=3)
        psi = w.values ** 2
        group = result.scalars.values.copy()
        _, best = oracle_grid_max(group, 3, lambda rows: grouped_objective(psi, rows, SimilarityMetric.COSINE_TIMES_NORM_RATIO),
                                  None, 0.0, max(10.0, 2 * group[3]), 20_000)
        self.assertGreaterEqual(result.objective_value, best * (1 - 1e-6))

    def test_single_group_fails(self):
        w = ModelVector([1.0, 2.0])
        result = faker_fltrust(w, GroupPartition([0, 0], 1), self.rng)
        self.assertTrue(result.failed)

    def test_zero_model(self):
        with self.assertRaises(AttackError):
            faker_fltrust(ModelVector([0.0, 0.0]), GroupPartition([0, 1], 2), self.rng)

    def test_free_group_range(self):
        w = ModelVector([1.0, 2.0])
        with self.assertRaises(AttackError):
            faker_fltrust(w, per_parameter(w), self.rng, free_group=2)


class KrumConstructionTests(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(23)

    def test_known_instance(self):
        w = ModelVector([1.0, 1.0])
        w_g = ModelVector([1.5, 1.5])
        result = faker_krum(w, w_g, per_parameter(w), AttackMode.SINGLE, 10, 2, self.rng, fixed_scalars=[1.0, 1.0])
        self.assertAlmostEqual(result.scalars.values[0], 0.999 * (1.0 + math.sqrt(0.5)))
        self.assertTrue(result.succeeded)
        self.assertLess(euclidean_distance(result.poisoned, w), euclidean_distance(w_g, w))

    def test_bound(self):
        w = ModelVector([0.0, 0.0])
        w_g = ModelVector([3.0, 4.0])
        self.assertAlmostEqual(krum_bound(w, w_g, AttackMode.SINGLE, 10, 2), 5.0)
        self.assertAlmostEqual(krum_bound(w, w_g, AttackMode.COOPERATIVE, 10, 2), 5.0 * 7 / 5)
        with self.assertRaises(AttackError):
            krum_bound(w, w_g, AttackMode.COOPERATIVE, 5, 2)

    def test_random_instances_stay_inside_bound(self):
        for mode in AttackMode:
            for _ in range(30):
                w = ModelVector(self.rng.normal(size=16))
                w_g = ModelVector(w.values + self.rng.normal(0.0, 0.3, size=16))
                p = partition_groups(w, PartitionStrategy.UNIFORM_BLOCKS, 4)
                result = faker_krum(w, w_g, p, mode, 10, 3, self.rng)
                self.assertTrue(result.succeeded, str(result.constraint_report))
                self.assertLess(euclidean_distance(result.poisoned, w), krum_bound(w, w_g, mode, 10, 3))

    def test_poison_wins_krum_among_benign_models_near_w(self):
        selected = 0
        for round_index in range(100):
            w = ModelVector(self.rng.normal(size=200))
            benign = [w.values + self.rng.normal(scale=0.1, size=200) for _ in range(9)]
            w_g = w.with_values(np.mean(benign, axis=0))
            p = partition_groups(w, PartitionStrategy.UNIFORM_BLOCKS, 4)
            poison = faker_krum(w, w_g, p, AttackMode.SINGLE, 10, 1, self.rng).poisoned
            submitted = [ClientUpdate(0, poison, 1, round_index)]
            submitted += [ClientUpdate(c, w.with_values(b), 1, round_index) for c, b in enumerate(benign, start=1)]
            if krum(submitted, DefenseContext(m_assumed=1)).selected == 0:
                selected += 1
        self.assertGreaterEqual(selected, 99)

    def test_no_budget(self):
        w = ModelVector([1.0, 1.0])
        result = faker_krum(w, w, per_parameter(w), AttackMode.SINGLE, 10, 2, self.rng)
        self.assertTrue(result.failed)
        self.assertEqual(result.poisoned, w)


class NormClippingConstructionTests(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(29)

    def test_known_instance(self):
        w = ModelVector([3.0, 4.0])
        result = faker_normclip(w, per_parameter(w), self.rng, fixed_scalars=[1.0, 0.5])
        self.assertAlmostEqual(result.scalars.values[0], math.sqrt(21.0 / 9.0))
        self.assertAlmostEqual(l2_norm(result.poisoned), 5.0)
        self.assertTrue(result.succeeded)

    def test_assumed_upper_bound(self):
        w = ModelVector([3.0, 4.0])
        result = faker_normclip(w, per_parameter(w), self.rng, upper_assumed=10.0)
        self.assertAlmostEqual(l2_norm(result.poisoned), 10.0)

    def test_random_instances_hit_the_bound(self):
        for _ in range(30):
            w = ModelVector(self.rng.normal(size=12))
            result = faker_normclip(w, partition_groups(w, PartitionStrategy.UNIFORM_BLOCKS, 3), self.rng)
            self.assertTrue(result.succeeded, str(result.constraint_report))
            self.assertTrue(math.isclose(l2_norm(result.poisoned), l2_norm(w), rel_tol=1e-9))


class OtherConstructionTests(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(31)

    def test_diversefl_keeps_the_norm(self):
        w = ModelVector(self.rng.normal(size=10))
        result = faker_diversefl(w, partition_groups(w, PartitionStrategy.UNIFORM_BLOCKS, 2), self.rng)
        self.assertTrue(result.succeeded, str(result.constraint_report))
        self.assertAlmostEqual(l2_norm(result.poisoned), l2_norm(w))

    def test_diversefl_symmetric_model_degenerates(self):
        w = ModelVector([1.0, 1.0])
        result = faker_diversefl(w, per_parameter(w), self.rng, fixed_scalars=[1.0, 1.0])
        self.assertTrue(result.failed)
        self.assertTrue(np.allclose(result.poisoned.values, w.values))

    def test_shieldfl_scaling(self):
        w = ModelVector([1.0, -2.0, 0.5])
        result = faker_shieldfl(w, 10)
        self.assertTrue(np.allclose(result.poisoned.values, 11.0 * w.values))
        self.assertTrue(result.check('cosine_one').satisfied)
        with self.assertRaises(AttackError):
            faker_shieldfl(w, 0)

    def test_shieldfl_poison_outweighs_benign_models(self):
        successes = 0
        for round_index in range(100):
            g = ModelVector(self.rng.normal(size=500))
            w = g.with_values(g.values + self.rng.normal(scale=0.05, size=500))
            poison = faker_for_defense(DefenseKind.SHIELDFL, w, g, per_parameter(w), self.rng, 10, 1).poisoned
            self.assertAlmostEqual(cosine_similarity(poison, w.with_values((w.values + g.values) / 2.0)), 1.0)
            submitted = [ClientUpdate(0, poison, 1, round_index)]
            for c in range(1, 10):
                benign = g.with_values(g.values + self.rng.normal(scale=0.05, size=500))
                submitted.append(ClientUpdate(c, benign, 1, round_index))
            if judge_attack_success(DefenseKind.SHIELDFL, shieldfl(submitted, DefenseContext()), [0]):
                successes += 1
        self.assertGreaterEqual(successes, 99)

    def test_flame_poison_is_admitted(self):
        w = ModelVector(self.rng.normal(size=20))
        result = faker_flame(w, partition_groups(w, PartitionStrategy.UNIFORM_BLOCKS, 4), self.rng, n=10)
        self.assertTrue(result.check('flame_admitted').satisfied)
        self.assertTrue(acceptance_test(DefenseKind.FLAME, w, None, 10)(result.poisoned))

    def test_dispatch(self):
        w = ModelVector([1.0, 2.0, 3.0])
        p = per_parameter(w)
        self.assertTrue(np.allclose(faker_for_defense(DefenseKind.SHIELDFL, w, None, p, self.rng, 4, 1).poisoned.values,
                                    5.0 * w.values))
        self.assertTrue(faker_for_defense(DefenseKind.FOOLSGOLD, w, None, p, self.rng, 4, 1).check('cosine_positive').satisfied)
        with self.assertRaises(AttackError):
            faker_for_defense(DefenseKind.KRUM, w, None, p, self.rng, 4, 1)


class AcceptanceTests(unittest.TestCase):

    def setUp(self):
        self.w = ModelVector([3.0, 4.0])

    def test_norm_clipping(self):
        accept = acceptance_test(DefenseKind.NORM_CLIPPING, self.w, None, 10)
        self.assertTrue(accept(ModelVector([2.7, 3.6])))
        self.assertFalse(accept(ModelVector([3.3, 4.4])))
        self.assertFalse(accept(ModelVector([1.5, 2.0])))

    def test_krum(self):
        accept = acceptance_test(DefenseKind.KRUM, self.w, ModelVector([3.0, 5.0]), 10)
        self.assertTrue(accept(ModelVector([3.0, 4.5])))
        self.assertFalse(accept(ModelVector([3.0, 5.5])))

    def test_fltrust_and_diversefl(self):
        self.assertFalse(acceptance_test(DefenseKind.FLTRUST, self.w, None, 10)(ModelVector([-3.0, -4.0])))
        self.assertFalse(acceptance_test(DefenseKind.DIVERSEFL, self.w, None, 10)(ModelVector([30.0, 40.0])))
        self.assertTrue(acceptance_test(DefenseKind.DIVERSEFL, self.w, None, 10)(ModelVector([6.0, 8.0])))

    def test_flame(self):
        accept = acceptance_test(DefenseKind.FLAME, self.w, None, 10)
        self.assertTrue(accept(self.w))
        self.assertFalse(accept(ModelVector([-3.0, -4.0])))


class BaselineTests(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(37)
        self.w = ModelVector([3.0, 4.0])

    def test_la_accepted_first_try(self):
        result = la_attack(self.w, lambda c: True, self.rng)
        self.assertEqual(result.iterations, 1)
        self.assertEqual(result.shared_scalar, 10.0)
        self.assertIsNone(result.scalars)
        self.assertTrue(set(np.abs(result.poisoned.values / self.w.values).tolist()) == {10.0})

    def test_la_fails_against_norm_band(self):
        accept = acceptance_test(DefenseKind.NORM_CLIPPING, self.w, None, 10)
        result = la_attack(self.w, accept, self.rng)
        self.assertTrue(result.failed)
        self.assertEqual(result.iterations, 20)

    def test_mb_opposes_the_model(self):
        result = mb_attack(self.w, lambda c: l2_norm(c) <= 20.0)
        self.assertEqual(result.shared_scalar, 2.5)
        self.assertTrue(np.allclose(result.poisoned.values, [-7.5, -10.0]))
        self.assertEqual(result.iterations, 3)

    def test_mb_fails_against_fltrust(self):
        result = mb_attack(self.w, acceptance_test(DefenseKind.FLTRUST, self.w, None, 10))
        self.assertTrue(result.failed)


class BackdoorTests(unittest.TestCase):

    def test_output_layer_subset(self):
        w = flatten([np.ones((3, 2)), np.ones(2), np.ones((2, 2)), np.ones(2)])
        self.assertEqual(output_layer_subset(w).indices.tolist(), [8, 9, 10, 11, 12, 13])

    def test_shrinks_to_the_boundary(self):
        w = ModelVector([2.0, 2.0, 2.0, 1.0])
        result = faker_backdoor(w, IndexSubset([3], 4), lambda c: l2_norm(c) <= 3.0)
        self.assertTrue(result.succeeded)
        self.assertAlmostEqual(result.shared_scalar, math.sqrt(8.0 / 12.0), places=6)
        self.assertEqual(result.poisoned.values[3], 1.0)
        self.assertLessEqual(l2_norm(result.poisoned), 3.0)

    def test_already_accepted(self):
        w = ModelVector([1.0, 1.0])
        result = faker_backdoor(w, IndexSubset([1], 2), lambda c: True)
        self.assertEqual(result.shared_scalar, 1.0)
        self.assertEqual(result.poisoned, w)

    def test_infeasible(self):
        w = ModelVector([1.0, 1.0])
        result = faker_backdoor(w, IndexSubset([1], 2), lambda c: False)
        self.assertTrue(result.failed)


class SybilTests(unittest.TestCase):

    def test_independent_poisons(self):
        rng = np.random.default_rng(41)
        w = ModelVector(rng.normal(size=12))
        results = faker_sybil(w, 3, DefenseKind.FLTRUST, rng)
        self.assertEqual(len(results), 3)
        self.assertTrue(all(r.succeeded for r in results))
        self.assertNotEqual(results[0].poisoned, results[1].poisoned)

    def test_sybils_keep_a_learning_rate_under_foolsgold(self):
        rng = np.random.default_rng(43)
        kept = 0
        for _ in range(100):
            w_g = ModelVector(rng.normal(size=300))
            own = w_g.with_values(w_g.values + rng.normal(scale=0.05, size=300))
            sybils = faker_sybil(own, 3, DefenseKind.FOOLSGOLD, rng, w_g)
            submitted = [r.poisoned for r in sybils]
            submitted += [w_g.with_values(w_g.values + rng.normal(scale=0.05, size=300)) for _ in range(7)]
            history = {c: model.values - w_g.values for c, model in enumerate(submitted)}
            round_updates = [ClientUpdate(c, model, 1) for c, model in enumerate(submitted)]
            outcome = foolsgold(round_updates, DefenseContext(history=history))
            if all(outcome.scores[c] > 0 for c in range(3)):
                kept += 1
        self.assertGreaterEqual(kept, 95)

    def test_duplicated_poison_loses_its_rate(self):
        rng = np.random.default_rng(47)
        w_g = ModelVector(rng.normal(size=300))
        poison = faker_sybil(w_g.with_values(w_g.values + 0.1), 1, DefenseKind.FOOLSGOLD, rng, w_g)[0].poisoned
        submitted = [poison, poison] + [w_g.with_values(w_g.values + rng.normal(scale=0.05, size=300))
                                        for _ in range(5)]
        history = {c: model.values - w_g.values for c, model in enumerate(submitted)}
        outcome = foolsgold([ClientUpdate(c, model, 1) for c, model in enumerate(submitted)],
                            DefenseContext(history=history))
        self.assertEqual(outcome.scores[0], 0.0)
        self.assertEqual(outcome.scores[1], 0.0)

    def test_needs_one(self):
        w = ModelVector([1.0, 2.0])
        with self.assertRaises(AttackError):
            faker_sybil(w, 0, DefenseKind.FLTRUST, np.random.default_rng(0))


class TimingTests(unittest.TestCase):

    def test_faker_is_faster_than_la_and_mb(self):
        rng = np.random.default_rng(53)
        spent = {'faker': 0.0, 'la': 0.0, 'mb': 0.0}
        for _ in range(5):
            w = ModelVector(rng.normal(size=50_000))
            w_g = w.with_values(w.values + rng.normal(scale=0.001, size=w.dim))
            p = partition_groups(w, PartitionStrategy.UNIFORM_BLOCKS, 2)

            start = time.perf_counter()
            faker = faker_krum(w, w_g, p, AttackMode.SINGLE, 10, 1, rng)
            spent['faker'] += time.perf_counter() - start

            start = time.perf_counter()
            la = la_attack(w, acceptance_test(DefenseKind.KRUM, w, w_g, 10), rng)
            spent['la'] += time.perf_counter() - start

            start = time.perf_counter()
            mb = mb_attack(w, acceptance_test(DefenseKind.KRUM, w, w_g, 10))
            spent['mb'] += time.perf_counter() - start

            self.assertTrue(faker.succeeded)
            self.assertEqual(la.iterations, 20)
            self.assertEqual(mb.iterations, 20)
        self.assertLessEqual(spent['faker'], spent['la'])
        self.assertLessEqual(spent['faker'], spent['mb'])


class GridOracleTests(unittest.TestCase):

    def test_finds_known_maximum(self):
        psi = np.array([1.0, 4.0])
        scalar, value = oracle_grid_max([1.0, 1.0], 0,
                                        lambda rows: grouped_objective(psi, rows, SimilarityMetric.COSINE_TIMES_NORM_RATIO),
                                        None, 0.0, 10.0, 100_001)
        self.assertAlmostEqual(scalar, 2.0, places=3)
        self.assertAlmostEqual(value, 2.25, places=6)

    def test_constraint(self):
        scalar, _ = oracle_grid_max([1.0, 1.0], 0, lambda rows: rows[:, 0], lambda rows: rows[:, 0] <= 3.0 + 1e-9,
                                    0.0, 10.0, 1001)
        self.assertAlmostEqual(scalar, 3.0)

    def test_nothing_feasible(self):
        with self.assertRaises(AttackError):
            oracle_grid_max([1.0, 1.0], 0, lambda rows: rows[:, 0], lambda rows: rows[:, 0] < 0, 0.0, 1.0, 1000)

    def test_too_few_points(self):
        with self.assertRaises(AttackError):
            oracle_grid_max([1.0], 0, lambda rows: rows[:, 0], None, 0.0, 1.0, 999)


if __name__ == '__main__':
    unittest.main()
