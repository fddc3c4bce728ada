import math
import unittest

import numpy as np

from model_core import DimensionMismatchError, ModelVector, ScalarVector
from similarity import IndexSubset, SimilarityMetric, SimilarityRequirement, ZeroVectorError, cosine_similarity, \
    difference_proxy, euclidean_distance, evaluated_similarity, l2_norm, metric_value, model_difference, \
    objective_f, similarity_profile, subset_similarity


class MetricTests(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(11)

    def test_l2_norm(self):
        self.assertEqual(l2_norm(ModelVector([3.0, 4.0])), 5.0)

    def test_euclidean_distance(self):
        self.assertEqual(euclidean_distance(ModelVector([1.0, 1.0]), ModelVector([4.0, 5.0])), 5.0)

    def test_euclidean_distance_scales(self):
        for _ in range(100):
            a, b = self.rng.normal(size=5), self.rng.normal(size=5)
            k = self.rng.normal()
            self.assertAlmostEqual(euclidean_distance(k * a, k * b), abs(k) * euclidean_distance(a, b))

    def test_cosine(self):
        self.assertEqual(cosine_similarity(ModelVector([1.0, 0.0]), ModelVector([0.0, 1.0])), 0.0)
        self.assertAlmostEqual(cosine_similarity(ModelVector([1.0, 2.0]), ModelVector([2.0, 1.0])), 0.8)
        w = self.rng.normal(size=20)
        self.assertAlmostEqual(cosine_similarity(w, 3.5 * w), 1.0, places=12)

    def test_cosine_zero_operand(self):
        with self.assertRaises(ZeroVectorError):
            cosine_similarity(ModelVector([0.0, 0.0]), ModelVector([1.0, 0.0]))

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            euclidean_distance(ModelVector([1.0]), ModelVector([1.0, 2.0]))

    def test_metric_value_measures_against_reference(self):
        a, b = ModelVector([2.0, 0.0]), ModelVector([1.0, 0.0])
        self.assertEqual(metric_value(SimilarityMetric.L2_RATIO, a, b), 2.0)
        self.assertEqual(metric_value(SimilarityMetric.COSINE_TIMES_NORM_RATIO, a, b), 2.0)

    def test_requirement_band(self):
        requirement = SimilarityRequirement(SimilarityMetric.L2_RATIO, 0.8, 1.0)
        self.assertTrue(requirement.satisfied(1.0))
        self.assertFalse(requirement.satisfied(1.01))
        with self.assertRaises(ValueError):
            SimilarityRequirement(SimilarityMetric.COSINE, -2.0, 1.0)


class SubsetTests(unittest.TestCase):

    def test_full_subset_equals_full_metric(self):
        rng = np.random.default_rng(2)
        a, b = ModelVector(rng.normal(size=30)), ModelVector(rng.normal(size=30))
        for metric in SimilarityMetric:
            self.assertEqual(subset_similarity(a, b, IndexSubset.full(30), metric), metric_value(metric, a, b))

    def test_singleton_cosine(self):
        a = ModelVector([1.0, -2.0, 3.0])
        self.assertEqual(subset_similarity(a, a, IndexSubset([1], 3), SimilarityMetric.COSINE), 1.0)

    def test_zero_projection_under_cosine(self):
        a, b = ModelVector([1.0, 2.0]), ModelVector([1.0, 0.0])
        with self.assertRaises(ZeroVectorError):
            subset_similarity(a, b, IndexSubset([1], 2), SimilarityMetric.COSINE)

    def test_random_subset_size(self):
        rng = np.random.default_rng(5)
        s = IndexSubset.random(101, 0.5, rng)
        self.assertEqual(s.size, 51)
        self.assertTrue(np.all(np.diff(s.indices) > 0))
        self.assertEqual(IndexSubset.random(10, 1.0, rng).size, 10)

    def test_invalid_subsets(self):
        with self.assertRaises(ValueError):
            IndexSubset([2, 1], 3)
        with self.assertRaises(ValueError):
            IndexSubset([0, 3], 3)
        with self.assertRaises(ValueError):
            IndexSubset.random(10, 0.0, np.random.default_rng(0))


class DifferenceTests(unittest.TestCase):

    def test_model_difference(self):
        self.assertEqual(model_difference(ModelVector([1.0, 2.0]), ModelVector([2.0, 2.0])), 1.0)
        w = ModelVector([0.5, -1.0])
        self.assertEqual(model_difference(w, w), 0.0)

    def test_difference_of_scaled_model(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            w = rng.normal(size=12)
            a = rng.uniform(0.1, 3.0, size=12)
            expected = float(np.sum(np.abs(w) * np.abs(a - 1.0)))
            self.assertAlmostEqual(model_difference(w * a, w), expected)

    def test_difference_proxy(self):
        self.assertEqual(difference_proxy(ScalarVector([1.0, 2.5])), 3.5)


class ObjectiveTests(unittest.TestCase):

    def test_identity_scalars_give_unit_similarity(self):
        w = ModelVector([1.0, 2.0, -3.0])
        self.assertAlmostEqual(evaluated_similarity(w, ScalarVector.ones(3), SimilarityMetric.COSINE_TIMES_NORM_RATIO), 1.0)
        self.assertAlmostEqual(objective_f(w, ScalarVector.ones(3), SimilarityMetric.COSINE_TIMES_NORM_RATIO), 3.0)

    def test_fltrust_form(self):
        w = ModelVector([1.0, 2.0])
        a = ScalarVector([2.0, 1.0])
        # (1*2 + 4*1) / (1*4 + 4*1) = 6 / 8
        self.assertAlmostEqual(evaluated_similarity(w, a, SimilarityMetric.COSINE_TIMES_NORM_RATIO), 0.75)
        self.assertAlmostEqual(objective_f(w, a, SimilarityMetric.COSINE_TIMES_NORM_RATIO), 2.25)

    def test_fltrust_form_matches_metric(self):
        rng = np.random.default_rng(4)
        w = ModelVector(rng.normal(size=16))
        a = ScalarVector(rng.uniform(0.5, 1.5, size=16))
        poisoned = w.values * a.values
        # the observed similarity of the poison, measured on the poison's own norm
        direct = cosine_similarity(poisoned, w) * l2_norm(w) / l2_norm(poisoned)
        self.assertAlmostEqual(evaluated_similarity(w, a, SimilarityMetric.COSINE_TIMES_NORM_RATIO), direct)

    def test_euclidean_objective(self):
        w = ModelVector([3.0, 4.0])
        a = ScalarVector([2.0, 2.0])
        self.assertAlmostEqual(objective_f(w, a, SimilarityMetric.EUCLIDEAN), 5.0 * 4.0)

    def test_norm_ratio_objective(self):
        w = ModelVector([3.0, 4.0])
        self.assertAlmostEqual(evaluated_similarity(w, ScalarVector.ones(2), SimilarityMetric.L2_RATIO), 1.0)
        self.assertAlmostEqual(objective_f(w, ScalarVector.ones(2), SimilarityMetric.L2_RATIO), 2.0)
        self.assertAlmostEqual(objective_f(w, ScalarVector([2.0, 2.0]), SimilarityMetric.L2_RATIO), 2.0 * 4.0)

    def test_profile(self):
        profile = similarity_profile(ModelVector([3.0, 4.0]), ScalarVector([2.0, 2.0]))
        self.assertAlmostEqual(profile['l2_ratio'], 2.0)
        self.assertAlmostEqual(profile['cosine'], 1.0)
        self.assertAlmostEqual(profile['euclidean'], 5.0)
        self.assertAlmostEqual(profile['difference'], 7.0)
        self.assertTrue(math.isclose(profile['cosine_times_norm_ratio'], 2.0))


if __name__ == '__main__':
    unittest.main()
