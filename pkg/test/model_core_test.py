import unittest

import numpy as np

from model_core import DimensionMismatchError, GroupPartition, ModelError, ModelVector, PartitionStrategy, \
    ScalarVector, apply_scalars, expand_group_scalars, flatten, output_layer_offset, partition_groups, unflatten


class ModelVectorTests(unittest.TestCase):

    def setUp(self):
        self.layered = [np.arange(6, dtype=float).reshape(2, 3), np.array([10.0, 11.0, 12.0]),
                        np.array([[20.0], [21.0], [22.0]]), np.array([30.0])]

    def test_flatten_order_is_layer_then_row_major(self):
        mv = flatten(self.layered)
        self.assertEqual(mv.dim, 13)
        self.assertEqual(mv.values.tolist(), [0, 1, 2, 3, 4, 5, 10, 11, 12, 20, 21, 22, 30])
        self.assertEqual(mv.layer_spans, ((0, 6), (6, 3), (9, 3), (12, 1)))

    def test_flatten_unflatten_restores_shapes(self):
        restored = unflatten(flatten(self.layered))
        self.assertEqual([r.shape for r in restored], [(2, 3), (3,), (3, 1), (1,)])
        for original, back in zip(self.layered, restored):
            self.assertTrue(np.array_equal(original, back))

    def test_flatten_single_weight(self):
        mv = flatten([np.array([1.5])])
        self.assertEqual(mv.dim, 1)
        self.assertEqual(mv.layer_count, 1)

    def test_empty_model_rejected(self):
        with self.assertRaises(ModelError) as ctx:
            flatten([])
        self.assertIn("empty model", str(ctx.exception))

    def test_non_finite_layer_names_the_layer(self):
        with self.assertRaises(ModelError) as ctx:
            flatten([np.ones(2), np.array([1.0, np.nan])])
        self.assertIn("Layer 1", str(ctx.exception))

    def test_values_are_read_only(self):
        mv = ModelVector([1.0, 2.0])
        with self.assertRaises(ValueError):
            mv.values[0] = 3.0

    def test_spans_must_partition(self):
        with self.assertRaises(ModelError):
            ModelVector([1.0, 2.0, 3.0], layer_spans=[(0, 1), (2, 1)])

    def test_equality(self):
        self.assertEqual(ModelVector([1.0, 2.0]), ModelVector([1.0, 2.0]))
        self.assertNotEqual(ModelVector([1.0, 2.0]), ModelVector([1.0, 2.5]))


class PartitionTests(unittest.TestCase):

    def setUp(self):
        self.mv = flatten([np.ones((4, 2)), np.ones(2), np.ones((2, 3)), np.ones(3)])

    def test_output_layer_split_puts_output_layer_in_group_zero(self):
        p = partition_groups(self.mv, PartitionStrategy.OUTPUT_LAYER_SPLIT)
        self.assertEqual(p.groups, 2)
        self.assertEqual(p.members(0).tolist(), list(range(10, 19)))
        self.assertEqual(int(p.sizes[1]), 10)

    def test_output_layer_split_of_flat_spans(self):
        mv = ModelVector(np.ones(12), layer_spans=[(0, 9), (9, 3)])
        self.assertEqual(output_layer_offset(mv), 9)
        p = partition_groups(mv, PartitionStrategy.OUTPUT_LAYER_SPLIT)
        self.assertEqual(p.members(0).tolist(), [9, 10, 11])

    def test_output_layer_split_needs_two_layers(self):
        with self.assertRaises(ModelError):
            partition_groups(ModelVector(np.ones(4)), PartitionStrategy.OUTPUT_LAYER_SPLIT)
        with self.assertRaises(ModelError):
            partition_groups(flatten([np.ones((2, 2)), np.ones(2)]), PartitionStrategy.OUTPUT_LAYER_SPLIT)

    def test_per_layer(self):
        p = partition_groups(self.mv, PartitionStrategy.PER_LAYER)
        self.assertEqual(p.groups, 4)
        self.assertEqual(p.sizes.tolist(), [8, 2, 6, 3])

    def test_uniform_blocks_covers_and_is_disjoint(self):
        p = partition_groups(self.mv, PartitionStrategy.UNIFORM_BLOCKS, 4)
        self.assertEqual(int(p.sizes.sum()), self.mv.dim)
        self.assertLessEqual(int(p.sizes.max() - p.sizes.min()), 1)
        members = np.concatenate([p.members(t) for t in range(p.groups)])
        self.assertEqual(sorted(members.tolist()), list(range(self.mv.dim)))

    def test_uniform_blocks_per_parameter(self):
        p = partition_groups(self.mv, PartitionStrategy.UNIFORM_BLOCKS, self.mv.dim)
        self.assertTrue(np.all(p.sizes == 1))

    def test_uniform_blocks_rejects_too_many_groups(self):
        with self.assertRaises(ModelError):
            partition_groups(self.mv, PartitionStrategy.UNIFORM_BLOCKS, self.mv.dim + 1)

    def test_empty_group_rejected(self):
        with self.assertRaises(ModelError):
            GroupPartition([0, 0, 2], 3)

    def test_strategy_from_name(self):
        self.assertEqual(PartitionStrategy.from_name('per_layer'), PartitionStrategy.PER_LAYER)
        with self.assertRaises(ValueError):
            PartitionStrategy.from_name('random')


class ScalarTests(unittest.TestCase):

    def test_scalars_must_be_positive(self):
        with self.assertRaises(ModelError):
            ScalarVector([1.0, 0.0])
        with self.assertRaises(ModelError):
            ScalarVector([1.0, -2.0])

    def test_expand_group_scalars(self):
        p = GroupPartition([1, 1, 0, 1], 2)
        a = expand_group_scalars([3.0, 0.5], p)
        self.assertEqual(a.values.tolist(), [0.5, 0.5, 3.0, 0.5])

    def test_apply_scalars_is_elementwise(self):
        w = ModelVector([1.0, -2.0, 4.0])
        poisoned = apply_scalars(w, ScalarVector([2.0, 0.5, 1.0]))
        self.assertEqual(poisoned.values.tolist(), [2.0, -1.0, 4.0])

    def test_apply_identity_returns_equal_model(self):
        w = ModelVector(np.random.default_rng(1).normal(size=10))
        self.assertEqual(apply_scalars(w, ScalarVector.ones(10)), w)
        self.assertTrue(ScalarVector.ones(10).is_identity)

    def test_apply_scalars_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            apply_scalars(ModelVector([1.0, 2.0]), ScalarVector([1.0]))


if __name__ == '__main__':
    unittest.main()
