'''
File holding the flat model representation, layer-aware group partitions and the scalar operator.
Every model the workbench touches (local, global, reference, poisoned) is a ModelVector.
'''
from __future__ import annotations

from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from uni_chars import *

Span = Tuple[int, int]
Shape = Tuple[int, ...]


class ModelError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


def _readonly(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


class ModelVector:
    '''
    Flat, finite float64 parameter vector of dimension J.
    Layer spans record which contiguous slice came from which weight array,
    shapes allow the layered model to be restored.
    '''

    __slots__ = ['values', 'layer_spans', 'layer_shapes']

    def __init__(self, values: Union[Sequence[float], np.ndarray],
                 layer_spans: Optional[Sequence[Span]] = None,
                 layer_shapes: Optional[Sequence[Shape]] = None) -> None:
        array = np.array(values, dtype=np.float64).reshape(-1)
        if array.size < 1:
            raise ModelError(f"{ERROR} empty model")
        if not np.all(np.isfinite(array)):
            raise ModelError(f"{ERROR} Model contains non-finite values")

        dim = array.size
        spans = tuple((int(o), int(n)) for o, n in layer_spans) if layer_spans is not None else ((0, dim),)
        expected = 0
        for offset, length in spans:
            if offset != expected or length < 1:
                raise ModelError(f"{ERROR} Layer spans {spans} do not partition [0, {dim})")
            expected += length
        if expected != dim:
            raise ModelError(f"{ERROR} Layer spans {spans} do not partition [0, {dim})")

        if layer_shapes is None:
            shapes = tuple((length,) for _, length in spans)
        else:
            shapes = tuple(tuple(int(x) for x in s) for s in layer_shapes)
            if len(shapes) != len(spans) or any(int(np.prod(s)) != n for s, (_, n) in zip(shapes, spans)):
                raise ModelError(f"{ERROR} Layer shapes {shapes} do not match spans {spans}")

        self.values: np.ndarray = _readonly(array)
        self.layer_spans: Tuple[Span, ...] = spans
        self.layer_shapes: Tuple[Shape, ...] = shapes

    @property
    def dim(self) -> int:
        return int(self.values.size)

    @property
    def layer_count(self) -> int:
        return len(self.layer_spans)

    def layer(self, index: int) -> np.ndarray:
        offset, length = self.layer_spans[index]
        return self.values[offset:offset + length]

    def with_values(self, values: Union[Sequence[float], np.ndarray]) -> ModelVector:
        '''
        New vector over the same layer layout.
        '''
        return ModelVector(values, self.layer_spans, self.layer_shapes)

    def __len__(self) -> int:
        return self.dim

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelVector):
            return NotImplemented
        return self.layer_spans == other.layer_spans and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore

    def __str__(self) -> str:
        return f"ModelVector(J={self.dim}, layers={self.layer_count})"

    def __repr__(self) -> str:
        return self.__str__()


def check_same_dim(a: ModelVector, b: ModelVector) -> None:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"{ERROR} Dimension mismatch: {a.dim} != {b.dim}")


def flatten(layered_model: Sequence[Union[np.ndarray, Sequence[float]]]) -> ModelVector:
    '''
    Concatenates weight arrays in layer order, row-major inside each array.

    :param layered_model: Sequence of weight arrays, one per layer.
    '''
    if len(layered_model) == 0:
        raise ModelError(f"{ERROR} empty model")

    parts: List[np.ndarray] = []
    spans: List[Span] = []
    shapes: List[Shape] = []
    offset = 0
    for index, layer in enumerate(layered_model):
        array = np.asarray(layer, dtype=np.float64)
        if array.size == 0:
            raise ModelError(f"{ERROR} Layer {index} is empty")
        if not np.all(np.isfinite(array)):
            raise ModelError(f"{ERROR} Layer {index} contains non-finite values")
        parts.append(array.reshape(-1, order='C'))
        spans.append((offset, array.size))
        shapes.append(array.shape)
        offset += array.size

    return ModelVector(np.concatenate(parts), spans, shapes)


def unflatten(mv: ModelVector) -> List[np.ndarray]:
    '''
    Restores the layered model recorded by `flatten`, arrays are writable copies.
    '''
    return [np.array(mv.layer(i)).reshape(shape, order='C') for i, shape in enumerate(mv.layer_shapes)]


class PartitionStrategy(Enum):
    OUTPUT_LAYER_SPLIT = 'output_layer_split'
    PER_LAYER = 'per_layer'
    UNIFORM_BLOCKS = 'uniform_blocks'

    @staticmethod
    def from_name(name: str) -> PartitionStrategy:
        for strategy in PartitionStrategy:
            if strategy.value == name:
                return strategy
        raise ValueError(f"{ERROR} Unknown partition strategy '{name}'")


class GroupPartition:
    '''
    Assignment of every parameter to one of T groups, scalars are shared inside a group.
    '''

    def __init__(self, group_of: Union[Sequence[int], np.ndarray], groups: int) -> None:
        assignment = np.array(group_of, dtype=np.int64).reshape(-1)
        if groups < 1:
            raise ModelError(f"{ERROR} Partition needs at least one group, got T={groups}")
        if groups > assignment.size:
            raise ModelError(f"{ERROR} Partition has T={groups} groups for only J={assignment.size} parameters")
        if assignment.size and (assignment.min() < 0 or assignment.max() >= groups):
            raise ModelError(f"{ERROR} Group indices must lie in [0, {groups})")
        sizes = np.bincount(assignment, minlength=groups)
        if np.any(sizes == 0):
            raise ModelError(f"{ERROR} Groups {np.flatnonzero(sizes == 0).tolist()} have no parameters")

        self.group_of: np.ndarray = _readonly(assignment)
        self.groups = int(groups)
        self.sizes: np.ndarray = _readonly(sizes)

    @property
    def dim(self) -> int:
        return int(self.group_of.size)

    def members(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.group_of == group)

    def group_sums(self, values: np.ndarray) -> np.ndarray:
        '''
        Per-group sums of the given per-parameter values.
        '''
        return np.bincount(self.group_of, weights=values, minlength=self.groups)

    def __str__(self) -> str:
        return f"GroupPartition(J={self.dim}, T={self.groups})"

    def __repr__(self) -> str:
        return self.__str__()


def output_layer_offset(mv: ModelVector) -> int:
    '''
    Offset of the output layer: the last weight matrix together with every array after it.
    A model made of flat arrays only ends in its last array.
    '''
    matrices = [offset for (offset, _), shape in zip(mv.layer_spans, mv.layer_shapes) if len(shape) >= 2]
    return matrices[-1] if matrices else mv.layer_spans[-1][0]


def partition_groups(mv: ModelVector, strategy: PartitionStrategy, blocks: Optional[int] = None) -> GroupPartition:
    '''
    Builds the group partition used to compress J scalars into T group scalars.

    :param mv: Model whose layer spans drive the layer-aware strategies.
    :param strategy: output_layer_split (T=2, group 0 is the output layer, weights and bias), per_layer or uniform_blocks.
    :param blocks: Number of contiguous near-equal blocks, only for uniform_blocks.
    '''
    dim = mv.dim
    if strategy == PartitionStrategy.OUTPUT_LAYER_SPLIT:
        if mv.layer_count < 2:
            raise ModelError(f"{ERROR} output_layer_split needs at least 2 layers, model has {mv.layer_count}")
        offset = output_layer_offset(mv)
        if offset == 0:
            raise ModelError(f"{ERROR} output_layer_split needs a layer before the output layer")
        group_of = np.ones(dim, dtype=np.int64)
        group_of[offset:] = 0
        return GroupPartition(group_of, 2)

    if strategy == PartitionStrategy.PER_LAYER:
        group_of = np.empty(dim, dtype=np.int64)
        for index, (offset, length) in enumerate(mv.layer_spans):
            group_of[offset:offset + length] = index
        return GroupPartition(group_of, mv.layer_count)

    if strategy == PartitionStrategy.UNIFORM_BLOCKS:
        if blocks is None or blocks < 1 or blocks > dim:
            raise ModelError(f"{ERROR} uniform_blocks needs 1 <= T <= J={dim}, got {blocks}")
        group_of = np.empty(dim, dtype=np.int64)
        for index, chunk in enumerate(np.array_split(np.arange(dim), blocks)):
            group_of[chunk] = index
        return GroupPartition(group_of, blocks)

    raise ValueError(f"{ERROR} Unknown partition strategy {strategy}")


class ScalarVector:
    '''
    The J positive scalars of an attack, applied elementwise to a model.
    '''

    __slots__ = ['values']

    def __init__(self, values: Union[Sequence[float], np.ndarray]) -> None:
        array = np.array(values, dtype=np.float64).reshape(-1)
        if array.size < 1:
            raise ModelError(f"{ERROR} empty scalar vector")
        if not np.all(np.isfinite(array)) or np.any(array <= 0):
            raise ModelError(f"{ERROR} Scalars must be finite and positive")
        self.values: np.ndarray = _readonly(array)

    @staticmethod
    def ones(dim: int) -> ScalarVector:
        return ScalarVector(np.ones(dim))

    @property
    def dim(self) -> int:
        return int(self.values.size)

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.values == 1.0))

    def __len__(self) -> int:
        return self.dim

    def __str__(self) -> str:
        return f"ScalarVector(J={self.dim}, min={self.values.min():.4g}, max={self.values.max():.4g})"

    def __repr__(self) -> str:
        return self.__str__()


def expand_group_scalars(group_scalars: Union[Sequence[float], np.ndarray], p: GroupPartition) -> ScalarVector:
    scalars = np.asarray(group_scalars, dtype=np.float64).reshape(-1)
    if scalars.size != p.groups:
        raise DimensionMismatchError(f"{ERROR} Got {scalars.size} group scalars for T={p.groups}")
    if np.any(scalars <= 0) or not np.all(np.isfinite(scalars)):
        raise ModelError(f"{ERROR} Group scalars must be finite and positive")
    return ScalarVector(scalars[p.group_of])


def apply_scalars(w: ModelVector, a: ScalarVector) -> ModelVector:
    '''
    The elementwise operator: result[j] = a[j] * w[j], layout preserved.
    '''
    if w.dim != a.dim:
        raise DimensionMismatchError(f"{ERROR} Dimension mismatch: model {w.dim} != scalars {a.dim}")
    return w.with_values(w.values * a.values)
