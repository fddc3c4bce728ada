'''
File holding the similarity metrics the defenses evaluate, the partial-parameter evaluation and the
model difference measures the attacks maximize.
'''
from __future__ import annotations

import math
from enum import Enum
from typing import Dict, Optional, Sequence, Union

import numpy as np

from model_core import DimensionMismatchError, ModelVector, ScalarVector
from uni_chars import *

Vector = Union[ModelVector, np.ndarray]

TOLERANCE = 1e-9


class ZeroVectorError(ValueError):
    pass


class SimilarityMetric(Enum):
    L2_RATIO = 'l2_ratio'
    EUCLIDEAN = 'euclidean'
    COSINE = 'cosine'
    COSINE_TIMES_NORM_RATIO = 'cosine_times_norm_ratio'


class SimilarityRequirement:
    '''
    Operational acceptance band [lower, upper] of a defense on one metric.
    '''

    def __init__(self, metric: SimilarityMetric, lower: float, upper: float) -> None:
        if lower > upper:
            raise ValueError(f"{ERROR} Requirement lower bound {lower} exceeds upper bound {upper}")
        if metric == SimilarityMetric.COSINE and (lower < -1.0 or upper > 1.0):
            raise ValueError(f"{ERROR} Cosine bounds must lie in [-1, 1], got [{lower}, {upper}]")
        self.metric = metric
        self.lower = float(lower)
        self.upper = float(upper)

    def satisfied(self, value: float) -> bool:
        return self.lower - TOLERANCE <= value <= self.upper + TOLERANCE

    def __str__(self) -> str:
        return f"{self.metric.value} in [{self.lower}, {self.upper}]"

    def __repr__(self) -> str:
        return self.__str__()


class IndexSubset:
    '''
    Sorted distinct parameter indices, the J' parameters evaluated by the partial-parameter defense.
    '''

    def __init__(self, indices: Union[Sequence[int], np.ndarray], dim: Optional[int] = None) -> None:
        array = np.array(indices, dtype=np.int64).reshape(-1)
        if array.size == 0:
            raise ValueError(f"{ERROR} Index subset must not be empty")
        if np.any(np.diff(array) <= 0):
            raise ValueError(f"{ERROR} Index subset must be strictly increasing")
        if array[0] < 0 or (dim is not None and array[-1] >= dim):
            raise ValueError(f"{ERROR} Index subset out of range for dimension {dim}")
        array.setflags(write=False)
        self.indices = array
        self.dim = dim

    @staticmethod
    def full(dim: int) -> IndexSubset:
        return IndexSubset(np.arange(dim), dim)

    @staticmethod
    def random(dim: int, fraction: float, rng: np.random.Generator) -> IndexSubset:
        '''
        Uniformly drawn subset of size ceil(fraction * dim).
        '''
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"{ERROR} Subset fraction must lie in (0, 1], got {fraction}")
        size = max(1, math.ceil(fraction * dim))
        if size >= dim:
            return IndexSubset.full(dim)
        return IndexSubset(np.sort(rng.choice(dim, size=size, replace=False)), dim)

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def project(self, values: Vector) -> np.ndarray:
        array = _values(values)
        if self.indices[-1] >= array.size:
            raise DimensionMismatchError(f"{ERROR} Subset index {self.indices[-1]} out of range for J={array.size}")
        return array[self.indices]

    def __len__(self) -> int:
        return self.size

    def __str__(self) -> str:
        return f"IndexSubset({self.size} of {self.dim})"

    def __repr__(self) -> str:
        return self.__str__()


def _values(x: Union[Vector, ScalarVector]) -> np.ndarray:
    if isinstance(x, (ModelVector, ScalarVector)):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _pair(a: Vector, b: Vector):
    va, vb = _values(a), _values(b)
    if va.shape != vb.shape:
        raise DimensionMismatchError(f"{ERROR} Dimension mismatch: {va.size} != {vb.size}")
    return va, vb


def l2_norm(w: Vector) -> float:
    v = _values(w)
    return math.sqrt(float(np.sum(v * v)))


def euclidean_distance(a: Vector, b: Vector) -> float:
    va, vb = _pair(a, b)
    d = va - vb
    return math.sqrt(float(np.sum(d * d)))


def cosine_similarity(a: Vector, b: Vector) -> float:
    '''
    Cosine of the angle between two vectors, clamped to [-1, 1].
    A zero operand has no direction and raises ZeroVectorError.
    '''
    va, vb = _pair(a, b)
    na, nb = l2_norm(va), l2_norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError(f"{ERROR} Cosine similarity of a zero vector is undefined")
    value = float(np.sum(va * vb)) / (na * nb)
    return min(1.0, max(-1.0, value))


def metric_value(metric: SimilarityMetric, a: Vector, b: Vector) -> float:
    '''
    Similarity of `a` measured against the reference `b`.

    :param metric: L2 ratio L(a)/L(b), Euclidean E(a,b), cosine C(a,b) or C(a,b)*L(a)/L(b).
    '''
    if metric == SimilarityMetric.EUCLIDEAN:
        return euclidean_distance(a, b)
    if metric == SimilarityMetric.COSINE:
        return cosine_similarity(a, b)

    nb = l2_norm(b)
    if nb == 0.0:
        raise ZeroVectorError(f"{ERROR} Norm ratio against a zero reference is undefined")
    ratio = l2_norm(a) / nb
    if metric == SimilarityMetric.L2_RATIO:
        return ratio
    if metric == SimilarityMetric.COSINE_TIMES_NORM_RATIO:
        return cosine_similarity(a, b) * ratio
    raise ValueError(f"{ERROR} Unknown metric {metric}")


def subset_similarity(a: Vector, b: Vector, s: IndexSubset, metric: SimilarityMetric) -> float:
    return metric_value(metric, s.project(a), s.project(b))


def model_difference(a: Vector, b: Vector) -> float:
    '''
    Sum of absolute per-parameter differences.
    '''
    va, vb = _pair(a, b)
    return float(np.sum(np.abs(va - vb)))


def difference_proxy(a: ScalarVector) -> float:
    return float(np.sum(a.values))


def evaluated_similarity(w: Vector, a: ScalarVector, metric: SimilarityMetric) -> float:
    '''
    The similarity the defense observes for the poison a*w against the attacker's own model w.
    For the cosine times norm ratio this reduces to sum(w^2 a) / sum(w^2 a^2).
    '''
    v = _values(w)
    if v.shape != a.values.shape:
        raise DimensionMismatchError(f"{ERROR} Dimension mismatch: model {v.size} != scalars {a.dim}")
    poisoned = v * a.values

    if metric == SimilarityMetric.COSINE_TIMES_NORM_RATIO:
        squares = v * v
        denominator = float(np.sum(squares * a.values * a.values))
        if denominator == 0.0:
            raise ZeroVectorError(f"{ERROR} Objective undefined for a zero model")
        return float(np.sum(squares * a.values)) / denominator
    return metric_value(metric, poisoned, v)


def objective_f(w: Vector, a: ScalarVector, metric: SimilarityMetric) -> float:
    '''
    Attack objective: evaluated similarity times the difference proxy sum(a).
    '''
    return evaluated_similarity(w, a, metric) * difference_proxy(a)


def similarity_profile(w: Vector, a: ScalarVector) -> Dict[str, float]:
    '''
    Every metric of the poison a*w against w, for inspection next to the multiplied objective.
    '''
    v = _values(w)
    poisoned = v * a.values
    profile = {
        'l2_ratio': metric_value(SimilarityMetric.L2_RATIO, poisoned, v),
        'euclidean': euclidean_distance(poisoned, v),
        'cosine': cosine_similarity(poisoned, v),
        'difference': model_difference(poisoned, v),
        'difference_proxy': difference_proxy(a),
    }
    profile['cosine_times_norm_ratio'] = profile['cosine'] * profile['l2_ratio']
    return profile
