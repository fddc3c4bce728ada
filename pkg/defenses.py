'''
File holding the aggregation rules the server runs every round, the partial-parameter (SPP) wrapper
and the error-rate baseline. Every rule consumes the round's ClientUpdates and a DefenseContext and
returns an AggregationOutcome.
'''
from __future__ import annotations

import copy
import math
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import sklearn.metrics.pairwise as smp
from sklearn.cluster import AgglomerativeClustering

from model_core import ModelVector, check_same_dim
from similarity import IndexSubset, SimilarityMetric, TOLERANCE, ZeroVectorError, cosine_similarity, l2_norm, \
    metric_value
from uni_chars import *


class DefenseError(ValueError):
    pass


class DefenseKind(Enum):
    FEDAVG = 'fedavg'
    KRUM = 'krum'
    NORM_CLIPPING = 'norm_clipping'
    FLTRUST = 'fltrust'
    FLAME = 'flame'
    DIVERSEFL = 'diversefl'
    SHIELDFL = 'shieldfl'
    FOOLSGOLD = 'foolsgold'
    ERR = 'err'

    @staticmethod
    def from_name(name: str) -> DefenseKind:
        for kind in DefenseKind:
            if kind.value == name:
                return kind
        raise ValueError(f"{ERROR} Unknown defense '{name}'")


class ClientUpdate:
    '''
    One client's submission in one round.
    '''

    def __init__(self, client_id: int, model: ModelVector, data_size: int, round: int = 0) -> None:
        if data_size < 1:
            raise DefenseError(f"{ERROR} Client {client_id} reports data size {data_size}, must be positive")
        self.client_id = int(client_id)
        self.model = model
        self.data_size = int(data_size)
        self.round = int(round)

    def __str__(self) -> str:
        return f"ClientUpdate(client={self.client_id}, round={self.round}, size={self.data_size})"

    def __repr__(self) -> str:
        return self.__str__()


class AggregationOutcome:
    '''
    The defense's verdict: per-client acceptance and weight, the aggregated global model
    and, for selection rules, the selected client. `scores` holds the per-client value the rule
    decided on (trust, clip factor, learning rate, ...). `contributions` is each client's share of the
    weighted sum, weight times the norm of the row it entered with, empty for selection rules.
    '''

    def __init__(self, global_model: Optional[ModelVector], accepted: Dict[int, bool], weights: Dict[int, float],
                 selected: Optional[int] = None, scores: Optional[Dict[int, float]] = None,
                 contributions: Optional[Dict[int, float]] = None) -> None:
        self.global_model = global_model
        self.accepted = accepted
        self.weights = weights
        self.selected = selected
        self.scores = scores if scores is not None else {}
        self.contributions = contributions if contributions is not None else {}

    @property
    def accepted_count(self) -> int:
        return sum(1 for v in self.accepted.values() if v)

    def __str__(self) -> str:
        return f"AggregationOutcome(accepted={self.accepted_count}/{len(self.accepted)}, selected={self.selected})"

    def __repr__(self) -> str:
        return self.__str__()


class NoSurvivorsError(RuntimeError):
    '''
    Every submission was rejected; the round is skipped and the caller keeps its global model.
    '''

    def __init__(self, outcome: AggregationOutcome, message: str = "no survivors") -> None:
        super().__init__(f"{ERROR} {message}")
        self.outcome = outcome


class DefenseContext:
    '''
    Everything the server knows besides the submissions.

    :param server_model: Model trained by the server on its clean data (FLTrust, DiverseFL, ShieldFL, SPP reference).
    :param norm_bounds: (lower, upper) L2 norm band for norm-clipping.
    :param m_assumed: Number of malicious clients Krum is configured for.
    :param history: Client id -> accumulated update vector (FoolsGold), owned by the caller.
    :param rng_seed: Seed of this round's defense randomness (FLAME noise).
    :param clean_eval: Error rate of a model on the server's clean data (ERR).
    :param previous_global: The global model of the previous round.
    :param subset: Parameter subset every similarity is evaluated on, set by the SPP wrapper.
    '''

    def __init__(self, server_model: Optional[ModelVector] = None,
                 norm_bounds: Optional[Tuple[float, float]] = None,
                 m_assumed: Optional[int] = None,
                 history: Optional[Dict[int, np.ndarray]] = None,
                 rng_seed: int = 0,
                 clean_eval: Optional[Callable[[ModelVector], float]] = None,
                 previous_global: Optional[ModelVector] = None,
                 kappa: float = 2.0,
                 err_tau: float = 0.10,
                 flame_noise: float = 0.001,
                 flame_cluster_distance: float = 0.05,
                 subset: Optional[IndexSubset] = None) -> None:
        self.server_model = server_model
        self.norm_bounds = norm_bounds
        self.m_assumed = m_assumed
        self.history = history if history is not None else {}
        self.rng_seed = int(rng_seed)
        self.clean_eval = clean_eval
        self.previous_global = previous_global
        self.kappa = float(kappa)
        self.err_tau = float(err_tau)
        self.flame_noise = float(flame_noise)
        self.flame_cluster_distance = float(flame_cluster_distance)
        self.subset = subset

    def with_subset(self, subset: Optional[IndexSubset]) -> DefenseContext:
        ret = copy.copy(self)
        ret.subset = subset
        return ret


Defense = Callable[[Sequence[ClientUpdate], DefenseContext], AggregationOutcome]


def _ordered(updates: Sequence[ClientUpdate]) -> List[ClientUpdate]:
    if len(updates) == 0:
        raise DefenseError(f"{ERROR} No updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    ids = [u.client_id for u in ordered]
    if len(set(ids)) != len(ids):
        raise DefenseError(f"{ERROR} Duplicate client ids in round: {ids}")
    for u in ordered[1:]:
        check_same_dim(ordered[0].model, u.model)
    return ordered


def _require(value, name: str, defense: str):
    if value is None:
        raise DefenseError(f"{ERROR} {defense} requires '{name}' in the defense context")
    return value


def _view(vector, ctx: DefenseContext) -> np.ndarray:
    values = vector.values if isinstance(vector, ModelVector) else np.asarray(vector, dtype=np.float64)
    if ctx.subset is None:
        return values
    return ctx.subset.project(values)


def _norm_scale(ctx: DefenseContext, dim: int) -> float:
    '''
    Factor turning a subset norm (or distance) into an estimate of the full one.
    '''
    if ctx.subset is None:
        return 1.0
    return math.sqrt(dim / ctx.subset.size)


def _safe_cosine(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    try:
        return cosine_similarity(a, b)
    except ZeroVectorError:
        return None


def _weighted_mean(rows: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    '''
    Normalized weighted mean over the rows with positive weight, in the given order.
    '''
    kept = [(r, w) for r, w in zip(rows, weights) if w > 0]
    assert kept, "weighted mean of nothing"
    total = sum(w for _, w in kept)
    stack = np.stack([r for r, _ in kept])
    normalized = np.array([w / total for _, w in kept])
    return np.sum(stack * normalized[:, None], axis=0)


def _outcome(ordered: Sequence[ClientUpdate], raw_weights: Sequence[float], rows: Sequence[np.ndarray],
             template: ModelVector, scores: Optional[Dict[int, float]] = None) -> AggregationOutcome:
    total = sum(w for w in raw_weights if w > 0)
    weights = {u.client_id: (w / total if w > 0 else 0.0) for u, w in zip(ordered, raw_weights)}
    accepted = {u.client_id: w > 0 for u, w in zip(ordered, raw_weights)}
    global_model = template.with_values(_weighted_mean(rows, raw_weights))
    mass = [float(np.linalg.norm(row)) * w if w > 0 else 0.0 for row, w in zip(rows, raw_weights)]
    spread = sum(mass)
    contributions = {u.client_id: (c / spread if spread > 0 else weights[u.client_id]) for u, c in zip(ordered, mass)}
    return AggregationOutcome(global_model, accepted, weights, scores=scores, contributions=contributions)


def _rejected_everyone(ordered: Sequence[ClientUpdate], ctx: DefenseContext,
                       scores: Optional[Dict[int, float]] = None) -> NoSurvivorsError:
    outcome = AggregationOutcome(ctx.previous_global, {u.client_id: False for u in ordered},
                                 {u.client_id: 0.0 for u in ordered}, scores=scores)
    return NoSurvivorsError(outcome)


def fedavg(updates: Sequence[ClientUpdate], ctx: Optional[DefenseContext] = None) -> AggregationOutcome:
    ordered = _ordered(updates)
    sizes = [float(u.data_size) for u in ordered]
    return _outcome(ordered, sizes, [u.model.values for u in ordered], ordered[0].model)


def krum(updates: Sequence[ClientUpdate], ctx: DefenseContext) -> AggregationOutcome:
    '''
    Selects the update with the smallest sum of distances to its n-m-1 nearest neighbours.
    Ties go to the lowest client id.
    '''
    ordered = _ordered(updates)
    m = _require(ctx.m_assumed, 'm_assumed', 'Krum')
    n = len(ordered)
    if n < m + 2:
        raise DefenseError(f"{ERROR} Krum needs n >= m + 2 clients, got n={n}, m={m}")

    scale = _norm_scale(ctx, ordered[0].model.dim)
    views = np.stack([_view(u.model, ctx) for u in ordered])
    neighbours = n - m - 1
    scores: Dict[int, float] = {}
    best_index = 0
    best_score = math.inf
    for i, u in enumerate(ordered):
        diff = views - views[i]
        distances = np.sqrt(np.sum(diff * diff, axis=1)) * scale
        others = np.sort(np.delete(distances, i))
        score = float(np.sum(others[:neighbours]))
        scores[u.client_id] = score
        if score < best_score:
            best_score = score
            best_index = i

    selected = ordered[best_index]
    accepted = {u.client_id: u.client_id == selected.client_id for u in ordered}
    weights = {u.client_id: 1.0 if u.client_id == selected.client_id else 0.0 for u in ordered}
    return AggregationOutcome(selected.model, accepted, weights, selected=selected.client_id, scores=scores)


def norm_clipping(updates: Sequence[ClientUpdate], ctx: DefenseContext) -> AggregationOutcome:
    ordered = _ordered(updates)
    lower, upper = _require(ctx.norm_bounds, 'norm_bounds', 'Norm-clipping')
    if not 0 <= lower <= upper:
        raise DefenseError(f"{ERROR} Norm bounds must satisfy 0 <= lower <= upper, got ({lower}, {upper})")

    slack = TOLERANCE * max(1.0, upper)
    scale = _norm_scale(ctx, ordered[0].model.dim)
    norms = {u.client_id: l2_norm(_view(u.model, ctx)) * scale for u in ordered}
    raw = [float(u.data_size) if lower - slack <= norms[u.client_id] <= upper + slack else 0.0 for u in ordered]
    if not any(raw):
        raise _rejected_everyone(ordered, ctx, norms)
    return _outcome(ordered, raw, [u.model.values for u in ordered], ordered[0].model, norms)


def fltrust(updates: Sequence[ClientUpdate], ctx: DefenseContext) -> AggregationOutcome:
    '''
    ReLU-cosine trust against the server model, every update rescaled to the server model's norm,
    trust-weighted average. Zero trust everywhere falls back to the server model.
    '''
    ordered = _ordered(updates)
    server = _require(ctx.server_model, 'server_model', 'FLTrust')
    check_same_dim(ordered[0].model, server)
    server_view = _view(server, ctx)
    server_norm = l2_norm(server)
    if server_norm == 0.0 or l2_norm(server_view) == 0.0:
        raise DefenseError(f"{ERROR} FLTrust requires a non-zero server model")

    trust: Dict[int, float] = {}
    rows: List[np.ndarray] = []
    for u in ordered:
        cosine = _safe_cosine(_view(u.model, ctx), server_view)
        norm = l2_norm(u.model)
        trust[u.client_id] = max(0.0, cosine) if cosine is not None and norm > 0 else 0.0
        rows.append(u.model.values * (server_norm / norm) if norm > 0 else u.model.values)

    raw = [trust[u.client_id] for u in ordered]
    if not any(raw):
        return AggregationOutcome(server, {u.client_id: False for u in ordered},
                                  {u.client_id: 0.0 for u in ordered}, scores=trust)
    return _outcome(ordered, raw, rows, ordered[0].model, trust)


def _cosine_distances(vectors: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.sum(vectors * vectors, axis=1))
    zero = norms == 0.0
    units = np.divide(vectors, norms[:, None], out=np.zeros_like(vectors), where=~zero[:, None])
    distances = 1.0 - np.clip(units @ units.T, -1.0, 1.0)
    distances[zero, :] = 2.0
    distances[:, zero] = 2.0
    distances = np.maximum((distances + distances.T) / 2.0, 0.0)
    np.fill_diagonal(distances, 0.0)
    return distances


def flame_admission(vectors: np.ndarray, threshold: float) -> np.ndarray:
    '''
    Average-linkage agglomerative clustering on cosine distances, admitting the largest cluster when it
    holds a majority (floor(n/2)+1); otherwise everyone is admitted.

    :param vectors: One row per submission, in client id order.
    :param threshold: Cosine distance at or above which clusters are not merged.
    '''
    n = vectors.shape[0]
    if n < 2:
        return np.ones(n, dtype=bool)
    distances = _cosine_distances(vectors)
    labels = AgglomerativeClustering(n_clusters=None, metric='precomputed', linkage='average',
                                     distance_threshold=threshold).fit(distances).labels_

    best_label = None
    best_size = 0
    for position in range(n):
        size = int(np.sum(labels == labels[position]))
        if size > best_size:
            best_size = size
            best_label = labels[position]

    if best_size < n // 2 + 1:
        return np.ones(n, dtype=bool)
    return labels == best_label


def flame(updates: Sequence[ClientUpdate], ctx: DefenseContext) -> AggregationOutcome:
    ordered = _ordered(updates)
    n = len(ordered)
    if n < 3:
        raise DefenseError(f"{ERROR} FLAME needs at least 3 clients, got {n}")

    views = np.stack([_view(u.model, ctx) for u in ordered])
    admitted = flame_admission(views, ctx.flame_cluster_distance)

    norms = np.array([l2_norm(u.model) for u in ordered])
    clip = float(np.median(norms[admitted]))
    factors: Dict[int, float] = {}
    rows: List[np.ndarray] = []
    for u, norm, ok in zip(ordered, norms, admitted):
        factor = min(1.0, clip / norm) if norm > 0 else 1.0
        factors[u.client_id] = factor if ok else 0.0
        rows.append(u.model.values * factor)

    raw = [1.0 if ok else 0.0 for ok in admitted]
    outcome = _outcome(ordered, raw, rows, ordered[0].model, factors)
    if ctx.flame_noise > 0:
        rng = np.random.default_rng(ctx.rng_seed)
        noisy = outcome.global_model.values + rng.normal(0.0, ctx.flame_noise * clip, size=outcome.global_model.dim)
        outcome.global_model = outcome.global_model.with_values(noisy)
    return outcome


def diversefl(updates: Sequence[ClientUpdate], ctx: DefenseContext) -> AggregationOutcome:
    ordered = _ordered(updates)
    server = _require(ctx.server_model, 'server_model', 'DiverseFL')
    check_same_dim(ordered[0].model, server)
    if ctx.kappa <= 1.0:
        raise DefenseError(f"{ERROR} DiverseFL band needs kappa > 1, got {ctx.kappa}")

    server_view = _view(server, ctx)
    server_norm = l2_norm(server_view)
    if server_norm == 0.0:
        raise DefenseError(f"{ERROR} DiverseFL requires a non-zero server model")

    ratios: Dict[int, float] = {}
    raw: List[float] = []
    for u in ordered:
        view = _view(u.model, ctx)
        cosine = _safe_cosine(view, server_view)
        ratio = l2_norm(view) / server_norm
        ratios[u.client_id] = ratio
        ok = cosine is not None and cosine > 0 and 1.0 / ctx.kappa - TOLERANCE <= ratio <= ctx.kappa + TOLERANCE
        raw.append(float(u.data_size) if ok else 0.0)

    if not any(raw):
        raise _rejected_everyone(ordered, ctx, ratios)
    return _outcome(ordered, raw, [u.model.values for u in ordered], ordered[0].model, ratios)


def shieldfl(updates: Sequence[ClientUpdate], ctx: DefenseContext) -> AggregationOutcome:
    '''
    Two passes of cosine similarity: the update least similar to the rest on average becomes the baseline,
    then every update is weighted by how far it points away from that baseline.
    '''
    ordered = _ordered(updates)
    n = len(ordered)
    if n < 2:
        raise DefenseError(f"{ERROR} ShieldFL needs at least 2 clients, got {n}")

    views = np.stack([_view(u.model, ctx) for u in ordered])
    cosines = 1.0 - _cosine_distances(views)
    np.fill_diagonal(cosines, 1.0)
    mean_cosine = (np.sum(cosines, axis=1) - 1.0) / (n - 1)
    baseline = int(np.argmin(mean_cosine))

    raw = [max(0.0, 1.0 - float(cosines[i, baseline])) for i in range(n)]
    if not any(raw):
        raw = [1.0] * n
    scores = {u.client_id: float(mean_cosine[i]) for i, u in enumerate(ordered)}
    return _outcome(ordered, raw, [u.model.values for u in ordered], ordered[0].model, scores)


def foolsgold(updates: Sequence[ClientUpdate], ctx: DefenseContext) -> AggregationOutcome:
    '''
    Learning rates from the pairwise cosine similarity of the clients' accumulated updates.
    Clients whose histories look alike are pushed towards zero.
    '''
    ordered = _ordered(updates)
    n = len(ordered)
    missing = [u.client_id for u in ordered if u.client_id not in ctx.history]
    if missing:
        raise DefenseError(f"{ERROR} FoolsGold has no history for clients {missing}")
    if n == 1:
        return _outcome(ordered, [1.0], [ordered[0].model.values], ordered[0].model, {ordered[0].client_id: 1.0})

    histories = np.stack([_view(ctx.history[u.client_id], ctx) for u in ordered])
    cs = smp.cosine_similarity(histories) - np.eye(n)
    max_cs = np.max(cs, axis=1)

    # pardoning
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if max_cs[i] < max_cs[j] and max_cs[j] > 0:
                cs[i][j] = cs[i][j] * max_cs[i] / max_cs[j]

    wv = np.clip(1.0 - np.max(cs, axis=1), 0.0, 1.0)
    if np.max(wv) > 0:
        wv = wv / np.max(wv)
        wv[wv == 1.0] = .99
        with np.errstate(divide='ignore'):
            wv = np.log(wv / (1.0 - wv)) + 0.5
        wv[wv > 1] = 1.0
        wv[wv < 0] = 0.0

    learning_rates = {u.client_id: float(wv[i]) for i, u in enumerate(ordered)}
    raw = [float(x) for x in wv]
    if not any(raw):
        raise _rejected_everyone(ordered, ctx, learning_rates)
    return _outcome(ordered, raw, [u.model.values for u in ordered], ordered[0].model, learning_rates)


def err_baseline(updates: Sequence[ClientUpdate], ctx: DefenseContext) -> AggregationOutcome:
    '''
    Rejects models whose clean-data error exceeds the round median by more than tau.
    '''
    ordered = _ordered(updates)
    evaluate = _require(ctx.clean_eval, 'clean_eval', 'ERR')
    errors = {u.client_id: float(evaluate(u.model)) for u in ordered}
    threshold = float(np.median(list(errors.values()))) + ctx.err_tau
    raw = [float(u.data_size) if errors[u.client_id] <= threshold else 0.0 for u in ordered]
    if not any(raw):
        raise _rejected_everyone(ordered, ctx, errors)
    return _outcome(ordered, raw, [u.model.values for u in ordered], ordered[0].model, errors)


DEFENSES: Dict[DefenseKind, Defense] = {
    DefenseKind.FEDAVG: fedavg,
    DefenseKind.KRUM: krum,
    DefenseKind.NORM_CLIPPING: norm_clipping,
    DefenseKind.FLTRUST: fltrust,
    DefenseKind.FLAME: flame,
    DefenseKind.DIVERSEFL: diversefl,
    DefenseKind.SHIELDFL: shieldfl,
    DefenseKind.FOOLSGOLD: foolsgold,
    DefenseKind.ERR: err_baseline,
}

SCREENING_METRIC: Dict[DefenseKind, Optional[SimilarityMetric]] = {
    DefenseKind.FEDAVG: None,
    DefenseKind.KRUM: SimilarityMetric.EUCLIDEAN,
    DefenseKind.NORM_CLIPPING: SimilarityMetric.L2_RATIO,
    DefenseKind.FLTRUST: SimilarityMetric.COSINE_TIMES_NORM_RATIO,
    DefenseKind.FLAME: SimilarityMetric.COSINE_TIMES_NORM_RATIO,
    DefenseKind.DIVERSEFL: SimilarityMetric.COSINE_TIMES_NORM_RATIO,
    DefenseKind.SHIELDFL: SimilarityMetric.COSINE,
    DefenseKind.FOOLSGOLD: SimilarityMetric.COSINE,
    DefenseKind.ERR: None,
}


SPP_BLOCKS = 8
SPP_OUTLIER_FACTOR = 3.0


class SppDefense:
    '''
    Similarity of partial parameters. After all submissions arrived, a fresh random subset of
    ceil(fraction * J) parameters is drawn. Every submission is compared with the reference on the
    subset and on SPP_BLOCKS consecutive slices of it; the largest disagreement with the full-vector
    value is its deviation. A submission is discarded when its deviation exceeds `tolerance` and
    SPP_OUTLIER_FACTOR times the round's median deviation, and the inner rule evaluates every
    similarity of the survivors on the subset only.
    '''

    def __init__(self, inner: DefenseKind, fraction: float, seed: int, tolerance: float = 0.02) -> None:
        if not 0.0 < fraction <= 1.0:
            raise DefenseError(f"{ERROR} SPP fraction must lie in (0, 1], got {fraction}")
        if tolerance < 0:
            raise DefenseError(f"{ERROR} SPP tolerance must be non-negative, got {tolerance}")
        self.kind = inner
        self.inner = DEFENSES[inner]
        self.fraction = float(fraction)
        self.seed = int(seed)
        self.tolerance = float(tolerance)

    def draw_subset(self, dim: int, round_index: int) -> IndexSubset:
        rng = np.random.default_rng([self.seed, round_index])
        return IndexSubset.random(dim, self.fraction, rng)

    def _reference(self, ordered: Sequence[ClientUpdate], ctx: DefenseContext) -> np.ndarray:
        if ctx.server_model is not None:
            return ctx.server_model.values
        return np.median(np.stack([u.model.values for u in ordered]), axis=0)

    @staticmethod
    def parts(subset: IndexSubset) -> List[IndexSubset]:
        '''
        The subset itself followed by its consecutive slices in flatten order, so slices stay inside a layer.
        '''
        blocks = np.array_split(subset.indices, min(SPP_BLOCKS, subset.size))
        return [subset] + [IndexSubset(block, subset.dim) for block in blocks if block.size]

    def screen(self, ordered: Sequence[ClientUpdate], ctx: DefenseContext, subset: IndexSubset) -> Dict[int, float]:
        '''
        Deviation of every submission between its partial and full-vector similarity to the reference,
        the maximum over the subset and its slices. The full subset screens nothing.
        '''
        metric = SCREENING_METRIC[self.kind]
        if metric is None or subset.size == subset.dim:
            return {u.client_id: 0.0 for u in ordered}

        reference = self._reference(ordered, ctx)
        parts = [(part.project(reference), part) for part in self.parts(subset)]
        relative = metric in (SimilarityMetric.EUCLIDEAN, SimilarityMetric.L2_RATIO)
        deviations: Dict[int, float] = {}
        for u in ordered:
            try:
                full = metric_value(metric, u.model.values, reference)
                worst = 0.0
                for reference_part, part in parts:
                    value = metric_value(metric, part.project(u.model), reference_part)
                    if metric == SimilarityMetric.EUCLIDEAN:
                        value *= math.sqrt(reference.size / part.size)
                    gap = abs(value - full)
                    if relative:
                        gap = gap / full if full > 0 else abs(value)
                    worst = max(worst, gap)
            except ZeroVectorError:
                worst = math.inf
            deviations[u.client_id] = worst
        return deviations

    def flag(self, deviations: Dict[int, float]) -> Set[int]:
        '''
        Clients whose deviation exceeds the tolerance and, from three submissions on, the outlier bound.
        '''
        threshold = self.tolerance
        if len(deviations) >= 3:
            finite = [d for d in deviations.values() if math.isfinite(d)]
            if finite:
                threshold = max(threshold, SPP_OUTLIER_FACTOR * float(np.median(finite)))
        return {cid for cid, d in deviations.items() if d > threshold}

    def __call__(self, updates: Sequence[ClientUpdate], ctx: DefenseContext) -> AggregationOutcome:
        ordered = _ordered(updates)
        subset = self.draw_subset(ordered[0].model.dim, ordered[0].round)
        deviations = self.screen(ordered, ctx, subset)
        flagged = self.flag(deviations)
        survivors = [u for u in ordered if u.client_id not in flagged]
        if not survivors:
            raise _rejected_everyone(ordered, ctx, deviations)

        inner_ctx = ctx if subset.size == subset.dim else ctx.with_subset(subset)
        try:
            outcome = self.inner(survivors, inner_ctx)
        except NoSurvivorsError as e:
            e.outcome.accepted.update({cid: False for cid in flagged})
            e.outcome.weights.update({cid: 0.0 for cid in flagged})
            raise
        for cid in flagged:
            outcome.accepted[cid] = False
            outcome.weights[cid] = 0.0
            if outcome.contributions:
                outcome.contributions[cid] = 0.0
        outcome.accepted = dict(sorted(outcome.accepted.items()))
        outcome.weights = dict(sorted(outcome.weights.items()))
        outcome.contributions = dict(sorted(outcome.contributions.items()))
        return outcome

    def __str__(self) -> str:
        return f"SPP({self.kind.value}, fraction={self.fraction})"


def spp_wrap(inner: DefenseKind, fraction: float, seed: int, tolerance: float = 0.02) -> SppDefense:
    return SppDefense(inner, fraction, seed, tolerance)


def build_defense(kind: DefenseKind, spp_fraction: Optional[float] = None, spp_seed: int = 0,
                  spp_tolerance: float = 0.02) -> Defense:
    if spp_fraction is None:
        return DEFENSES[kind]
    return spp_wrap(kind, spp_fraction, spp_seed, spp_tolerance)
