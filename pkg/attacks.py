'''
File holding the poisoning attacks: the closed-form scalar constructions per defense, the iterative
LA/MB baselines, the backdoor and Sybil extensions and the brute-force grid oracle used to verify
the closed forms.

A construction only reads what a malicious client knows: its own benign model, the previous global
model, the defense in use and the round's head counts.
'''
from __future__ import annotations

import math
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from defenses import DefenseKind, flame_admission
from model_core import GroupPartition, ModelVector, PartitionStrategy, ScalarVector, apply_scalars, check_same_dim, \
    expand_group_scalars, output_layer_offset, partition_groups
from similarity import IndexSubset, SimilarityMetric, TOLERANCE, ZeroVectorError, cosine_similarity, \
    euclidean_distance, l2_norm, model_difference, objective_f
from uni_chars import *

POSITIVITY_FLOOR = 1e-8
FLTRUST_FIXED_BAND = (0.5, 1.5)
DEFAULT_MARGIN = 0.999
LA_START = 10.0
LA_THRESHOLD = 1e-5
MAX_RESAMPLES = 10
BISECTION_STEPS = 30

AcceptanceTest = Callable[[ModelVector], bool]
# (psi_free, lambda, beta, gamma) -> both roots of the free-scalar stationarity equation
FltrustSolver = Callable[[float, float, float, float], Tuple[float, float]]


class AttackError(ValueError):
    pass


class AttackKind(Enum):
    FAKER = 'faker'
    LA = 'la'
    MB = 'mb'
    FAKER_BACKDOOR = 'faker_backdoor'
    FAKER_SYBIL = 'faker_sybil'
    DUPLICATE = 'duplicate'

    @staticmethod
    def from_name(name: str) -> AttackKind:
        for kind in AttackKind:
            if kind.value == name:
                return kind
        raise ValueError(f"{ERROR} Unknown attack '{name}'")


class AttackMode(Enum):
    SINGLE = 'single'
    COOPERATIVE = 'cooperative'

    @staticmethod
    def from_name(name: str) -> AttackMode:
        for mode in AttackMode:
            if mode.value == name:
                return mode
        raise ValueError(f"{ERROR} Unknown attack mode '{name}'")


class AttackPlan:
    '''
    What the malicious clients do every attacked round.
    '''

    def __init__(self, kind: AttackKind, target_defense: DefenseKind, mode: AttackMode, partition: GroupPartition,
                 margin: float = DEFAULT_MARGIN, rng_seed: int = 0, m: int = 1) -> None:
        if not 0.0 < margin < 1.0:
            raise AttackError(f"{ERROR} Margin must lie in (0, 1), got {margin}")
        if mode == AttackMode.COOPERATIVE and m < 2:
            raise AttackError(f"{ERROR} Cooperative mode needs at least 2 malicious clients, got {m}")
        self.kind = kind
        self.target_defense = target_defense
        self.mode = mode
        self.partition = partition
        self.margin = float(margin)
        self.rng_seed = int(rng_seed)
        self.m = int(m)

    def __str__(self) -> str:
        return f"AttackPlan({self.kind.value} vs {self.target_defense.value}, {self.mode.value}, T={self.partition.groups})"

    def __repr__(self) -> str:
        return self.__str__()


class ConstraintCheck:
    def __init__(self, name: str, value: float, bound: float, satisfied: bool) -> None:
        self.name = name
        self.value = float(value)
        self.bound = float(bound)
        self.satisfied = bool(satisfied)

    def __str__(self) -> str:
        mark = SUCCESS if self.satisfied else ERROR
        return f"{mark} {self.name}: {self.value:.6g} (bound {self.bound:.6g})"

    def __repr__(self) -> str:
        return self.__str__()


class PoisonResult:
    '''
    A constructed poison together with the evidence that it meets the defense's requirement.
    `scalars` is absent for the shared-scalar baselines, `failed` is set whenever any check fails.
    '''

    def __init__(self, poisoned: ModelVector, scalars: Optional[ScalarVector], objective_value: float,
                 constraint_report: List[ConstraintCheck], failed: bool = False, iterations: int = 0,
                 shared_scalar: Optional[float] = None, note: str = "") -> None:
        self.poisoned = poisoned
        self.scalars = scalars
        self.objective_value = float(objective_value)
        self.constraint_report = constraint_report
        self.failed = failed or not all(c.satisfied for c in constraint_report)
        self.iterations = iterations
        self.shared_scalar = shared_scalar
        self.note = note

    @property
    def succeeded(self) -> bool:
        return not self.failed

    def check(self, name: str) -> Optional[ConstraintCheck]:
        for c in self.constraint_report:
            if c.name == name:
                return c
        return None

    def __str__(self) -> str:
        state = "failed" if self.failed else "ok"
        return f"PoisonResult({state}, f={self.objective_value:.6g}, checks={len(self.constraint_report)})"

    def __repr__(self) -> str:
        return self.__str__()


def group_squares(w: ModelVector, p: GroupPartition) -> np.ndarray:
    '''
    Per-group sums of squared weights; every group behaves like one parameter with this squared weight.
    '''
    if w.dim != p.dim:
        raise AttackError(f"{ERROR} Partition covers {p.dim} parameters, model has {w.dim}")
    return p.group_sums(w.values * w.values)


def grouped_objective(psi: np.ndarray, scalars: np.ndarray, metric: SimilarityMetric):
    '''
    Objective f = similarity * sum(scalars) over group scalars, vectorized over rows of `scalars`.
    Equals `objective_f` when every parameter is its own group.
    '''
    rows = np.atleast_2d(np.asarray(scalars, dtype=np.float64))
    weighted_sq = np.sum(rows * rows * psi, axis=1)
    if metric == SimilarityMetric.COSINE_TIMES_NORM_RATIO:
        similarity = np.sum(rows * psi, axis=1) / weighted_sq
    elif metric == SimilarityMetric.L2_RATIO:
        similarity = np.sqrt(weighted_sq / float(np.sum(psi)))
    elif metric == SimilarityMetric.EUCLIDEAN:
        similarity = np.sqrt(np.sum((rows - 1.0) ** 2 * psi, axis=1))
    elif metric == SimilarityMetric.COSINE:
        similarity = np.sum(rows * psi, axis=1) / (math.sqrt(float(np.sum(psi))) * np.sqrt(weighted_sq))
    else:
        raise AttackError(f"{ERROR} Unknown metric {metric}")
    values = similarity * np.sum(rows, axis=1)
    return values if np.ndim(scalars) == 2 else float(values[0])


def fltrust_roots(psi: float, lam: float, beta: float, gam: float) -> Tuple[float, float]:
    '''
    Roots of the stationarity equation of (lam + psi*a)(gam + a) / (beta + psi*a^2) in the free scalar a:
    a = [psi(beta - lam*gam) +- sqrt(psi(lam^2 + psi*beta)(psi*gam^2 + beta))] / [psi(lam + psi*gam)].
    The root product is -beta/psi, the root without cancellation is computed first.
    '''
    q = psi * (beta - lam * gam)
    d = psi * (lam + psi * gam)
    s = math.sqrt(psi * (lam * lam + psi * beta) * (psi * gam * gam + beta))
    if d == 0.0:
        return math.nan, math.nan
    if q >= 0:
        plus = (q + s) / d
        minus = -beta / (psi * plus) if plus != 0 else (q - s) / d
    else:
        minus = (q - s) / d
        plus = -beta / (psi * minus) if minus != 0 else (q + s) / d
    return plus, minus


def _split_fixed(p: GroupPartition, free_group: int, fixed_scalars: Optional[Sequence[float]],
                 sampler: Callable[[int], np.ndarray]) -> np.ndarray:
    if not 0 <= free_group < p.groups:
        raise AttackError(f"{ERROR} Free group {free_group} out of range for T={p.groups}")
    if fixed_scalars is not None:
        scalars = np.array(fixed_scalars, dtype=np.float64)
        if scalars.size != p.groups:
            raise AttackError(f"{ERROR} Got {scalars.size} fixed scalars for T={p.groups}")
    else:
        scalars = np.ones(p.groups)
        scalars[np.arange(p.groups) != free_group] = sampler(p.groups - 1)
    scalars[free_group] = 1.0
    if np.any(scalars <= 0):
        raise AttackError(f"{ERROR} Fixed scalars must be positive")
    return scalars


def _common_checks(scalars: ScalarVector) -> List[ConstraintCheck]:
    smallest = float(np.min(scalars.values))
    spread = float(np.max(np.abs(scalars.values - 1.0)))
    return [ConstraintCheck('scalars_positive', smallest, 0.0, smallest > 0),
            ConstraintCheck('scalar_not_identity', spread, 0.0, spread > 0)]


def _nonzero(w: ModelVector) -> None:
    if l2_norm(w) == 0.0:
        raise AttackError(f"{ERROR} Cannot poison an all-zero model")


def faker_fltrust(w: ModelVector, p: GroupPartition, rng: np.random.Generator, free_group: int = 0,
                  fixed_scalars: Optional[Sequence[float]] = None, solver: FltrustSolver = fltrust_roots) -> PoisonResult:
    '''
    Fixed groups get random scalars in [0.5, 1.5], the free group the maximizer of
    f = (sum psi a)(sum a) / (sum psi a^2) from the closed form. The poison keeps a positive cosine.

    :param w: The attacker's benign local model, standing in for the server's reference model.
    :param p: Group partition, group scalars are shared.
    :param free_group: Group solved in closed form, group 0 is the output layer under output_layer_split.
    :param fixed_scalars: Optional explicit group scalars for the fixed groups (free entry ignored).
    '''
    _nonzero(w)
    psi = group_squares(w, p)
    scalars = _split_fixed(p, free_group, fixed_scalars, lambda k: rng.uniform(*FLTRUST_FIXED_BAND, size=k))
    others = np.arange(p.groups) != free_group
    lam = float(np.sum(psi[others] * scalars[others]))
    beta = float(np.sum(psi[others] * scalars[others] ** 2))
    gam = float(np.sum(scalars[others]))
    psi_free = float(psi[free_group])

    note = ""
    failed = False
    if psi_free > 0 and p.groups > 1:
        plus, minus = solver(psi_free, lam, beta, gam)
        candidates = [r for r in (plus, minus) if math.isfinite(r) and r > 0]
        note = f"roots {plus:.6g}, {minus:.6g}"
        if candidates:
            def value(r: float) -> float:
                trial = scalars.copy()
                trial[free_group] = r
                return grouped_objective(psi, trial, SimilarityMetric.COSINE_TIMES_NORM_RATIO)
            scalars[free_group] = max(candidates, key=value)
        else:
            failed = True
    else:
        failed = True
        note = "free group carries no weight"

    expanded = expand_group_scalars(scalars, p)
    poisoned = apply_scalars(w, expanded)
    cosine = cosine_similarity(poisoned, w)
    report = [ConstraintCheck('cosine_positive', cosine, 0.0, cosine > 0)] + _common_checks(expanded)
    objective = grouped_objective(psi, scalars, SimilarityMetric.COSINE_TIMES_NORM_RATIO)
    return PoisonResult(poisoned, expanded, objective, report, failed=failed, note=note)


def krum_bound(w: ModelVector, w_g: ModelVector, mode: AttackMode, n: int, m: int) -> float:
    '''
    Distance budget of the poison around w: E(w_g, w), widened by (n-m-1)/(n-2m-1) when the m attackers
    submit the same poison.
    '''
    check_same_dim(w, w_g)
    distance = euclidean_distance(w_g, w)
    if mode == AttackMode.COOPERATIVE:
        if n <= 2 * m + 1:
            raise AttackError(f"{ERROR} Cooperative Krum bound needs n > 2m + 1, got n={n}, m={m}")
        return distance * (n - m - 1) / (n - 2 * m - 1)
    return distance


def faker_krum(w: ModelVector, w_g: ModelVector, p: GroupPartition, mode: AttackMode, n: int, m: int,
               rng: np.random.Generator, margin: float = DEFAULT_MARGIN, free_group: int = 0,
               fixed_scalars: Optional[Sequence[float]] = None) -> PoisonResult:
    '''
    Keeps E(poison, w) strictly below the distance budget. Fixed scalars are drawn from
    [1 - d, 1 + d] with d = bound / sqrt((T-1) max psi), the free scalar is set to margin times its upper bound
    1 + sqrt(R / psi_free), R being the budget left by the fixed groups.
    '''
    _nonzero(w)
    bound = krum_bound(w, w_g, mode, n, m)
    psi = group_squares(w, p)
    others = np.arange(p.groups) != free_group
    psi_free = float(psi[free_group]) if 0 <= free_group < p.groups else 0.0
    identity = ScalarVector.ones(w.dim)

    if bound == 0.0 or psi_free == 0.0:
        report = [ConstraintCheck('euclidean_below_bound', 0.0, bound, False)] + _common_checks(identity)
        return PoisonResult(w, identity, 0.0, report, failed=True, note="no distance budget")

    max_psi = float(np.max(psi[others])) if p.groups > 1 else 0.0
    width = bound / math.sqrt((p.groups - 1) * max_psi) if max_psi > 0 else 0.0
    low = max(POSITIVITY_FLOOR, 1.0 - width)

    scalars = None
    remaining = -1.0
    for _ in range(MAX_RESAMPLES if fixed_scalars is None else 1):
        scalars = _split_fixed(p, free_group, fixed_scalars, lambda k: rng.uniform(low, 1.0 + width, size=k))
        remaining = bound ** 2 - float(np.sum((scalars[others] - 1.0) ** 2 * psi[others]))
        if remaining > 0:
            break
    assert scalars is not None

    if remaining <= 0:
        expanded = expand_group_scalars(scalars, p)
        report = [ConstraintCheck('budget_positive', remaining, 0.0, False)] + _common_checks(expanded)
        return PoisonResult(apply_scalars(w, expanded), expanded, 0.0, report, failed=True,
                            note="fixed scalars exhaust the distance budget")

    reach = math.sqrt(remaining / psi_free)
    candidates = [margin * (1.0 + reach), 1.0 + margin * reach]
    for candidate in candidates:
        scalars[free_group] = candidate
        expanded = expand_group_scalars(scalars, p)
        poisoned = apply_scalars(w, expanded)
        distance = euclidean_distance(poisoned, w)
        if 0.0 < distance < bound:
            break

    report = [ConstraintCheck('euclidean_below_bound', distance, bound, distance < bound),
              ConstraintCheck('euclidean_positive', distance, 0.0, distance > 0)] + _common_checks(expanded)
    objective = grouped_objective(psi, scalars, SimilarityMetric.EUCLIDEAN)
    return PoisonResult(poisoned, expanded, objective, report, note=f"upper bound {1.0 + reach:.6g}")


def faker_normclip(w: ModelVector, p: GroupPartition, rng: np.random.Generator,
                   upper_assumed: Optional[float] = None, free_group: int = 0,
                   fixed_scalars: Optional[Sequence[float]] = None) -> PoisonResult:
    '''
    Spends the whole norm budget: fixed scalars in (0, sqrt(theta^2 / ((T-1) max psi))], the free scalar
    sqrt((theta^2 - sum a^2 psi) / psi_free) so that L(poison) = theta, theta defaulting to L(w).
    '''
    _nonzero(w)
    theta = float(upper_assumed) if upper_assumed is not None else l2_norm(w)
    psi = group_squares(w, p)
    others = np.arange(p.groups) != free_group
    psi_free = float(psi[free_group]) if 0 <= free_group < p.groups else 0.0
    if psi_free == 0.0:
        identity = ScalarVector.ones(w.dim)
        report = [ConstraintCheck('norm_at_bound', l2_norm(w), theta, False)] + _common_checks(identity)
        return PoisonResult(w, identity, 0.0, report, failed=True, note="free group carries no weight")

    max_psi = float(np.max(psi[others])) if p.groups > 1 else 0.0
    domain = math.sqrt(theta ** 2 / ((p.groups - 1) * max_psi)) if max_psi > 0 else 1.0

    scalars = None
    remaining = -1.0
    for _ in range(MAX_RESAMPLES if fixed_scalars is None else 1):
        scalars = _split_fixed(p, free_group, fixed_scalars,
                               lambda k: np.maximum(rng.uniform(0.0, 1.0, size=k) * domain, POSITIVITY_FLOOR))
        remaining = theta ** 2 - float(np.sum(scalars[others] ** 2 * psi[others]))
        if -TOLERANCE * theta ** 2 < remaining < 0:
            remaining = 0.0
        if remaining >= 0:
            break
    assert scalars is not None

    if remaining < 0:
        expanded = expand_group_scalars(scalars, p)
        report = [ConstraintCheck('budget_positive', remaining, 0.0, False)] + _common_checks(expanded)
        return PoisonResult(apply_scalars(w, expanded), expanded, 0.0, report, failed=True,
                            note="fixed scalars exhaust the norm budget")

    scalars[free_group] = max(math.sqrt(remaining / psi_free), POSITIVITY_FLOOR)
    expanded = expand_group_scalars(scalars, p)
    poisoned = apply_scalars(w, expanded)
    norm = l2_norm(poisoned)
    report = [ConstraintCheck('norm_at_bound', norm, theta, abs(norm - theta) <= TOLERANCE * theta)] \
        + _common_checks(expanded)
    objective = grouped_objective(psi, scalars, SimilarityMetric.L2_RATIO)
    return PoisonResult(poisoned, expanded, objective, report, note=f"fixed domain {domain:.6g}")


def faker_flame(w: ModelVector, p: GroupPartition, rng: np.random.Generator, n: int = 10,
                threshold: float = 0.05, free_group: int = 0,
                fixed_scalars: Optional[Sequence[float]] = None) -> PoisonResult:
    '''
    FLTrust construction pulled back towards 1 (a <- 1 + shrink (a - 1)) until the poison is admitted by
    FLAME's clustering next to n-1 copies of w. The largest admitted shrink is found by bisection.
    '''
    base = faker_fltrust(w, p, rng, free_group, fixed_scalars)
    psi = group_squares(w, p)
    group_scalars = np.array([base.scalars.values[p.members(t)[0]] for t in range(p.groups)])
    cluster = np.repeat(w.values[None, :], max(n - 1, 2), axis=0)

    def shrunk(shrink: float) -> np.ndarray:
        return 1.0 + shrink * (group_scalars - 1.0)

    def admitted(shrink: float) -> bool:
        poisoned = w.values * expand_group_scalars(shrunk(shrink), p).values
        return bool(flame_admission(np.vstack([cluster, poisoned]), threshold)[-1])

    shrink = 1.0
    if not admitted(1.0):
        low, high = 0.0, 1.0
        for _ in range(BISECTION_STEPS):
            middle = (low + high) / 2.0
            if admitted(middle):
                low = middle
            else:
                high = middle
        shrink = low

    scalars = shrunk(shrink)
    expanded = expand_group_scalars(scalars, p)
    poisoned = apply_scalars(w, expanded)
    report = [ConstraintCheck('flame_admitted', shrink, 0.0, shrink > 0 and admitted(shrink))] \
        + _common_checks(expanded)
    objective = grouped_objective(psi, scalars, SimilarityMetric.COSINE_TIMES_NORM_RATIO)
    return PoisonResult(poisoned, expanded, objective, report, failed=base.failed, note=f"shrink {shrink:.6g}")


def faker_diversefl(w: ModelVector, p: GroupPartition, rng: np.random.Generator, kappa: float = 2.0,
                    free_group: int = 0, fixed_scalars: Optional[Sequence[float]] = None) -> PoisonResult:
    '''
    FLTrust construction rescaled back to L(w): the cosine is unchanged and the norm ratio is exactly 1.
    '''
    base = faker_fltrust(w, p, rng, free_group, fixed_scalars)
    factor = l2_norm(w) / l2_norm(base.poisoned)
    expanded = ScalarVector(base.scalars.values * factor)
    poisoned = apply_scalars(w, expanded)
    cosine = cosine_similarity(poisoned, w)
    ratio = l2_norm(poisoned) / l2_norm(w)
    report = [ConstraintCheck('cosine_positive', cosine, 0.0, cosine > 0),
              ConstraintCheck('norm_ratio_in_band', ratio, kappa, 1.0 / kappa <= ratio <= kappa),
              ConstraintCheck('norm_ratio_one', ratio, 1.0, abs(ratio - 1.0) <= TOLERANCE)] \
        + _common_checks(expanded)
    psi = group_squares(w, p)
    group_scalars = np.array([expanded.values[p.members(t)[0]] for t in range(p.groups)])
    objective = grouped_objective(psi, group_scalars, SimilarityMetric.COSINE_TIMES_NORM_RATIO)
    return PoisonResult(poisoned, expanded, objective, report, failed=base.failed, note=base.note)


def faker_shieldfl(w: ModelVector, n: int) -> PoisonResult:
    '''
    Scales the whole model by n+1, the cosine stays exactly 1 while the difference grows n-fold.
    '''
    _nonzero(w)
    if n < 1:
        raise AttackError(f"{ERROR} ShieldFL construction needs n >= 1, got {n}")
    expanded = ScalarVector(np.full(w.dim, float(n + 1)))
    poisoned = apply_scalars(w, expanded)
    cosine = cosine_similarity(poisoned, w)
    report = [ConstraintCheck('cosine_one', cosine, 1.0, abs(cosine - 1.0) <= 1e-12)] + _common_checks(expanded)
    return PoisonResult(poisoned, expanded, objective_f(w, expanded, SimilarityMetric.COSINE), report)


def faker_for_defense(kind: DefenseKind, w: ModelVector, w_g: Optional[ModelVector], p: GroupPartition,
                      rng: np.random.Generator, n: int, m: int, mode: AttackMode = AttackMode.SINGLE,
                      margin: float = DEFAULT_MARGIN, kappa: float = 2.0, flame_threshold: float = 0.05,
                      norm_upper: Optional[float] = None, free_group: int = 0) -> PoisonResult:
    '''
    The defense-matched construction. Rules without a similarity gate of their own (FedAvg, FoolsGold, ERR)
    get the cosine construction. Against ShieldFL the scaled model is the midpoint of w and w_g when the
    global model is known.
    '''
    if kind == DefenseKind.KRUM:
        if w_g is None:
            raise AttackError(f"{ERROR} Krum construction needs the previous global model")
        return faker_krum(w, w_g, p, mode, n, m, rng, margin, free_group)
    if kind == DefenseKind.NORM_CLIPPING:
        return faker_normclip(w, p, rng, norm_upper, free_group)
    if kind == DefenseKind.FLAME:
        return faker_flame(w, p, rng, n, flame_threshold, free_group)
    if kind == DefenseKind.DIVERSEFL:
        return faker_diversefl(w, p, rng, kappa, free_group)
    if kind == DefenseKind.SHIELDFL:
        seed = w if w_g is None else w.with_values((w.values + w_g.values) / 2.0)
        return faker_shieldfl(seed, n)
    return faker_fltrust(w, p, rng, free_group)


def acceptance_test(kind: DefenseKind, w: ModelVector, w_g: Optional[ModelVector], n: int,
                    kappa: float = 2.0, norm_lower_ratio: float = 0.8,
                    flame_threshold: float = 0.05) -> AcceptanceTest:
    '''
    The attacker's simulation of the defense, with its own benign model standing in for the
    server's reference and for the other clients.
    '''
    def cosine_of(candidate: ModelVector) -> Optional[float]:
        try:
            return cosine_similarity(candidate, w)
        except ZeroVectorError:
            return None

    if kind == DefenseKind.FLTRUST:
        def accept(candidate: ModelVector) -> bool:
            cosine = cosine_of(candidate)
            return cosine is not None and cosine > 0
        return accept

    if kind == DefenseKind.DIVERSEFL:
        reference = l2_norm(w)

        def accept(candidate: ModelVector) -> bool:
            cosine = cosine_of(candidate)
            ratio = l2_norm(candidate) / reference
            return cosine is not None and cosine > 0 and 1.0 / kappa <= ratio <= kappa
        return accept

    if kind == DefenseKind.KRUM:
        if w_g is None:
            raise AttackError(f"{ERROR} Krum acceptance needs the previous global model")
        budget = euclidean_distance(w_g, w)
        return lambda candidate: euclidean_distance(candidate, w) < budget

    if kind == DefenseKind.NORM_CLIPPING:
        upper = l2_norm(w)
        slack = TOLERANCE * max(1.0, upper)
        return lambda candidate: norm_lower_ratio * upper - slack <= l2_norm(candidate) <= upper + slack

    if kind == DefenseKind.FLAME:
        cluster = np.repeat(w.values[None, :], max(n - 1, 2), axis=0)
        return lambda candidate: bool(flame_admission(np.vstack([cluster, candidate.values]), flame_threshold)[-1])

    return lambda candidate: True


def _halving_search(w: ModelVector, direction: np.ndarray, accept_test: AcceptanceTest, start: float,
                    threshold: float) -> PoisonResult:
    scalar = start
    iterations = 0
    candidate = w
    while scalar >= threshold:
        iterations += 1
        candidate = w.with_values(direction * scalar * w.values)
        if accept_test(candidate):
            report = [ConstraintCheck('accepted', scalar, threshold, True)]
            return PoisonResult(candidate, None, model_difference(candidate, w), report,
                                iterations=iterations, shared_scalar=scalar)
        scalar /= 2.0
    report = [ConstraintCheck('accepted', scalar * 2.0, threshold, False)]
    return PoisonResult(candidate, None, model_difference(candidate, w), report, failed=True,
                        iterations=iterations, shared_scalar=scalar * 2.0)


def la_attack(w: ModelVector, accept_test: AcceptanceTest, rng: np.random.Generator, start: float = LA_START,
              threshold: float = LA_THRESHOLD) -> PoisonResult:
    '''
    Random sign vector times a shared scalar, halved from `start` until accepted or below `threshold`.
    '''
    signs = rng.choice(np.array([-1.0, 1.0]), size=w.dim)
    return _halving_search(w, signs, accept_test, start, threshold)


def mb_attack(w: ModelVector, accept_test: AcceptanceTest, rng: Optional[np.random.Generator] = None,
              start: float = LA_START, threshold: float = LA_THRESHOLD) -> PoisonResult:
    '''
    Same halving search as LA along the direction opposite to the benign model.
    '''
    return _halving_search(w, -np.ones(w.dim), accept_test, start, threshold)


def output_layer_subset(w: ModelVector, arrays: Optional[int] = None) -> IndexSubset:
    '''
    Indices of the last `arrays` weight arrays, by default the output layer's weights and bias.
    '''
    if arrays is None:
        offset = output_layer_offset(w)
    else:
        offset, _ = w.layer_spans[-min(arrays, w.layer_count)]
    return IndexSubset(np.arange(offset, w.dim), w.dim)


def faker_backdoor(w_backdoored: ModelVector, critical: IndexSubset, accept_test: AcceptanceTest) -> PoisonResult:
    '''
    Freezes the critical parameters and scales the rest by one shared scalar, the feasible scalar closest
    to 1 is located by a geometric ladder followed by bisection in log space.
    '''
    adjustable = np.ones(w_backdoored.dim, dtype=bool)
    adjustable[critical.indices] = False

    def candidate(scalar: float) -> ModelVector:
        values = np.array(w_backdoored.values)
        values[adjustable] *= scalar
        return w_backdoored.with_values(values)

    def result(scalar: float, accepted: bool, iterations: int) -> PoisonResult:
        scalars = np.ones(w_backdoored.dim)
        scalars[adjustable] = scalar
        expanded = ScalarVector(scalars)
        poisoned = candidate(scalar)
        report = [ConstraintCheck('accepted', scalar, 1.0, accepted),
                  ConstraintCheck('scalars_positive', scalar, 0.0, scalar > 0)]
        return PoisonResult(poisoned, expanded, model_difference(poisoned, w_backdoored), report,
                            iterations=iterations, shared_scalar=scalar)

    if accept_test(w_backdoored):
        return result(1.0, True, 1)
    if not adjustable.any():
        return result(1.0, False, 1)

    iterations = 1
    feasible = None
    for step in range(1, 41):
        for scalar in (2.0 ** (-step / 4.0), 2.0 ** (step / 4.0)):
            iterations += 1
            if accept_test(candidate(scalar)):
                feasible = scalar
                break
        if feasible is not None:
            break
    if feasible is None:
        return result(1.0, False, iterations)

    infeasible_log, feasible_log = 0.0, math.log(feasible)
    for _ in range(BISECTION_STEPS):
        iterations += 1
        middle = (infeasible_log + feasible_log) / 2.0
        if accept_test(candidate(math.exp(middle))):
            feasible_log = middle
        else:
            infeasible_log = middle
    return result(math.exp(feasible_log), True, iterations)


def faker_sybil(seed_model: ModelVector, m: int, target_defense: DefenseKind, rng: np.random.Generator,
                w_g: Optional[ModelVector] = None, n: int = 10, margin: float = DEFAULT_MARGIN,
                kappa: float = 2.0, flame_threshold: float = 0.05) -> List[PoisonResult]:
    '''
    m poisons of the same seed model with one scalar per parameter, each from its own independent draw.
    Sybil k solves for the parameter with the k-th largest magnitude.
    '''
    if m < 1:
        raise AttackError(f"{ERROR} Sybil attack needs m >= 1, got {m}")
    p = partition_groups(seed_model, PartitionStrategy.UNIFORM_BLOCKS, seed_model.dim)
    free = np.argsort(-np.abs(seed_model.values), kind='stable')
    return [faker_for_defense(target_defense, seed_model, w_g, p, child, n, m, AttackMode.SINGLE, margin, kappa,
                              flame_threshold, free_group=int(free[k % free.size]))
            for k, child in enumerate(rng.spawn(m))]


def oracle_grid_max(fixed_scalars: Sequence[float], free_group: int,
                    objective: Callable[[np.ndarray], np.ndarray],
                    constraint: Optional[Callable[[np.ndarray], np.ndarray]],
                    grid_lo: float, grid_hi: float, points: int, chunk: int = 20000) -> Tuple[float, float]:
    '''
    Brute-force maximum of the objective over a uniform grid of the free group scalar.

    :param fixed_scalars: Group scalars, the free entry is overwritten by the grid values.
    :param objective: Maps a (k, T) array of group scalar rows to k objective values.
    :param constraint: Maps the same rows to k booleans, infeasible rows are skipped.
    :param grid_lo: Lower end of the grid, non-positive grid values are dropped.
    :param grid_hi: Upper end of the grid, included.
    '''
    if points < 1000:
        raise AttackError(f"{ERROR} Grid oracle needs at least 1000 points, got {points}")
    if grid_hi <= max(grid_lo, 0.0):
        raise AttackError(f"{ERROR} Grid range ({grid_lo}, {grid_hi}] is not positive")

    base = np.array(fixed_scalars, dtype=np.float64)
    grid = np.linspace(grid_lo, grid_hi, points)
    grid = grid[grid > 0]

    best_scalar: Optional[float] = None
    best_value = -math.inf
    for start in range(0, grid.size, chunk):
        xs = grid[start:start + chunk]
        rows = np.repeat(base[None, :], xs.size, axis=0)
        rows[:, free_group] = xs
        values = np.asarray(objective(rows), dtype=np.float64)
        if constraint is not None:
            values = np.where(np.asarray(constraint(rows), dtype=bool), values, -math.inf)
        index = int(np.argmax(values))
        if values[index] > best_value:
            best_value = float(values[index])
            best_scalar = float(xs[index])

    if best_scalar is None:
        raise AttackError(f"{ERROR} No feasible grid point in ({grid_lo}, {grid_hi}]")
    return best_scalar, best_value
