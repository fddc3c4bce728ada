'''
File responsible for batch execution: single runs, one-axis sweeps on a worker pool, the oracle
self-checks of the closed-form constructions and the SPP versus ERR overhead measurement.
'''
from __future__ import annotations

import math
import time
from multiprocessing import Pool
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import mlp
from attacks import AttackMode, FltrustSolver, faker_fltrust, faker_krum, faker_normclip, faker_shieldfl, \
    fltrust_roots, group_squares, grouped_objective, krum_bound, oracle_grid_max
from configuration import ConfigurationError, ExperimentConfig
from defenses import ClientUpdate, DefenseContext, DefenseKind, SppDefense
from fl_sim import Simulation, model_dimension, run_experiment
from fs_access import parse_value
from model_core import ModelVector, PartitionStrategy, partition_groups
from report import MetricsReport
from similarity import SimilarityMetric, cosine_similarity, euclidean_distance, l2_norm
from uni_chars import *

ORACLE_DIMENSIONS = (2, 8, 64)


class CellFailure:
    def __init__(self, cell: int, axis: str, value: Any, message: str) -> None:
        self.cell = cell
        self.axis = axis
        self.value = value
        self.message = message

    def to_dict(self) -> Dict[str, Any]:
        return {'cell': self.cell, 'axis': self.axis, 'value': self.value, 'message': self.message}

    def __str__(self) -> str:
        return f"{ERROR} cell {self.cell} ({self.axis}={self.value}): {self.message}"

    def __repr__(self) -> str:
        return self.__str__()


class SweepResult:
    '''
    Reports in cell order, `None` where the cell failed.
    '''

    def __init__(self, axis: str, values: List[Any], reports: List[Optional[MetricsReport]],
                 failures: List[CellFailure]) -> None:
        self.axis = axis
        self.values = values
        self.reports = reports
        self.failures = failures

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def completed(self) -> List[MetricsReport]:
        return [r for r in self.reports if r is not None]


def run(config: ExperimentConfig, verbose: bool = False) -> MetricsReport:
    return run_experiment(config, verbose=verbose)


def parse_axis(text: str) -> Tuple[str, List[Any]]:
    '''
    Parses `name=v1,v2,...`, values are typed like the defaults file values.
    '''
    name, separator, raw = text.partition('=')
    name = name.strip()
    if not separator or not name or not raw.strip():
        raise ConfigurationError("axis", f"expected `name=v1,v2,...`, got '{text}'")
    return name, [parse_value(v.strip()) for v in raw.split(',')]


def resolve_axis_value(config: ExperimentConfig, axis: str, value: Any) -> Any:
    '''
    `J` and `J/2` stand for the model dimension on the group-count axis.
    '''
    if axis == 'attack.groups' and value in ('J', 'J/2'):
        dim = model_dimension(config)
        return dim if value == 'J' else dim // 2
    return value


def _run_cell(cell: Tuple[int, ExperimentConfig]) -> Tuple[int, Optional[MetricsReport], Optional[str]]:
    index, config = cell
    try:
        return index, run_experiment(config), None
    except Exception as e:
        return index, None, str(e)


def sweep(template: ExperimentConfig, axis: str, values: Sequence[Any], workers: int = 1,
          verbose: bool = False) -> SweepResult:
    '''
    Runs one cell per value of a single configuration axis.

    :param template: Configuration every cell starts from.
    :param axis: Dotted field name, e.g. `m` or `attack.groups`.
    :param workers: Size of the process pool, 1 runs the cells in this process.
    '''
    values = list(values)
    failures: List[CellFailure] = []
    cells: List[Tuple[int, ExperimentConfig]] = []
    for index, value in enumerate(values):
        try:
            cells.append((index, template.with_value(axis, resolve_axis_value(template, axis, value))))
        except (ConfigurationError, ValueError) as e:
            failures.append(CellFailure(index, axis, value, str(e)))

    if verbose:
        print(f"{SWEEP} Sweeping {axis} over {values} with {len(cells)} runnable cells")

    if workers > 1 and len(cells) > 1:
        with Pool(min(workers, len(cells))) as p:
            outcomes = p.map(_run_cell, cells)
    else:
        outcomes = [_run_cell(cell) for cell in cells]

    reports: List[Optional[MetricsReport]] = [None] * len(values)
    for index, report, error in outcomes:
        if error is not None:
            failures.append(CellFailure(index, axis, values[index], error))
        else:
            reports[index] = report
            if verbose:
                print(f"{SUCCESS} {axis}={values[index]}: {report}")

    failures.sort(key=lambda f: f.cell)
    return SweepResult(axis, values, reports, failures)


class OracleResult:
    def __init__(self, name: str, passed: bool, runtime_seconds: float, detail: str,
                 replay: Optional[Dict[str, Any]] = None) -> None:
        self.name = name
        self.passed = passed
        self.runtime_seconds = runtime_seconds
        self.detail = detail
        self.replay = replay

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, 'passed': self.passed, 'runtime_seconds': self.runtime_seconds,
                'detail': self.detail, 'replay': self.replay}

    def __str__(self) -> str:
        mark = SUCCESS if self.passed else ERROR
        return f"{mark} {self.name} ({self.runtime_seconds:.3f}s): {self.detail}"


class OracleReport:
    def __init__(self, results: List[OracleResult]) -> None:
        self.results = results

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def first_failure(self) -> Optional[OracleResult]:
        return next((r for r in self.results if not r.passed), None)

    def to_dict(self) -> Dict[str, Any]:
        return {'passed': self.passed, 'results': [r.to_dict() for r in self.results]}


def _timed(name: str, check: Callable[[], Tuple[bool, str, Optional[Dict[str, Any]]]]) -> OracleResult:
    start = time.perf_counter()
    try:
        passed, detail, replay = check()
    except Exception as e:
        passed, detail, replay = False, f"raised {type(e).__name__}: {e}", None
    return OracleResult(name, passed, time.perf_counter() - start, detail, replay)


def _random_model(rng: np.random.Generator, dim: int) -> ModelVector:
    return ModelVector(rng.normal(size=dim))


def _per_parameter(w: ModelVector):
    return partition_groups(w, PartitionStrategy.UNIFORM_BLOCKS, w.dim)


def _fltrust_grid(solver: FltrustSolver, instances: int, points: int, seed: int):
    rng = np.random.default_rng(seed)
    checked = 0
    for dim in ORACLE_DIMENSIONS:
        for _ in range(instances):
            w = _random_model(rng, dim)
            p = _per_parameter(w)
            fixed = rng.uniform(0.5, 1.5, size=dim)
            closed = faker_fltrust(w, p, rng, fixed_scalars=fixed, solver=solver)
            alpha = float(closed.scalars.values[0])

            psi = group_squares(w, p)
            lam = float(np.sum(psi[1:] * fixed[1:]))
            beta = float(np.sum(psi[1:] * fixed[1:] ** 2))
            gam = float(np.sum(fixed[1:]))

            def objective(rows: np.ndarray) -> np.ndarray:
                x = rows[:, 0]
                return (lam + psi[0] * x) * (gam + x) / (beta + psi[0] * x * x)

            high = max(10.0, 2.0 * alpha)
            best, best_value = oracle_grid_max(fixed, 0, objective, None, 0.0, high, points)
            step = high / (points - 1)
            closed_value = float(objective(np.array([[alpha]]))[0])
            checked += 1
            if abs(alpha - best) > step or closed_value < (1.0 - 1e-6) * best_value:
                replay = {'J': dim, 'w': w.values.tolist(), 'fixed_scalars': fixed.tolist(), 'closed_form': alpha,
                          'grid_argmax': best, 'grid_step': step}
                return False, f"closed form {alpha:.6g} vs grid {best:.6g} at J={dim}", replay
    return True, f"{checked} instances within one grid step", None


def _krum_monotone(instances: int, seed: int):
    rng = np.random.default_rng(seed)
    checked = 0
    for dim in ORACLE_DIMENSIONS:
        for _ in range(instances):
            w = _random_model(rng, dim)
            w_g = w.with_values(w.values + rng.normal(scale=0.5, size=dim))
            p = _per_parameter(w)
            result = faker_krum(w, w_g, p, AttackMode.SINGLE, 10, 2, rng)
            bound = krum_bound(w, w_g, AttackMode.SINGLE, 10, 2)
            distance = euclidean_distance(result.poisoned, w)
            replay = {'J': dim, 'w': w.values.tolist(), 'w_g': w_g.values.tolist()}
            if result.failed or not 0.0 < distance < bound:
                return False, f"E={distance:.6g} against bound {bound:.6g} at J={dim}", replay

            scalars = result.scalars.values
            psi = group_squares(w, p)
            spent = float(np.sum((scalars[1:] - 1.0) ** 2 * psi[1:]))
            upper = 1.0 + math.sqrt((bound ** 2 - spent) / psi[0])
            rows = np.repeat(scalars[None, :], 1000, axis=0)
            rows[:, 0] = np.linspace(1.0, upper, 1000, endpoint=False)
            values = grouped_objective(psi, rows, SimilarityMetric.EUCLIDEAN)
            checked += 1
            if np.any(np.diff(values) < -1e-12 * np.max(np.abs(values))):
                return False, f"objective not monotone below the bound at J={dim}", replay
    return True, f"{checked} instances strictly inside the bound, objective monotone", None


def _normclip_exact(instances: int, seed: int):
    rng = np.random.default_rng(seed)
    for dim in ORACLE_DIMENSIONS:
        for _ in range(instances):
            w = _random_model(rng, dim)
            result = faker_normclip(w, _per_parameter(w), rng)
            ratio = l2_norm(result.poisoned) / l2_norm(w)
            if result.failed or abs(ratio - 1.0) > 1e-9:
                return False, f"norm ratio {ratio!r} at J={dim}", {'J': dim, 'w': w.values.tolist()}
    return True, f"{instances * len(ORACLE_DIMENSIONS)} poisons at the norm bound", None


def _normclip_grid(instances: int, points: int, seed: int):
    rng = np.random.default_rng(seed)
    checked = 0
    for dim in ORACLE_DIMENSIONS:
        for _ in range(instances):
            w = _random_model(rng, dim)
            p = _per_parameter(w)
            result = faker_normclip(w, p, rng)
            scalars = np.array(result.scalars.values)
            alpha = float(scalars[0])
            psi = group_squares(w, p)
            budget = l2_norm(w) ** 2 * (1.0 + 1e-12)

            def objective(rows: np.ndarray) -> np.ndarray:
                return grouped_objective(psi, rows, SimilarityMetric.L2_RATIO)

            def feasible(rows: np.ndarray) -> np.ndarray:
                return np.sum(rows * rows * psi, axis=1) <= budget

            high = 2.0 * alpha
            best, _ = oracle_grid_max(scalars, 0, objective, feasible, 0.0, high, points)
            step = high / (points - 1)
            checked += 1
            if result.failed or abs(alpha - best) > step:
                replay = {'J': dim, 'w': w.values.tolist(), 'fixed_scalars': scalars.tolist(), 'closed_form': alpha,
                          'grid_argmax': best, 'grid_step': step}
                return False, f"closed form {alpha:.6g} vs grid {best:.6g} at J={dim}", replay
    return True, f"{checked} budgets spent within one grid step", None


def _fltrust_cosine(trials: int, seed: int):
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        dim = ORACLE_DIMENSIONS[trial % len(ORACLE_DIMENSIONS)]
        w = _random_model(rng, dim)
        result = faker_fltrust(w, _per_parameter(w), rng)
        cosine = cosine_similarity(result.poisoned, w)
        if not cosine > 0:
            return False, f"cosine {cosine!r} in trial {trial}", {'J': dim, 'w': w.values.tolist()}
    return True, f"{trials} poisons with positive cosine", None


def _shieldfl_cosine(trials: int, seed: int):
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        w = _random_model(rng, ORACLE_DIMENSIONS[trial % len(ORACLE_DIMENSIONS)])
        cosine = cosine_similarity(faker_shieldfl(w, 10).poisoned, w)
        if abs(cosine - 1.0) > 1e-12:
            return False, f"cosine {cosine!r} in trial {trial}", {'w': w.values.tolist()}
    return True, f"{trials} poisons at cosine 1", None


SPP_ROUND_BENIGN = 4
SPP_ROUND_NOISE = 0.005


def spp_round(rng: np.random.Generator, round_index: int = 0,
              poisoned: bool = True) -> Tuple[List[ClientUpdate], DefenseContext]:
    '''
    One FLTrust round at the default model size: the server model and the benign submissions stay close to
    a freshly initialized global model, client 0 submits its Faker poison on the output-layer split.
    '''
    w_g = mlp.initial_model(64, 32, 10, rng)

    def near() -> ModelVector:
        return w_g.with_values(w_g.values + rng.normal(0.0, SPP_ROUND_NOISE, size=w_g.dim))

    own = near()
    if poisoned:
        own = faker_fltrust(own, partition_groups(own, PartitionStrategy.OUTPUT_LAYER_SPLIT), rng).poisoned
    updates = [ClientUpdate(0, own, 100, round_index)]
    updates += [ClientUpdate(c, near(), 100, round_index) for c in range(1, SPP_ROUND_BENIGN + 1)]
    return updates, DefenseContext(server_model=near(), previous_global=w_g)


def _spp_rejection(rounds: int, seed: int):
    rng = np.random.default_rng(seed)
    spp = SppDefense(DefenseKind.FLTRUST, 0.5, seed)
    rejected = 0
    for r in range(rounds):
        updates, ctx = spp_round(rng, r)
        if not spp(updates, ctx).accepted[0]:
            rejected += 1
    share = rejected / rounds
    replay = None if share >= 0.95 else {'seed': seed, 'rounds': rounds}
    return share >= 0.95, f"{share:.3f} of Faker poisons rejected by SPP(0.5)", replay


def oracle_check(solver: FltrustSolver = fltrust_roots, instances: int = 100, points: int = 100_000,
                 seed: int = 0, verbose: bool = False) -> OracleReport:
    '''
    Runs every registered oracle, failures are report content and never raise.

    :param solver: Root solver handed to the FLTrust construction, replaceable to check the oracle itself.
    '''
    oracles: List[Tuple[str, Callable[[], Tuple[bool, str, Optional[Dict[str, Any]]]]]] = [
        ('fltrust_closed_form_vs_grid', lambda: _fltrust_grid(solver, instances, points, seed)),
        ('krum_strict_bound_monotone', lambda: _krum_monotone(instances, seed + 1)),
        ('normclip_norm_exact', lambda: _normclip_exact(instances, seed + 2)),
        ('normclip_closed_form_vs_grid', lambda: _normclip_grid(instances, points, seed + 6)),
        ('fltrust_cosine_positive', lambda: _fltrust_cosine(10 * instances, seed + 3)),
        ('shieldfl_cosine_one', lambda: _shieldfl_cosine(instances, seed + 4)),
        ('spp_rejects_faker_fltrust', lambda: _spp_rejection(instances, seed + 5)),
    ]
    results = []
    for name, check in oracles:
        result = _timed(name, check)
        results.append(result)
        if verbose:
            print(f"{ORACLE} {result}")
    return OracleReport(results)


class OverheadComparison:
    def __init__(self, spp_seconds: float, err_seconds: float) -> None:
        self.spp_seconds = spp_seconds
        self.err_seconds = err_seconds

    @property
    def ratio(self) -> float:
        return self.spp_seconds / self.err_seconds if self.err_seconds > 0 else math.inf

    def __str__(self) -> str:
        return f"SPP screening {self.spp_seconds:.6f}s vs ERR evaluation {self.err_seconds:.6f}s ({self.ratio:.3f}x)"


def compare_overhead(config: ExperimentConfig, fraction: float = 0.5, repeats: int = 5,
                     verbose: bool = False) -> OverheadComparison:
    '''
    Times the SPP subset screening against an ERR-style clean-data evaluation of the same round's submissions.
    '''
    simulation = Simulation(config)
    state = simulation.initial_state()
    record = simulation.run_round(state, simulation.defense, simulation.plan, simulation.malicious_ids)
    updates = [ClientUpdate(cid, c.model, 1, record.round) for cid, c in sorted(record.clients.items())]
    ctx = DefenseContext(server_model=record.global_model)
    spp = SppDefense(config.defense, fraction, config.master_seed)
    subset = spp.draw_subset(record.global_model.dim, record.round)
    clean = simulation.clean_set

    start = time.perf_counter()
    for _ in range(repeats):
        spp.screen(updates, ctx, subset)
    spp_seconds = (time.perf_counter() - start) / repeats

    start = time.perf_counter()
    for _ in range(repeats):
        for u in updates:
            mlp.error_rate(u.model, clean.features, clean.labels)
    err_seconds = (time.perf_counter() - start) / repeats

    comparison = OverheadComparison(spp_seconds, err_seconds)
    if verbose:
        print(f"{TIME} {comparison}")
    return comparison
