"""Integer pattern search over (N, M) for each purification protocol, and parameter sweeps."""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .network_model import NetworkParams, RateReport, SessionPlan
from .session_pipeline import evaluate_protocol

PROTOCOLS = tuple(itertools.product((0, 1, 2), (0, 1)))  # (P_E, P_L)
DISPLAY_THRESHOLD_HZ = 0.1
SWEEP_AXES = ("eps", "T2", "eta0", "L_tot", "t_HEG")


@dataclass(frozen=True)
class SearchConfig:
    N_bounds: tuple[int, int] = (1, 200)
    M_bounds: tuple[int, int] = (1, 20000)
    initial_mesh: float = 16.0
    mesh_tolerance: float = 0.9
    expansion: float = 2.0
    contraction: float = 0.5
    # above M_relative_floor the M step grows in proportion to M
    M_relative_step: float = 0.02
    n_starts: int = 5
    coarse_grid: int = 12
    max_iterations: int = 500
    exhaustive_N: tuple[int, ...] | None = None
    exhaustive_M: tuple[int, ...] | None = None

    def __post_init__(self):
        for lo, hi in (self.N_bounds, self.M_bounds):
            if not (isinstance(lo, int) and isinstance(hi, int) and 1 <= lo <= hi):
                raise ValueError(f"bounds must be positive integers with lo <= hi, got {(lo, hi)}")
        if not self.mesh_tolerance > 0:
            raise ValueError("mesh tolerance must be positive")
        if self.n_starts < 1:
            raise ValueError("need at least one start")


@dataclass
class PatternSearchResult:
    N: int
    M: int
    value: float
    evaluations: int
    cache_hits: int
    iterations: int


@dataclass
class OptimizationResult:
    best_plan: SessionPlan
    best_report: RateReport
    per_protocol: dict[tuple[int, int], tuple[SessionPlan, RateReport]]
    evaluations: int
    cache_hits: int
    feasible: bool = True


class _Memo:
    def __init__(self, fn: Callable[[int, int], float]):
        self.fn = fn
        self.cache: dict[tuple[int, int], float] = {}
        self.hits = 0

    def __call__(self, N: int, M: int) -> float:
        key = (N, M)
        if key in self.cache:
            self.hits += 1
            return self.cache[key]
        value = self.fn(N, M)
        self.cache[key] = value
        return value


def _steps(M: int, mesh: float, cfg: SearchConfig) -> tuple[int, int]:
    step_N = max(1, int(round(mesh)))
    step_M = max(1, int(round(mesh * max(1.0, M * cfg.M_relative_step))))
    return step_N, step_M


def pattern_search(
    objective: Callable[[int, int], float],
    start: tuple[int, int],
    cfg: SearchConfig = SearchConfig(),
    memo: _Memo | None = None,
) -> PatternSearchResult:
    """Maximize ``objective(N, M)`` by polling the four axis directions on the integer lattice.

    The mesh doubles after an improving poll and halves after a failed one;
    the search stops once the mesh drops below ``cfg.mesh_tolerance``.
    """
    (n_lo, n_hi), (m_lo, m_hi) = cfg.N_bounds, cfg.M_bounds
    N, M = start
    if not (n_lo <= N <= n_hi and m_lo <= M <= m_hi):
        raise ValueError(f"start {start} outside bounds")
    f = memo if memo is not None else _Memo(objective)
    evals_before = len(f.cache)
    hits_before = f.hits
    best = f(N, M)
    mesh = cfg.initial_mesh
    it = 0
    while mesh >= cfg.mesh_tolerance and it < cfg.max_iterations:
        it += 1
        step_N, step_M = _steps(M, mesh, cfg)
        candidates = [
            (min(N + step_N, n_hi), M),
            (max(N - step_N, n_lo), M),
            (N, min(M + step_M, m_hi)),
            (N, max(M - step_M, m_lo)),
        ]
        improved = None
        for cand in candidates:
            if cand == (N, M):
                continue
            value = f(*cand)
            if value > best:
                best, improved = value, cand
        if improved is None:
            mesh *= cfg.contraction
        else:
            N, M = improved
            mesh *= cfg.expansion
    return PatternSearchResult(
        N=N,
        M=M,
        value=best,
        evaluations=len(f.cache) - evals_before,
        cache_hits=f.hits - hits_before,
        iterations=it,
    )


def grid_search(
    objective: Callable[[int, int], float], N_values: Iterable[int], M_values: Iterable[int]
) -> tuple[int, int, float]:
    """Exhaustive maximization over a lattice; first point wins ties."""
    best = (0, 0, -math.inf)
    M_values = list(M_values)
    for N in N_values:
        for M in M_values:
            value = objective(N, M)
            if value > best[2]:
                best = (N, M, value)
    return best


def lattice(lo: int, hi: int, count: int, log: bool) -> list[int]:
    if log:
        raw = np.geomspace(lo, hi, count)
    else:
        raw = np.linspace(lo, hi, count)
    return sorted({int(round(x)) for x in raw})


def _protocol_objective(params: NetworkParams, P_E: int, P_L: int, reports: dict):
    def objective(N: int, M: int) -> float:
        if P_L == 1 and M < 3:
            return 0.0
        plan = SessionPlan(N, M, P_E, P_L)
        report = evaluate_protocol(params, plan)
        reports[(N, M)] = report
        return report.R_SKR

    return objective


def _starts(memo: _Memo, cfg: SearchConfig) -> list[tuple[int, int]]:
    """Best distinct points of a coarse lattice, N linear and M logarithmic."""
    Ns = lattice(*cfg.N_bounds, cfg.coarse_grid, log=False)
    Ms = lattice(*cfg.M_bounds, cfg.coarse_grid, log=True)
    scored = [((N, M), memo(N, M)) for N in Ns for M in Ms]
    scored.sort(key=lambda item: -item[1])  # stable: lattice order breaks ties
    return [pt for pt, _ in scored[: cfg.n_starts]]


def optimize_single_protocol(
    params: NetworkParams, P_E: int, P_L: int, cfg: SearchConfig = SearchConfig()
) -> tuple[SessionPlan, RateReport, int, int]:
    reports: dict[tuple[int, int], RateReport] = {}
    memo = _Memo(_protocol_objective(params, P_E, P_L, reports))
    if cfg.exhaustive_N is not None and cfg.exhaustive_M is not None:
        N, M, _ = grid_search(memo, cfg.exhaustive_N, cfg.exhaustive_M)
    else:
        best = None
        for start in _starts(memo, cfg):
            res = pattern_search(memo, start, cfg, memo)
            if best is None or res.value > best.value:
                best = res
        N, M = best.N, best.M
    if P_L == 1 and M < 3:
        M = 3
    plan = SessionPlan(N, M, P_E, P_L)
    report = reports.get((N, M)) or evaluate_protocol(params, plan)
    return plan, report, len(memo.cache), memo.hits


def optimize_protocol(params: NetworkParams, cfg: SearchConfig = SearchConfig()) -> OptimizationResult:
    """Best (N, M) for each of the six (P_E, P_L) protocols, and the overall winner."""
    per_protocol = {}
    evaluations = hits = 0
    for P_E, P_L in PROTOCOLS:
        plan, report, n_eval, n_hit = optimize_single_protocol(params, P_E, P_L, cfg)
        per_protocol[(P_E, P_L)] = (plan, report)
        evaluations += n_eval
        hits += n_hit
    # first protocol in PROTOCOLS order wins ties
    best_key = max(PROTOCOLS, key=lambda k: (per_protocol[k][1].R_SKR, -PROTOCOLS.index(k)))
    best_plan, best_report = per_protocol[best_key]
    return OptimizationResult(
        best_plan=best_plan,
        best_report=best_report,
        per_protocol=per_protocol,
        evaluations=evaluations,
        cache_hits=hits,
        feasible=best_report.R_SKR > 0.0,
    )


def apply_axis(params: NetworkParams, axis: str, value: float) -> NetworkParams:
    if axis == "eps":
        return params.with_eps(value)
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    return replace(params, **{axis: value})


def sweep_points(params: NetworkParams, axes: Mapping[str, Sequence[float]]) -> list[NetworkParams]:
    """Cartesian grid over the named axes, last axis varying fastest."""
    for name in axes:
        if name not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {name!r}; choose from {SWEEP_AXES}")
    names = list(axes)
    points = []
    for combo in itertools.product(*(axes[n] for n in names)):
        p = params
        for name, value in zip(names, combo):
            p = apply_axis(p, name, float(value))
        points.append(p)
    return points


def _optimize_row(args):
    params, cfg = args
    return params, optimize_protocol(params, cfg)


def sweep(
    params: NetworkParams,
    axes: Mapping[str, Sequence[float]],
    cfg: SearchConfig = SearchConfig(),
    workers: int = 1,
) -> Iterable[tuple[NetworkParams, OptimizationResult]]:
    """Optimize every grid point; yields rows in grid order whatever the worker count."""
    points = sweep_points(params, axes)
    if workers <= 1:
        for p in points:
            yield _optimize_row((p, cfg))
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_optimize_row, [(p, cfg) for p in points])
