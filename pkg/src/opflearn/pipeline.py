"""Dataset creation loops: polytope sampling with certificates, and the
uniform-around-nominal baseline.

The sampler draws a candidate load from the current polytope and solves the
AC OPF there.  A solved candidate becomes a record.  A failed one is
projected onto the relaxed-feasible load set; if the projection moves it by
more than ``proj_tol`` the load is certainly AC-infeasible and the separating
hyperplane through the projection is added to the polytope.  Otherwise the
candidate is only discarded, since a local solver failure proves nothing.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import polytope as poly
from .acopf import DEFAULT_ACTIVE_TOL, solve_acopf
from .dataset import Dataset, DatasetRecord
from .errors import AttemptBudgetExhausted, EmptyPolytope, NumericalFailure
from .netio import NetworkModel
from .relax import DEFAULT_PROJ_TOL, RELAXATION, max_loads, nearest_feasible

logger = logging.getLogger(__name__)

OPF_LEARN, TYPICAL = "opf-learn", "typical"


@dataclass
class RunConfig:
    n_samples: int
    seed: int = 0
    max_load_mode: str = "solve"       # "solve" or "nominal"
    kappa: float = 2.0                 # multiple of nominal load in "nominal" mode
    proj_tol: float = DEFAULT_PROJ_TOL
    active_tol: float = DEFAULT_ACTIVE_TOL
    max_attempts: int | None = None    # default 100 * n_samples
    thin: int | None = None
    burn_in: int | None = None
    workers: int = 1
    relaxation: str = RELAXATION

    def __post_init__(self):
        if self.n_samples < 0:
            raise ValueError("n_samples must be non-negative")
        if self.max_load_mode not in ("solve", "nominal"):
            raise ValueError(f"unknown max_load_mode {self.max_load_mode!r}")
        if self.max_load_mode == "nominal" and not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def attempt_cap(self) -> int:
        return 100 * self.n_samples if self.max_attempts is None else self.max_attempts


@dataclass
class Certificate:
    x_hat: np.ndarray
    x_star: np.ndarray
    normal: np.ndarray
    offset: float
    attempt: int


@dataclass
class RunStats:
    samples_attempted: int = 0
    feasible_found: int = 0
    certificates_added: int = 0
    relax_feasible_but_ac_failed: int = 0
    projection_failed: int = 0
    center_resets: int = 0
    unique_active_set_curve: list = field(default_factory=list)
    phase_times: dict = field(default_factory=dict)
    certificates: list = field(default_factory=list)
    p_bar: list = field(default_factory=list)
    polytope: poly.HalfspacePolytope | None = None

    def summary(self) -> dict:
        """JSON-friendly view without the certificate arrays or timings."""
        return {
            "samples_attempted": self.samples_attempted,
            "feasible_found": self.feasible_found,
            "certificates_added": self.certificates_added,
            "relax_feasible_but_ac_failed": self.relax_feasible_but_ac_failed,
            "projection_failed": self.projection_failed,
            "center_resets": self.center_resets,
            "unique_active_sets": self.unique_active_set_curve[-1][1] if self.unique_active_set_curve else 0,
            "p_bar": list(self.p_bar),
        }


class _Tracker:
    """Unique active-set bookkeeping shared by both methods."""

    def __init__(self, ds: Dataset, stats: RunStats):
        self.ds, self.stats = ds, stats
        self.seen = set()

    def accept(self, sol):
        rec = DatasetRecord.from_solution(sol)
        self.ds.append(rec)
        self.seen.add(np.packbits(rec.active_set(self.ds.active_tol)).tobytes())
        self.stats.feasible_found += 1
        self.stats.unique_active_set_curve.append((len(self.ds) - 1, len(self.seen)))


def _evaluate(model, x, proj_tol):
    """AC solve, plus the projection when the solve fails.

    The projection slot is None after a successful solve and the error text
    when the projection itself fails.
    """
    sol = solve_acopf(model, x)
    if sol.ok:
        return sol, None
    try:
        return sol, nearest_feasible(model, x, proj_tol=proj_tol)
    except NumericalFailure as e:
        return sol, str(e)


def _tick(stats, phase, t0):
    stats.phase_times[phase] = stats.phase_times.get(phase, 0.0) + time.perf_counter() - t0


def input_bounds(model: NetworkModel, config: RunConfig) -> np.ndarray:
    if config.max_load_mode == "nominal":
        p_bar = config.kappa * model.pd0
        if np.any(p_bar <= 0):
            raise ValueError("nominal mode needs positive nominal active loads")
        return p_bar
    return max_loads(model)


def create_dataset(model: NetworkModel, config: RunConfig, pool=None):
    """Sample until ``n_samples`` AC-feasible records or the attempt cap.

    Returns ``(Dataset, RunStats)``; raises AttemptBudgetExhausted carrying
    both when the cap is hit first.
    """
    meta = {"method": OPF_LEARN, "seed": config.seed, "config": asdict(config)}
    ds = Dataset.for_model(model, meta, config.active_tol)
    stats = RunStats()
    if config.n_samples == 0:
        return ds, stats
    track = _Tracker(ds, stats)

    t0 = time.perf_counter()
    p_bar = input_bounds(model, config)
    stats.p_bar = [float(v) for v in p_bar]
    P = poly.init_input_space(p_bar, model.total_pmax)
    _tick(stats, "max_load", t0)

    d = P.dim
    thin, burn = poly.default_thinning(d)
    thin = config.thin or thin
    burn = config.burn_in if config.burn_in is not None else burn
    rng = np.random.default_rng(config.seed)

    def restart():
        t = time.perf_counter()
        center, radius = poly.chebyshev_center(P)
        if radius <= 1e-9:
            raise EmptyPolytope(f"unclassified space has no interior after {stats.certificates_added} certificates")
        st = poly.SamplerState(center, rng)
        poly.walk(P, st, 0, thin=thin, burn_in=burn)
        _tick(stats, "center", t)
        return st

    state = restart()
    cap = config.attempt_cap
    batch = config.workers if pool is not None or config.workers > 1 else 1
    own_pool = None
    if pool is None and config.workers > 1:
        pool = own_pool = ProcessPoolExecutor(max_workers=config.workers)
    try:
        while stats.feasible_found < config.n_samples and stats.samples_attempted < cap:
            # draw a batch along the walk, remembering the sampler after each draw
            t = time.perf_counter()
            k = min(batch, cap - stats.samples_attempted)
            cands, snaps = [], []
            for _ in range(k):
                x = poly.walk(P, state, 1, thin=thin)[0]
                cands.append(x.copy())
                snaps.append((state.x.copy(), rng.bit_generator.state, state.steps))
            _tick(stats, "sample", t)

            t = time.perf_counter()
            if pool is not None and k > 1:
                results = list(pool.map(_evaluate, [model] * k, cands, [config.proj_tol] * k))
            else:
                results = [_evaluate(model, x, config.proj_tol) for x in cands]
            _tick(stats, "solve", t)

            for j, (x, (sol, proj)) in enumerate(zip(cands, results)):
                stats.samples_attempted += 1
                if sol.ok:
                    track.accept(sol)
                    if stats.feasible_found >= config.n_samples:
                        break
                    continue
                if isinstance(proj, str):
                    # no certificate without a converged projection
                    stats.projection_failed += 1
                    logger.warning("attempt %d: %s", stats.samples_attempted, proj)
                    continue
                if proj.feasible:
                    stats.relax_feasible_but_ac_failed += 1
                    continue
                P = poly.add_halfspace(P, x, proj.x_star)
                stats.certificates_added += 1
                stats.certificates.append(Certificate(
                    x_hat=x, x_star=proj.x_star, normal=P.A[-1].copy(), offset=float(P.b[-1]),
                    attempt=stats.samples_attempted - 1))
                logger.debug("certificate %d at attempt %d, distance %.3e",
                             stats.certificates_added, stats.samples_attempted, proj.distance)
                # rewind the sampler to this draw so later candidates match a serial run
                xs, rstate, steps = snaps[j]
                rng.bit_generator.state = rstate
                state = poly.SamplerState(xs, rng, steps)
                if not poly.contains(P, state.x) or np.min(P.slacks(state.x)) <= 0:
                    stats.center_resets += 1
                    state = restart()
                break
    finally:
        if own_pool is not None:
            own_pool.shutdown()

    ds.metadata["polytope_rows"] = P.n_rows
    stats.polytope = P
    ds.metadata["stats"] = stats.summary()
    if stats.feasible_found < config.n_samples:
        raise AttemptBudgetExhausted(
            f"{stats.feasible_found} of {config.n_samples} feasible samples after {stats.samples_attempted} attempts",
            dataset=ds, stats=stats)
    return ds, stats


def typical_dataset(model: NetworkModel, n_samples: int, width: float = 0.2, seed: int = 0,
                    max_attempts: int | None = None, literal_p0: bool = False, workers: int = 1,
                    active_tol: float = DEFAULT_ACTIVE_TOL, pool=None):
    """Baseline: i.i.d. loads uniform in ``[(1-width) x0, (1+width) x0]``.

    ``x0`` is the nominal load.  With ``literal_p0`` the reactive nominal is
    replaced by the active one.  Infeasible draws are redrawn.
    """
    if not 0 < width < 1:
        raise ValueError("width must lie in (0, 1)")
    x0 = model.load_vector()
    if literal_p0:
        x0 = np.concatenate([model.pd0, model.pd0])
    meta = {"method": TYPICAL, "seed": seed,
            "config": {"n_samples": n_samples, "width": width, "literal_p0": literal_p0,
                       "max_attempts": max_attempts, "active_tol": active_tol}}
    ds = Dataset.for_model(model, meta, active_tol)
    stats = RunStats()
    track = _Tracker(ds, stats)
    cap = 100 * n_samples if max_attempts is None else max_attempts
    rng = np.random.default_rng(seed)
    lo, hi = (1 - width) * x0, (1 + width) * x0
    batch = max(1, workers)
    own_pool = None
    if pool is None and workers > 1:
        pool = own_pool = ProcessPoolExecutor(max_workers=workers)
    t = time.perf_counter()
    try:
        while stats.feasible_found < n_samples and stats.samples_attempted < cap:
            k = min(batch, cap - stats.samples_attempted)
            cands = [rng.uniform(lo, hi) for _ in range(k)]
            if pool is not None and k > 1:
                sols = list(pool.map(solve_acopf, [model] * k, cands))
            else:
                sols = [solve_acopf(model, x) for x in cands]
            for sol in sols:
                stats.samples_attempted += 1
                if sol.ok:
                    track.accept(sol)
                    if stats.feasible_found >= n_samples:
                        break
    finally:
        if own_pool is not None:
            own_pool.shutdown()
    _tick(stats, "solve", t)
    ds.metadata["stats"] = stats.summary()
    if stats.feasible_found < n_samples:
        raise AttemptBudgetExhausted(
            f"{stats.feasible_found} of {n_samples} feasible samples after {stats.samples_attempted} attempts",
            dataset=ds, stats=stats)
    return ds, stats
