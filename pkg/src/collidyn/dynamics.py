"""Euler-Maruyama simulation of the paired stochastic systems.

Four system variants share one kernel.  Per particle and step the update is

    x <- x - grad(P)(x) * dt - alpha * (x - m) * dt + sigma * sqrt(dt) * xi

where ``P`` is the side's potential, ``m`` is the side's empirical mean for
the interacting variants (absent otherwise), and ``xi`` is drawn from the
side's counter-based sub-stream in a fixed particle order.  The independent
variants fold their full convex potential into ``P`` and run with alpha = 0:

* ``LinearPair``     -- two independent diffusions with convex potentials.
* ``LinearizedPair`` -- drifts anchored at the wells (the frozen-mean system).
* ``CohortPair``     -- N interacting copies per side; the empirical mean
  stands in for the law of the nonlinear process (its natural large
  population approximation), the tagged particle for the process itself.
* ``ParticlePair``   -- the finite-N mean-field systems themselves.

CohortPair and ParticlePair integrate the same equations; they differ in
intent (approximating the nonlinear pair vs. studying the particle system)
and in which predictions the experiment layer attaches to them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .potentials import (
    ConfigurationError,
    EffectivePotential,
    NumericError,
    PotentialSpec,
    find_wells,
)
from .rng import normals
from .stopping import compile_rules

__all__ = [
    "SimConfig",
    "LinearPair",
    "LinearizedPair",
    "CohortPair",
    "ParticlePair",
    "PathState",
    "PathSummary",
    "EngineResult",
    "step",
    "run_replicates",
    "run_until",
    "couple_linearized",
    "empirical_mean_track",
    "default_t_max",
]

HARD_STEP_BUDGET = 50_000_000


@dataclass(frozen=True)
class SimConfig:
    """Integrator step, horizon cap, noise level, stream seed, dimension."""

    dt: float
    t_max: float
    sigma: float
    seed: int
    dimension: int = 1
    max_steps: int = HARD_STEP_BUDGET

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.t_max < self.dt:
            raise ConfigurationError("t_max must be at least one step")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be nonnegative")

    @property
    def n_steps(self) -> int:
        return int(min(round(self.t_max / self.dt), self.max_steps))


def default_t_max(hbar0: float, sigma: float, dt: float,
                  max_steps: int = HARD_STEP_BUDGET) -> float:
    """Horizon 10 * exp(2 (hbar0 + 0.3) / sigma^2), capped by the step budget."""
    t = 10.0 * float(np.exp(min(2.0 * (hbar0 + 0.3) / sigma ** 2, 700.0)))
    return min(t, max_steps * dt)


def _as_point(x, dim):
    return np.broadcast_to(np.asarray(x, dtype=float), (dim,)).astype(float)


def _drift_table(pot) -> np.ndarray:
    if isinstance(pot, EffectivePotential):
        pot = pot.as_potential()
    if not isinstance(pot, PotentialSpec):
        raise ConfigurationError(f"cannot fold {type(pot).__name__} into the engine")
    return np.ascontiguousarray(pot.drift_coeffs())


@dataclass(frozen=True)
class LinearPair:
    psi1: object
    psi2: object
    x_init: tuple

    def engine_params(self, dim):
        return _drift_table(self.psi1), _drift_table(self.psi2), 0.0, 1


@dataclass(frozen=True)
class LinearizedPair:
    potential: PotentialSpec
    alpha: float
    lam1: object
    lam2: object
    x_init: tuple

    def engine_params(self, dim):
        psi1 = EffectivePotential(self.potential, self.alpha, _as_point(self.lam1, dim))
        psi2 = EffectivePotential(self.potential, self.alpha, _as_point(self.lam2, dim))
        return _drift_table(psi1), _drift_table(psi2), 0.0, 1


@dataclass(frozen=True)
class CohortPair:
    potential: PotentialSpec
    alpha: float
    n_cohort: int
    x_init: tuple

    def engine_params(self, dim):
        if self.n_cohort < 2:
            raise ConfigurationError("cohort needs at least two particles")
        table = _drift_table(self.potential)
        return table, table, float(self.alpha), int(self.n_cohort)


@dataclass(frozen=True)
class ParticlePair:
    potential: PotentialSpec
    alpha: float
    n: int
    x_init: tuple

    def engine_params(self, dim):
        if self.n < 2:
            raise ConfigurationError("particle system needs at least two particles")
        table = _drift_table(self.potential)
        return table, table, float(self.alpha), int(self.n)


def _initial_positions(spec, dim, n_part):
    x1 = _as_point(spec.x_init[0], dim)
    x2 = _as_point(spec.x_init[1], dim)
    x0 = np.tile(x1, (n_part, 1))
    y0 = np.tile(x2, (n_part, 1))
    return x0, y0


@dataclass
class PathState:
    """Positions of both systems at one time; the RNG needs no carried state
    beyond (seed, replicate, step index)."""

    time: float
    step_index: int
    x: np.ndarray  # (N, d)
    y: np.ndarray  # (N, d)
    replicate: int = 0


def initial_state(spec, cfg: SimConfig, replicate: int = 0) -> PathState:
    _, _, _, n_part = spec.engine_params(cfg.dimension)
    x0, y0 = _initial_positions(spec, cfg.dimension, n_part)
    return PathState(0.0, 0, x0, y0, replicate)


def step(state: PathState, spec, cfg: SimConfig) -> PathState:
    """One explicit Euler-Maruyama step (pure-python reference path).

    Exercises exactly the kernel's arithmetic and noise keying; tests compare
    the two bit for bit.
    """
    dpx, dpy, alpha, n_part = spec.engine_params(cfg.dimension)
    dim = cfg.dimension
    sq = cfg.sigma * np.sqrt(cfg.dt)

    def advance(pos, table, side):
        drift = np.empty_like(pos)
        for k in range(dim):
            acc = np.zeros(n_part)
            for j in range(table.shape[1] - 1, -1, -1):
                acc = acc * pos[:, k] + table[k, j]
            drift[:, k] = -acc
        if alpha != 0.0:
            drift -= alpha * (pos - pos.mean(axis=0))
        xi = normals(cfg.seed, state.replicate, side, n_part, dim,
                     state.step_index)
        new = pos + drift * cfg.dt + sq * xi
        if not np.all(np.isfinite(new)):
            bad = np.argwhere(~np.isfinite(new))[0]
            raise NumericError(
                f"simulation blew up at t={state.time + cfg.dt:.6g} "
                f"(side {side}, particle {bad[0]}); reduce dt"
            )
        return new

    return PathState(
        time=state.time + cfg.dt,
        step_index=state.step_index + 1,
        x=advance(state.x, dpx, 0),
        y=advance(state.y, dpy, 1),
        replicate=state.replicate,
    )


@dataclass
class PathSummary:
    running_mean_x: np.ndarray
    running_mean_y: np.ndarray
    final_x: np.ndarray
    final_y: np.ndarray
    max_step_displacement: float
    n_steps: int
    traj_times: Optional[np.ndarray] = None
    traj: Optional[np.ndarray] = None  # (n_saved, 2, n_rec, d)


@dataclass
class EngineResult:
    """Raw per-replicate outputs of one batch run."""

    rule_index: np.ndarray      # int32; -1 censored, -2 blowup
    time: np.ndarray
    loc: np.ndarray             # (n, 2, d) tagged stop locations
    max_disp: np.ndarray
    status: np.ndarray
    blow: np.ndarray            # (n, 2) side, particle
    mean_acc: np.ndarray        # (n, 2, d) running sums of tagged positions
    final: np.ndarray           # (n, 2, N, d)
    traj: Optional[np.ndarray]
    n_steps_done: np.ndarray
    n_steps_budget: int


def run_replicates(spec, cfg: SimConfig, rules, n_reps: int, rep0: int = 0,
                   eps0=None, thin: int = 0, record_all: bool = False,
                   tag: int = 0, two_sided: bool = True,
                   stream_seed=None) -> EngineResult:
    """Simulate independent replicates until their first rule trigger.

    Replicate r uses sub-stream (stream seed, rep0 + r); results are
    bit-identical for any thread count.  Blow-ups raise with the time and
    particle index of the first affected replicate.
    """
    dim = cfg.dimension
    dpx, dpy, alpha, n_part = spec.engine_params(dim)
    x0, y0 = _initial_positions(spec, dim, n_part)
    kinds, params = compile_rules(rules, dim, eps0=eps0, x_init=spec.x_init)
    n_steps = cfg.n_steps
    pkeys = np.arange(n_part, dtype=np.uint64)
    seed = np.uint64(cfg.seed if stream_seed is None else stream_seed)

    out_rule = np.empty(n_reps, dtype=np.int32)
    out_time = np.empty(n_reps)
    out_loc = np.empty((n_reps, 2, dim))
    out_disp = np.empty(n_reps)
    out_status = np.empty(n_reps, dtype=np.int32)
    out_blow = np.empty((n_reps, 2), dtype=np.int64)
    out_mean = np.zeros((n_reps, 2, dim))
    out_final = np.empty((n_reps, 2, n_part, dim))
    if thin > 0:
        n_saved = n_steps // thin + 1
        n_rec = n_part if record_all else 1
        out_traj = np.empty((n_reps, n_saved, 2, n_rec, dim))
    else:
        out_traj = np.empty((n_reps, 1, 2, 1, dim))
    out_nsteps = np.empty(n_reps, dtype=np.int64)

    K.first_hit_batch(
        dpx, dpy, alpha, n_part, dim, x0, y0, pkeys, two_sided,
        cfg.dt, cfg.sigma, n_steps, seed, rep0, n_reps, tag,
        kinds, params, thin, record_all,
        out_rule, out_time, out_loc, out_disp, out_status, out_blow,
        out_mean, out_final, out_traj, out_nsteps,
    )
    if np.any(out_status == K.BLOWUP):
        r = int(np.argmax(out_status == K.BLOWUP))
        raise NumericError(
            f"simulation blew up at t={out_time[r]:.6g} in replicate "
            f"{rep0 + r} (side {out_blow[r, 0]}, particle {out_blow[r, 1]}); "
            "the drift is too stiff for this dt"
        )
    return EngineResult(out_rule, out_time, out_loc, out_disp, out_status,
                        out_blow, out_mean, out_final,
                        out_traj if thin > 0 else None, out_nsteps, n_steps)


def run_until(spec, cfg: SimConfig, rules, replicate: int = 0,
              eps0=None, thin: int = 0, record_all: bool = False):
    """One replicate: the triggered record plus a path summary."""
    from .stopping import CollisionRecord, rule_name

    res = run_replicates(spec, cfg, rules, 1, rep0=replicate, eps0=eps0,
                         thin=thin, record_all=record_all)
    idx = int(res.rule_index[0])
    kinds, _ = compile_rules(rules, cfg.dimension, eps0=eps0)
    record = CollisionRecord(
        replicate=replicate,
        rule_triggered=rule_name(int(kinds[idx]) if idx >= 0 else idx),
        time=float(res.time[0]),
        x_loc=res.loc[0, 0].copy(),
        y_loc=res.loc[0, 1].copy(),
        censored=idx == -1,
        max_step_displacement=float(res.max_disp[0]),
    )
    nd = max(int(res.n_steps_done[0]), 1)
    summary = PathSummary(
        running_mean_x=res.mean_acc[0, 0] / nd,
        running_mean_y=res.mean_acc[0, 1] / nd,
        final_x=res.final[0, 0],
        final_y=res.final[0, 1],
        max_step_displacement=float(res.max_disp[0]),
        n_steps=int(res.n_steps_done[0]),
    )
    if thin > 0:
        n_saved = res.traj.shape[1]
        summary.traj = res.traj[0]
        summary.traj_times = np.arange(n_saved) * (thin * cfg.dt)
    return record, summary


def _cohort_params(spec, dim):
    if not isinstance(spec, (CohortPair, ParticlePair)):
        raise ConfigurationError(
            "this operation needs an interacting variant (cohort or particle pair)"
        )
    dpx, _, alpha, n_part = spec.engine_params(dim)
    return dpx, alpha, n_part


def _wells_of(spec, dim, wells=None):
    if wells is not None:
        return _as_point(wells[0], dim), _as_point(wells[1], dim)
    w1, w2 = find_wells(spec.potential,
                        [_as_point(spec.x_init[0], dim),
                         _as_point(spec.x_init[1], dim)])
    return w1, w2


def couple_linearized(spec, cfg: SimConfig, t_start: float, horizon: float,
                      n_seeds: int = 1, rep0: int = 0, wells=None,
                      stream_seed=None):
    """Sup distance between each tagged particle and its well-anchored twin.

    Runs the interacting pair to ``t_start``, then continues both the cohort
    and the linearized pair driven by the tagged particle's own noise
    increments, and reports sup_{[t_start, horizon]} of the two distances
    per replicate, shape (n_seeds, 2).
    """
    if not 0 <= t_start < horizon:
        raise ConfigurationError("need 0 <= t_start < horizon")
    if horizon > cfg.t_max:
        raise ConfigurationError("horizon exceeds the configured t_max")
    dim = cfg.dimension
    dpx, alpha, n_part = _cohort_params(spec, dim)
    lam1, lam2 = _wells_of(spec, dim, wells)
    x0, y0 = _initial_positions(spec, dim, n_part)
    n_burn = int(round(t_start / cfg.dt))
    n_steps = int(round(horizon / cfg.dt))
    pkeys = np.arange(n_part, dtype=np.uint64)
    out_sup = np.empty((n_seeds, 2))
    out_status = np.empty(n_seeds, dtype=np.int32)
    K.coupling_batch(
        dpx, alpha, n_part, dim, x0, y0, pkeys, cfg.dt, cfg.sigma,
        n_burn, n_steps,
        np.uint64(cfg.seed if stream_seed is None else stream_seed),
        rep0, n_seeds, lam1, lam2, out_sup, out_status,
    )
    if np.any(out_status == K.BLOWUP):
        raise NumericError("coupling run blew up; reduce dt")
    return out_sup


def empirical_mean_track(spec, cfg: SimConfig, horizon=None, n_seeds: int = 1,
                         rep0: int = 0, burn: float = 0.0, thin: int = 10,
                         wells=None, stream_seed=None):
    """Per-step deviations of the empirical means from their wells.

    Returns (times, series, max_after_burn): ``series[r, i, s]`` is
    ||mean_side_s - well_s|| at times[i] for replicate r, and
    ``max_after_burn[r, s]`` the maximum over t >= burn.
    """
    dim = cfg.dimension
    dpx, alpha, n_part = _cohort_params(spec, dim)
    lam1, lam2 = _wells_of(spec, dim, wells)
    x0, y0 = _initial_positions(spec, dim, n_part)
    horizon = cfg.t_max if horizon is None else min(horizon, cfg.t_max)
    n_steps = int(round(horizon / cfg.dt))
    burn_step = int(round(burn / cfg.dt))
    thin = max(int(thin), 1)
    n_saved = (n_steps + thin - 1) // thin
    pkeys = np.arange(n_part, dtype=np.uint64)
    out_series = np.empty((n_seeds, n_saved, 2), dtype=np.float32)
    out_max = np.empty((n_seeds, 2))
    out_status = np.empty(n_seeds, dtype=np.int32)
    K.mean_track_batch(
        dpx, alpha, n_part, dim, x0, y0, pkeys, cfg.dt, cfg.sigma, n_steps,
        np.uint64(cfg.seed if stream_seed is None else stream_seed),
        rep0, n_seeds, lam1, lam2, burn_step, thin,
        out_series, out_max, out_status,
    )
    if np.any(out_status == K.BLOWUP):
        raise NumericError("mean-track run blew up; reduce dt")
    times = np.arange(n_saved) * (thin * cfg.dt)
    return times, out_series, out_max
