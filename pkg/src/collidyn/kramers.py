"""Monte Carlo sweeps over noise levels and their Arrhenius diagnostics.

A sweep runs independent replicates of one system at each noise level of a
descending grid, stops each replicate at its first collision (or exit), and
fits log(mean stopping time) against 2/sigma^2.  The fitted slope estimates
the exit cost; the analytic prediction enters only the two-sided
probability-window check, never the regression.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dynamics as dyn
from . import landscape as lsc
from . import stopping as stp
from .potentials import ConfigurationError, NumericError
from .rng import spawn_stream_seed

__all__ = [
    "SweepConfig",
    "SweepRow",
    "SweepResult",
    "AllCensoredError",
    "fit_arrhenius",
    "bootstrap_slope_ci",
    "run_sweep",
    "location_report",
    "single_exit_check",
    "coupling_experiment",
    "confinement_experiment",
    "set_threads",
]


class AllCensoredError(RuntimeError):
    """Too few replicates finished for any asymptotic estimate."""


def set_threads(n: Optional[int]):
    if n is not None:
        import numba

        numba.set_num_threads(max(1, int(n)))


@dataclass(frozen=True)
class SweepConfig:
    """One collision-time sweep: system, noise grid, radius, and seeding."""

    system: object
    sigma_grid: tuple
    epsilon: float          # 0 selects the exact 1-D collision rule
    replicates: int
    delta_window: float
    base_seed: int
    dt: float = 1e-3
    dimension: int = 1
    t_max: Optional[float] = None   # None: 10*exp(2(H+0.3)/sigma^2), step-capped
    max_steps: int = dyn.HARD_STEP_BUDGET
    tag: int = 0

    def __post_init__(self):
        grid = tuple(float(s) for s in self.sigma_grid)
        if not grid or any(s <= 0 for s in grid):
            raise ConfigurationError("sigma grid must be positive")
        if any(a <= b for a, b in zip(grid, grid[1:])):
            raise ConfigurationError("sigma grid must be strictly descending")
        object.__setattr__(self, "sigma_grid", grid)
        if self.replicates < 20:
            raise ConfigurationError(
                "need at least 20 replicates per sigma for the interval "
                "diagnostics"
            )
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0 (0 = exact 1-D rule)")
        if self.delta_window <= 0:
            raise ConfigurationError("delta_window must be positive")


@dataclass
class SweepRow:
    sigma: float
    n_uncensored: int
    n_censored: int
    mean_time: float
    mean_log_time: float
    location_median: np.ndarray
    location_mad: float
    window_fraction: float
    excluded: bool

    def csv_row(self):
        return ([f"{self.sigma:.10g}", self.n_uncensored, self.n_censored,
                 f"{self.mean_time:.10g}", f"{self.mean_log_time:.10g}"]
                + [f"{v:.10g}" for v in np.atleast_1d(self.location_median)]
                + [f"{self.location_mad:.10g}", f"{self.window_fraction:.10g}",
                   int(self.excluded)])


@dataclass
class SweepResult:
    rows: list
    arrhenius: dict
    prediction: dict
    delta_window: float
    records: list = field(default_factory=list)
    record_sigmas: list = field(default_factory=list)

    def to_dict(self):
        return {
            "rows": [
                {
                    "sigma": r.sigma,
                    "n_uncensored": r.n_uncensored,
                    "n_censored": r.n_censored,
                    "mean_time": r.mean_time,
                    "mean_log_time": r.mean_log_time,
                    "location_median": np.atleast_1d(r.location_median).tolist(),
                    "location_mad": r.location_mad,
                    "window_fraction": r.window_fraction,
                    "excluded": r.excluded,
                }
                for r in self.rows
            ],
            "arrhenius": self.arrhenius,
            "prediction": self.prediction,
            "delta_window": self.delta_window,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_sweep_csv(self, path):
        dim = np.atleast_1d(self.rows[0].location_median).shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "n_uncensored", "n_censored", "mean_time",
                        "mean_log_time"]
                       + [f"loc_median{k}" for k in range(dim)]
                       + ["location_mad", "window_fraction", "excluded"])
            for r in self.rows:
                w.writerow(r.csv_row())

    @property
    def slope(self):
        return self.arrhenius["slope"]


def fit_arrhenius(inv2sigma2, log_mean_times):
    """Ordinary least squares of log mean time on 2/sigma^2."""
    x = np.asarray(inv2sigma2, dtype=float)
    y = np.asarray(log_mean_times, dtype=float)
    if x.shape[0] < 2:
        raise AllCensoredError(
            "fewer than two usable noise levels; increase sigma or t_max"
        )
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    sst = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if sst == 0 else float(1.0 - np.sum(resid ** 2) / sst)
    return slope, intercept, r2


def bootstrap_slope_ci(times_by_row, inv2sigma2, seed, n_boot=200,
                       level=0.95):
    """Nonparametric bootstrap CI for the Arrhenius slope.

    Resamples the uncensored times within each noise level, refits, and
    returns the percentile interval.
    """
    rng = np.random.default_rng(seed)
    slopes = np.empty(n_boot)
    for b in range(n_boot):
        ys = []
        for times in times_by_row:
            pick = times[rng.integers(0, len(times), len(times))]
            ys.append(np.log(pick.mean()))
        slopes[b] = fit_arrhenius(inv2sigma2, ys)[0]
    lo = float(np.quantile(slopes, 0.5 * (1 - level)))
    hi = float(np.quantile(slopes, 1 - 0.5 * (1 - level)))
    return lo, hi


def _certify_epsilon(landscape, eps):
    # strict excess of both near-well costs certifies eps below the threshold
    lsc.estimate_eps_c(landscape.psi1, landscape.well1,
                       landscape.psi2, landscape.well2, [eps],
                       eps0=landscape.eps0)


def _rules_for(cfg: SweepConfig, eps0):
    if cfg.epsilon == 0:
        return [stp.ExactCollision1D()], eps0
    return [stp.EpsCollision(cfg.epsilon)], eps0


def _aggregate_row(sigma, res: dyn.EngineResult, cfg_dt, hbar0, delta,
                   replicates, kinds):
    uncensored = res.rule_index >= 0
    times_u = res.time[uncensored]
    n_u = int(uncensored.sum())
    mids = 0.5 * (res.loc[uncensored, 0] + res.loc[uncensored, 1])
    if n_u:
        med = np.median(mids, axis=0)
        mad = float(np.median(np.linalg.norm(mids - med, axis=1)))
        mean_t = float(times_u.mean())
        mean_log = float(np.log(times_u).mean())
        lo = np.exp(2.0 * (hbar0 - delta) / sigma ** 2)
        hi = np.exp(2.0 * (hbar0 + delta) / sigma ** 2)
        wfrac = float(np.mean((times_u > lo) & (times_u < hi)))
    else:
        med = np.full(res.loc.shape[2], np.nan)
        mad = mean_t = mean_log = wfrac = float("nan")
    row = SweepRow(
        sigma=float(sigma),
        n_uncensored=n_u,
        n_censored=int(replicates - n_u),
        mean_time=mean_t,
        mean_log_time=mean_log,
        location_median=med,
        location_mad=mad,
        window_fraction=wfrac,
        excluded=n_u < replicates / 2,
    )
    records = []
    for r in range(replicates):
        idx = int(res.rule_index[r])
        records.append(stp.CollisionRecord(
            replicate=r,
            rule_triggered=stp.rule_name(int(kinds[idx]) if idx >= 0 else idx),
            time=float(res.time[r]),
            x_loc=res.loc[r, 0].copy(),
            y_loc=res.loc[r, 1].copy(),
            censored=idx < 0,
            max_step_displacement=float(res.max_disp[r]),
        ))
    return row, records, times_u


def _sweep_core(spec, sigma_grid, rules, cfg: SweepConfig, prediction,
                eps0=None, two_sided=True, threads=None):
    set_threads(threads)
    hbar0 = prediction["Hbar0"]
    rows, all_records, rec_sigmas, times_rows, xs_fit = [], [], [], [], []
    kinds, _ = stp.compile_rules(rules, cfg.dimension, eps0=None)
    for i, sigma in enumerate(sigma_grid):
        t_max = cfg.t_max if cfg.t_max is not None else dyn.default_t_max(
            hbar0, sigma, cfg.dt, cfg.max_steps)
        simcfg = dyn.SimConfig(dt=cfg.dt, t_max=t_max, sigma=sigma,
                               seed=cfg.base_seed, dimension=cfg.dimension,
                               max_steps=cfg.max_steps)
        res = dyn.run_replicates(
            spec, simcfg, rules, cfg.replicates, eps0=eps0, tag=cfg.tag,
            two_sided=two_sided,
            stream_seed=spawn_stream_seed(cfg.base_seed, i),
        )
        row, records, times_u = _aggregate_row(
            sigma, res, cfg.dt, hbar0, cfg.delta_window, cfg.replicates, kinds)
        rows.append(row)
        all_records.extend(records)
        rec_sigmas.extend([sigma] * len(records))
        if not row.excluded:
            times_rows.append(times_u)
            xs_fit.append(2.0 / sigma ** 2)
    if len(xs_fit) < 2:
        raise AllCensoredError(
            "nearly all replicates were censored; increase sigma, t_max, or "
            "the step budget"
        )
    ys_fit = [np.log(t.mean()) for t in times_rows]
    slope, intercept, r2 = fit_arrhenius(xs_fit, ys_fit)
    ci = bootstrap_slope_ci(times_rows, xs_fit,
                            seed=spawn_stream_seed(cfg.base_seed, 10_007))
    result = SweepResult(
        rows=rows,
        arrhenius={"slope": slope, "intercept": intercept, "r2": r2,
                   "slope_ci": list(ci)},
        prediction={k: (v.tolist() if isinstance(v, np.ndarray) else v)
                    for k, v in prediction.items()},
        delta_window=cfg.delta_window,
        records=all_records,
        record_sigmas=rec_sigmas,
    )
    return result


def run_sweep(cfg: SweepConfig, landscape=None, prediction=None,
              threads=None) -> SweepResult:
    """Collision-time sweep for any paired system variant.

    The analytic prediction (collision cost and location) comes from the
    landscape when one is supplied, or from the convex-pair closed forms for
    independent pairs.  With epsilon > 0 the radius is certified against the
    grid bound for the threshold before any simulation runs.
    """
    spec = cfg.system
    eps0 = None
    if landscape is not None:
        eps0 = landscape.eps0
        if prediction is None:
            prediction = {"Hbar0": landscape.Hbar0,
                          "lambda0": landscape.lambda0}
        if cfg.epsilon > 0:
            _certify_epsilon(landscape, cfg.epsilon)
    elif isinstance(spec, dyn.LinearPair):
        z0 = lsc.solve_z0_linear(spec.psi1, spec.psi2)
        if prediction is None:
            prediction = {"Hbar0": lsc.eval_h0_linear(spec.psi1, spec.psi2, z0),
                          "lambda0": z0}
        if cfg.epsilon > 0:
            w1, w2 = lsc._well_of(spec.psi1), lsc._well_of(spec.psi2)
            pair_eps0 = lsc.compute_eps0(spec.psi1, spec.x_init[0],
                                         spec.x_init[1], p2=spec.psi2,
                                         well1=w1, well2=w2)
            eps0 = pair_eps0
            lsc.estimate_eps_c(spec.psi1, w1, spec.psi2, w2, [cfg.epsilon],
                               eps0=pair_eps0)
    if prediction is None:
        raise ConfigurationError(
            "run_sweep needs a landscape or an explicit prediction"
        )
    rules, eps0 = _rules_for(cfg, eps0)
    return _sweep_core(spec, cfg.sigma_grid, rules, cfg, prediction,
                       eps0=eps0, threads=threads)


def location_report(records, lambda0, deltas=(0.1, 0.2), sigmas=None):
    """Concentration of stopped locations around the predicted point.

    Per noise level: median and median absolute deviation of
    ||midpoint - lambda0||, and for each requested delta the fraction of
    records with max(||x - lambda0||, ||y - lambda0||) <= delta.  Rows come
    out in descending sigma order with a monotone-trend flag on the medians.
    """
    lam0 = np.atleast_1d(np.asarray(lambda0, dtype=float))
    recs = [r for r in records if not r.censored]
    if not recs:
        raise ConfigurationError("location report needs at least one "
                                 "uncensored record")
    if sigmas is None:
        groups = {None: recs}
    else:
        groups = {}
        for r, s in zip(records, sigmas):
            if not r.censored:
                groups.setdefault(float(s), []).append(r)
    rows = []
    for sigma in sorted(groups, key=lambda s: -(s or 0.0)):
        grp = groups[sigma]
        devs = np.array([np.linalg.norm(r.midpoint - lam0) for r in grp])
        med = float(np.median(devs))
        mad = float(np.median(np.abs(devs - med)))
        fracs = {}
        for d in deltas:
            hit = [max(np.linalg.norm(r.x_loc - lam0),
                       np.linalg.norm(r.y_loc - lam0)) <= d for r in grp]
            fracs[d] = float(np.mean(hit))
        rows.append({"sigma": sigma, "n": len(grp), "median_deviation": med,
                     "mad": mad, "within": fracs})
    meds = [r["median_deviation"] for r in rows]
    return {
        "rows": rows,
        "median_trend_nonincreasing": all(a >= b - 1e-12 for a, b in
                                          zip(meds, meds[1:])),
    }


def single_exit_check(psi, center, radius, sigma_grid, replicates,
                      base_seed, dt=1e-3, dimension=1, delta_window=0.2,
                      t_max=None, max_steps=dyn.HARD_STEP_BUDGET,
                      threads=None) -> SweepResult:
    """Arrhenius anchor: exit of a single diffusion from a ball at the well.

    The predicted cost is the boundary infimum of psi - psi(well); the sweep
    machinery, regression, and window diagnostics are exactly those of the
    collision experiments.
    """
    well = lsc._well_of(psi)
    center = np.broadcast_to(np.asarray(center, dtype=float), (dimension,))
    if np.linalg.norm(center - well) > 1e-8:
        raise ConfigurationError(
            "the exit ball must be centered at the well so that the ball is "
            "positively invariant for the noiseless flow"
        )
    hbar = lsc.sphere_infimum(psi, well, center, radius)
    prediction = {"Hbar0": hbar, "lambda0": center}
    spec = dyn.LinearPair(psi, psi, (center, center))
    cfg = SweepConfig(system=spec, sigma_grid=tuple(sigma_grid),
                      epsilon=radius, replicates=replicates,
                      delta_window=delta_window, base_seed=base_seed, dt=dt,
                      dimension=dimension, t_max=t_max, max_steps=max_steps)
    rules = [stp.BallExit(tuple(center), radius, side=0)]
    return _sweep_core(spec, cfg.sigma_grid, rules, cfg, prediction,
                       two_sided=False, threads=threads)


def coupling_experiment(spec, dt, sigma, base_seed, xi, t_starts, horizon,
                        n_seeds=100, wells=None, dimension=1,
                        threads=None):
    """Exceedance table for the well-anchored coupling.

    For each coupling start time, the frequency over seeds of the
    sup-distance between a tagged particle and its anchored twin exceeding
    xi on [t_start, horizon].
    """
    set_threads(threads)
    rows = []
    for j, t_start in enumerate(t_starts):
        cfg = dyn.SimConfig(dt=dt, t_max=horizon, sigma=sigma,
                            seed=base_seed, dimension=dimension)
        sup = dyn.couple_linearized(
            spec, cfg, t_start, horizon, n_seeds=n_seeds, wells=wells,
            stream_seed=spawn_stream_seed(base_seed, 20_000 + j),
        )
        exceed = float(np.mean(np.max(sup, axis=1) >= xi))
        rows.append({
            "t_start": float(t_start),
            "exceedance_frequency": exceed,
            "mean_sup_x": float(sup[:, 0].mean()),
            "mean_sup_y": float(sup[:, 1].mean()),
            "n_seeds": int(n_seeds),
            "xi": float(xi),
        })
    return rows


def confinement_experiment(spec, dt, sigma, base_seed, horizon, kappa,
                           n_seeds=100, wells=None, dimension=1, burn=None,
                           threads=None):
    """Fraction of seeds whose empirical means stay kappa-close to the wells.

    The maximum deviation is taken after a burn-in; by default the burn-in is
    the time the noiseless flows need to bring both starts within kappa/2 of
    their wells (the deterministic transient from the initial condition is
    not what the confinement statement is about).
    """
    set_threads(threads)
    dim = dimension
    if wells is None:
        w1, w2 = dyn._wells_of(spec, dim)
    else:
        w1, w2 = (np.broadcast_to(np.asarray(w, float), (dim,)) for w in wells)
    if burn is None:
        burn = 0.0
        for x0, w in ((spec.x_init[0], w1), (spec.x_init[1], w2)):
            fl = lsc.integrate_flow(spec.potential, x0, "descending",
                                    horizon=200.0, step=1e-2)
            dist = np.linalg.norm(fl.points - w, axis=1)
            inside = np.nonzero(dist <= 0.5 * kappa)[0]
            if len(inside) == 0:
                raise ConfigurationError(
                    "noiseless flow never reaches the kappa/2 ball; "
                    "kappa too small for this initial condition"
                )
            burn = max(burn, float(fl.times[inside[0]]))
    cfg = dyn.SimConfig(dt=dt, t_max=horizon, sigma=sigma, seed=base_seed,
                        dimension=dim)
    _, series, out_max = dyn.empirical_mean_track(
        spec, cfg, horizon=horizon, n_seeds=n_seeds, burn=burn,
        thin=max(int(0.1 / dt), 1), wells=(w1, w2),
        stream_seed=spawn_stream_seed(base_seed, 30_000),
    )
    max_dev = np.max(out_max, axis=1)
    return {
        "burn": float(burn),
        "kappa": float(kappa),
        "n_seeds": int(n_seeds),
        "fraction_within": float(np.mean(max_dev <= kappa)),
        "max_deviation_median": float(np.median(max_dev)),
        "max_deviation_p95": float(np.quantile(max_dev, 0.95)),
    }
