"""Analytic predictions for collision times and collision locations.

Everything the simulations are later checked against is computed here from
the potential landscape alone: deterministic ascent/descent flows, the
admissible collision radius ``eps0``, the collision cost surface ``H0`` with
its minimizer ``lambda0``, the finite-radius costs ``h_eps``/``h_eps_hat``
with their minimizer sets, the certified radius threshold ``eps_c``, and the
aggregate particle potential ``Upsilon_N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .potentials import (
    AssumptionError,
    ConfigurationError,
    EffectivePotential,
    InteractionSpec,
    NumericError,
    PotentialSpec,
    estimate_theta,
    find_wells,
)

__all__ = [
    "FlowPath",
    "integrate_flow",
    "compute_eps0",
    "solve_lambda0",
    "eval_h0_linear",
    "solve_z0_linear",
    "sphere_infimum",
    "sphere_argmin",
    "ball_infimum",
    "eval_h_eps",
    "eval_h_eps_hat",
    "minimize_h_eps",
    "estimate_eps_c",
    "upsilon",
    "upsilon_pairwise",
    "upsilon_grad",
    "upsilon_minimizers",
    "MinimizerSet",
    "Landscape",
]


@dataclass
class FlowPath:
    times: np.ndarray
    points: np.ndarray          # (n, d)
    converged: bool             # gradient norm reached 1e-12 (descending)
    diverged: bool              # left the divergence bound (ascending)

    @property
    def final(self):
        return self.points[-1]


def integrate_flow(p, x0, direction="descending", horizon=60.0, step=1e-3,
                   divergence_bound=1e6) -> FlowPath:
    """Classical RK4 integration of the gradient flow dx/dt = -/+ grad(x).

    Descending flows stop early once the gradient norm falls below 1e-12;
    ascending flows stop (and are flagged) once the state leaves the
    divergence bound.
    """
    if step <= 0 or horizon < 0:
        raise ConfigurationError("need step > 0 and horizon >= 0")
    sign = -1.0 if direction == "descending" else 1.0
    if direction not in ("descending", "ascending"):
        raise ConfigurationError(f"unknown flow direction {direction!r}")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    n = int(round(horizon / step))
    times = [0.0]
    points = [x.copy()]
    converged = diverged = False
    f = lambda z: sign * p.grad(z)
    t = 0.0
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * step * k1)
        k3 = f(x + 0.5 * step * k2)
        k4 = f(x + step * k3)
        x = x + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += step
        if not np.all(np.isfinite(x)):
            raise NumericError(f"flow became non-finite after t={times[-1]:.6g}")
        times.append(t)
        points.append(x.copy())
        if direction == "descending" and np.linalg.norm(p.grad(x)) <= 1e-12:
            converged = True
            break
        if direction == "ascending" and np.linalg.norm(x) > divergence_bound:
            diverged = True
            break
    return FlowPath(np.array(times), np.array(points), converged, diverged)


def _eps0_from_flows(f1: FlowPath, f2: FlowPath, well1, well2) -> float:
    n1, n2 = len(f1.points), len(f2.points)
    n = max(n1, n2)
    pts1 = np.vstack([f1.points, np.tile(f1.final, (n - n1, 1))])
    pts2 = np.vstack([f2.points, np.tile(f2.final, (n - n2, 1))])
    dist = np.linalg.norm(pts1 - pts2, axis=1)
    w1 = f1.final if well1 is None else np.atleast_1d(np.asarray(well1, dtype=float))
    w2 = f2.final if well2 is None else np.atleast_1d(np.asarray(well2, dtype=float))
    for fl, w in ((f1, w1), (f2, w2)):
        if np.linalg.norm(fl.final - w) > 1e-5:
            raise ConfigurationError(
                "descent flow did not settle at its well within the horizon; "
                "increase the horizon"
            )
    eps0 = 0.5 * min(float(dist.min()), float(np.linalg.norm(w1 - w2)))
    if eps0 <= 1e-9:
        raise AssumptionError(
            "the deterministic flows collide; initial points must generate "
            "collision-free zero-noise dynamics"
        )
    return eps0


def compute_eps0(p1, x1, x2, p2=None, well1=None, well2=None,
                 horizon=60.0, step=1e-2) -> float:
    """Half the infimum over time of the distance between the two descent flows.

    The infimum over the discrete grid is combined with the limiting value
    ``||well1 - well2|| / 2`` (the flows converge to the wells, so the
    post-horizon tail is controlled by the well separation).  Raises when the
    flows collide, i.e. the radius budget would be empty.
    """
    if p2 is None:
        p2 = p1
    f1 = integrate_flow(p1, np.atleast_1d(np.asarray(x1, dtype=float)),
                        "descending", horizon, step)
    f2 = integrate_flow(p2, np.atleast_1d(np.asarray(x2, dtype=float)),
                        "descending", horizon, step)
    return _eps0_from_flows(f1, f2, well1, well2)


def _damped_newton(fun, jac, x0, tol=1e-12, max_iter=200):
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    g = fun(x)
    gn = np.linalg.norm(g)
    for _ in range(max_iter):
        if gn <= tol:
            return x
        dx = np.linalg.solve(jac(x), g)
        scale = 1.0
        for _ in range(30):
            trial = x - scale * dx
            gt = fun(trial)
            gtn = np.linalg.norm(gt)
            if gtn < gn:
                x, g, gn = trial, gt, gtn
                break
            scale *= 0.5
        else:
            break
    if gn <= tol:
        return x
    raise NumericError(f"Newton solve did not converge, residual {gn:.3e}")


def solve_lambda0(potential: PotentialSpec, alpha: float, well1, well2):
    """Minimizer of the collision cost: the root of grad V + alpha*Id shifted
    by alpha*(well1+well2)/2, found by damped Newton from the midpoint."""
    well1 = np.atleast_1d(np.asarray(well1, dtype=float))
    well2 = np.atleast_1d(np.asarray(well2, dtype=float))
    target = 0.5 * alpha * (well1 + well2)
    d = potential.dimension
    fun = lambda lam: potential.grad(lam) + alpha * lam - target
    jac = lambda lam: potential.hess(lam) + alpha * np.eye(d)
    lam0 = _damped_newton(fun, jac, 0.5 * (well1 + well2))
    resid = np.linalg.norm(
        2 * potential.grad(lam0) + alpha * (lam0 - well1) + alpha * (lam0 - well2)
    )
    if resid > 1e-10:
        raise NumericError(f"collision-point residual {resid:.3e} above 1e-10")
    return lam0


def _well_of(psi, hint=None):
    well = getattr(psi, "well", None)
    if well is not None:
        return np.asarray(well, dtype=float)
    from .potentials import _newton_root

    x0 = np.zeros(psi.dimension) if hint is None else np.asarray(hint, dtype=float)
    return _newton_root(psi.grad, psi.hess, x0)


def eval_h0_linear(psi1, psi2, lam) -> float:
    """Zero-radius collision cost of a uniformly convex pair at the point lam."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    w1, w2 = _well_of(psi1), _well_of(psi2)
    return float(psi1.value(lam) - psi1.value(w1) + psi2.value(lam) - psi2.value(w2))


def solve_z0_linear(psi1, psi2):
    """Minimizer of the pair cost: the zero of grad Psi1 + grad Psi2."""
    w1, w2 = _well_of(psi1), _well_of(psi2)
    fun = lambda z: psi1.grad(z) + psi2.grad(z)
    jac = lambda z: psi1.hess(z) + psi2.hess(z)
    return _damped_newton(fun, jac, 0.5 * (w1 + w2))


def _sphere_starts(center, radius, well, n_starts, dim):
    """Deterministic start points on the sphere, well-facing direction first."""
    dirs = []
    to_well = np.asarray(well, dtype=float) - center
    nw = np.linalg.norm(to_well)
    dirs.append(to_well / nw if nw > 0 else _unit(np.ones(dim)))
    for k in range(dim):
        for s in (1.0, -1.0):
            e = np.zeros(dim)
            e[k] = s
            dirs.append(e)
    rng = np.random.default_rng(1905)
    while len(dirs) < n_starts:
        v = rng.standard_normal(dim)
        dirs.append(_unit(v))
    return [center + radius * u for u in dirs[:n_starts]]


def _unit(v):
    return v / np.linalg.norm(v)


def sphere_argmin(psi, well, center, radius, n_starts=16):
    """Minimize psi over the sphere of the given center and radius.

    d = 1 evaluates the two boundary points exactly.  d >= 2 runs projected
    gradient descent from deterministic starts (the direction toward the well
    first) and keeps the best converged point.
    """
    if radius <= 0:
        raise ConfigurationError("sphere radius must be positive")
    center = np.atleast_1d(np.asarray(center, dtype=float))
    dim = center.shape[0]
    if dim == 1:
        pts = [center - radius, center + radius]
        vals = [float(psi.value(p)) for p in pts]
        i = int(np.argmin(vals))
        return pts[i], vals[i]
    best_x, best_v = None, np.inf
    for x in _sphere_starts(center, radius, well, n_starts, dim):
        x = np.asarray(x, dtype=float)
        eta = 1.0
        v = float(psi.value(x))
        for _ in range(400):
            g = psi.grad(x)
            u = (x - center) / radius
            gt = g - np.dot(g, u) * u
            if np.linalg.norm(gt) <= 1e-12 * (1.0 + abs(v)):
                break
            while eta > 1e-16:
                trial = center + radius * _unit(x - eta * gt - center)
                tv = float(psi.value(trial))
                if tv <= v - 1e-4 * eta * np.dot(gt, gt):
                    break
                eta *= 0.5
            else:
                break
            x, v = trial, tv
            eta = min(eta * 1.5, 1.0)
        if v < best_v or (v == best_v and best_x is not None
                          and tuple(x) < tuple(best_x)):
            best_x, best_v = x, v
    return best_x, best_v


def sphere_infimum(psi, well, center, radius, n_starts=16) -> float:
    """Infimum of psi - psi(well) over the boundary sphere.

    By convexity this equals the infimum over the closed ball whenever the
    well lies outside it, which is how the boundary value enters every
    collision cost below.
    """
    well = np.atleast_1d(np.asarray(well, dtype=float))
    _, v = sphere_argmin(psi, well, center, radius, n_starts)
    return v - float(psi.value(well))


def ball_infimum(psi, well, center, radius) -> float:
    """Infimum of psi - psi(well) over the closed ball (0 if the well is inside)."""
    well = np.atleast_1d(np.asarray(well, dtype=float))
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if np.linalg.norm(well - center) <= radius:
        return 0.0
    return sphere_infimum(psi, well, center, radius)


def eval_h_eps(psi1, well1, psi2, well2, lam, eps) -> float:
    """Two-sided collision cost at radius eps: both boundary infima, always summed."""
    if eps <= 0:
        raise ConfigurationError("collision radius eps must be positive")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    return (sphere_infimum(psi1, well1, lam, eps)
            + sphere_infimum(psi2, well2, lam, eps))


def eval_h_eps_hat(psi1, well1, psi2, well2, lam, eps) -> float:
    """Position-dependent exit cost at radius eps.

    Inside an eps-neighborhood of a well only the opposite side has to travel,
    so only that boundary infimum counts; elsewhere both terms add.  The
    boundary-equality case is folded into the two-term branch.
    """
    if eps <= 0:
        raise ConfigurationError("collision radius eps must be positive")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    well1 = np.atleast_1d(np.asarray(well1, dtype=float))
    well2 = np.atleast_1d(np.asarray(well2, dtype=float))
    if np.linalg.norm(lam - well1) < eps:
        return sphere_infimum(psi2, well2, lam, eps)
    if np.linalg.norm(lam - well2) < eps:
        return sphere_infimum(psi1, well1, lam, eps)
    return eval_h_eps(psi1, well1, psi2, well2, lam, eps)


@dataclass
class MinimizerSet:
    """Clustered minimizers of the radius-eps collision cost."""

    epsilon: float
    points: list = field(default_factory=list)
    value: float = np.inf


def minimize_h_eps(psi1, well1, psi2, well2, eps, multistart=12,
                   seed=0) -> MinimizerSet:
    """Descend lam -> h_eps(lam) from multiple starts and cluster the results.

    The descent direction is the envelope gradient grad Psi1(x*) +
    grad Psi2(y*) evaluated at the two active boundary minimizers.
    """
    well1 = np.atleast_1d(np.asarray(well1, dtype=float))
    well2 = np.atleast_1d(np.asarray(well2, dtype=float))
    dim = well1.shape[0]
    rng = np.random.default_rng(seed)
    starts = []
    for t in np.linspace(0.1, 0.9, max(multistart - 2, 2)):
        starts.append((1 - t) * well1 + t * well2)
    spread = max(np.linalg.norm(well2 - well1), 1.0)
    while len(starts) < multistart:
        base = starts[int(rng.integers(len(starts)))]
        starts.append(base + 0.1 * spread * rng.standard_normal(dim))

    def h_and_grad(lam):
        x, vx = sphere_argmin(psi1, well1, lam, eps)
        y, vy = sphere_argmin(psi2, well2, lam, eps)
        val = (vx - float(psi1.value(well1))) + (vy - float(psi2.value(well2)))
        return val, psi1.grad(x) + psi2.grad(y)

    found = []
    for lam in starts:
        lam = np.asarray(lam, dtype=float).copy()
        v, g = h_and_grad(lam)
        eta = 0.5
        for _ in range(300):
            gn = np.linalg.norm(g)
            if gn <= 1e-10:
                break
            while eta > 1e-14:
                trial = lam - eta * g
                tv, tg = h_and_grad(trial)
                if tv <= v - 1e-4 * eta * gn * gn:
                    break
                eta *= 0.5
            else:
                break
            lam, v, g = trial, tv, tg
            eta = min(eta * 1.5, 0.5)
        found.append((lam, v))
    best = min(v for _, v in found)
    clusters: list[tuple[np.ndarray, float]] = []
    for lam, v in sorted(found, key=lambda lv: (lv[1], tuple(lv[0]))):
        if v > best + 1e-8:
            continue
        if not any(np.linalg.norm(lam - c) <= 1e-5 for c, _ in clusters):
            clusters.append((lam, v))
    return MinimizerSet(epsilon=float(eps),
                        points=[c for c, _ in clusters],
                        value=float(best))


def estimate_eps_c(psi1, well1, psi2, well2, grid, eps0=None) -> float:
    """Certified grid lower bound for the radius threshold eps_c.

    For each radius in the ascending grid, checks that the near-well costs
    m1 (opposite side reaching a 2*eps ball around well1) and m2 both
    strictly exceed the global two-sided cost inf_lam h_eps; the largest
    radius passing the check is returned.
    """
    grid = sorted(float(e) for e in grid)
    if not grid:
        raise ConfigurationError("eps_c grid must not be empty")
    if grid[0] <= 0 or (eps0 is not None and grid[-1] >= eps0):
        raise ConfigurationError("eps_c grid must lie strictly inside (0, eps0)")
    well1 = np.atleast_1d(np.asarray(well1, dtype=float))
    well2 = np.atleast_1d(np.asarray(well2, dtype=float))
    certified = None
    for eps in grid:
        m1 = ball_infimum(psi2, well2, well1, 2 * eps)
        m2 = ball_infimum(psi1, well1, well2, 2 * eps)
        hbar = minimize_h_eps(psi1, well1, psi2, well2, eps).value
        if m1 > hbar and m2 > hbar:
            certified = eps
    if certified is None:
        raise AssumptionError(
            "no grid radius is certified below the threshold; refine the grid "
            "toward smaller radii"
        )
    return certified


def upsilon(points, p: PotentialSpec, alpha: float) -> float:
    """Aggregate particle potential, mean form: sum V(x_i) + alpha/2 sum ||x_i - xbar||^2.

    The alpha/2 weight on the spread is forced by the pairwise definition
    (alpha/(4N) sum_{i,j} ||x_i - x_j||^2): the two agree identically, and
    the gradient reproduces the per-particle drift grad V(x_i) + alpha
    (x_i - xbar).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    xbar = pts.mean(axis=0)
    return float(np.sum(p.value(pts)) + 0.5 * alpha * np.sum((pts - xbar) ** 2))


def upsilon_pairwise(points, p: PotentialSpec, alpha: float) -> float:
    """Aggregate particle potential, pairwise form (identity check against upsilon)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sum(p.value(pts)) + alpha / (4 * n) * np.sum(diff ** 2))


def upsilon_grad(points, p: PotentialSpec, alpha: float):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    xbar = pts.mean(axis=0)
    return p.grad(pts) + alpha * (pts - xbar)


def upsilon_minimizers(p: PotentialSpec, alpha: float, well1, well2, n: int):
    """The two replicated-well configurations, verified to be critical points."""
    if n < 1:
        raise ConfigurationError("need at least one particle")
    out = []
    for w in (well1, well2):
        rep = np.tile(np.atleast_1d(np.asarray(w, dtype=float)), (n, 1))
        g = upsilon_grad(rep, p, alpha)
        if np.abs(g).max() > 1e-10:
            raise NumericError("replicated well is not a critical point of the "
                               f"aggregate potential (|grad| = {np.abs(g).max():.2e})")
        out.append(rep)
    return tuple(out)


@dataclass
class Landscape:
    """Derived analytics of one confining potential + interaction pair."""

    potential: PotentialSpec
    interaction: InteractionSpec
    well1: np.ndarray
    well2: np.ndarray
    theta: float
    x_init: tuple
    eps0: float
    lambda0: np.ndarray
    Hbar0: float
    psi1: EffectivePotential
    psi2: EffectivePotential

    @classmethod
    def build(cls, potential: PotentialSpec, alpha: float, x1, x2,
              seeds=None, flow_horizon=60.0, flow_step=1e-2,
              theta_box=None, theta_grid=2001) -> "Landscape":
        x1 = np.broadcast_to(np.asarray(x1, dtype=float), (potential.dimension,))
        x2 = np.broadcast_to(np.asarray(x2, dtype=float), (potential.dimension,))
        well1, well2 = find_wells(potential, seeds if seeds is not None else [x1, x2])
        if theta_box is None:
            lo = min(well1.min(), well2.min()) - 2.0
            hi = max(well1.max(), well2.max()) + 2.0
            theta_box = (min(lo, -3.0), max(hi, 3.0))
        theta = estimate_theta(potential, theta_box, theta_grid)
        interaction = InteractionSpec(alpha)
        interaction.validate(theta)
        flows = []
        for xi, wi, name in ((x1, well1, "x1"), (x2, well2, "x2")):
            fl = integrate_flow(potential, xi, "descending", flow_horizon, flow_step)
            if np.linalg.norm(fl.final - wi) > 1e-4:
                raise AssumptionError(
                    f"initial point {name} does not lie in the basin of its "
                    "assigned well: each start must descend to its own attractor"
                )
            flows.append(fl)
        eps0 = _eps0_from_flows(flows[0], flows[1], well1, well2)
        lam0 = solve_lambda0(potential, alpha, well1, well2)
        psi1 = EffectivePotential(potential, alpha, well1)
        psi2 = EffectivePotential(potential, alpha, well2)
        hbar0 = cls._h0(potential, alpha, well1, well2, lam0)
        if hbar0 < 0:
            raise NumericError(f"collision cost {hbar0} must be nonnegative")
        return cls(potential, interaction, well1, well2, theta, (x1, x2),
                   eps0, lam0, hbar0, psi1, psi2)

    @staticmethod
    def _h0(potential, alpha, well1, well2, lam):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        return float(
            2 * potential.value(lam) - potential.value(well1)
            - potential.value(well2)
            + 0.5 * alpha * np.sum((lam - well1) ** 2)
            + 0.5 * alpha * np.sum((lam - well2) ** 2)
        )

    @property
    def alpha(self) -> float:
        return self.interaction.alpha

    @property
    def wells(self):
        return self.well1, self.well2

    def H0(self, lam) -> float:
        """Collision cost 2V - V(well1) - V(well2) + both interaction terms."""
        return self._h0(self.potential, self.alpha, self.well1, self.well2, lam)

    def grad_H0(self, lam):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        return (2 * self.potential.grad(lam)
                + self.alpha * (lam - self.well1)
                + self.alpha * (lam - self.well2))

    def _check_eps(self, eps):
        if not 0 < eps < self.eps0:
            raise ConfigurationError(
                f"collision radius eps={eps} must lie in (0, eps0={self.eps0:.6g}); "
                "eps0 is half the minimal separation of the deterministic flows"
            )

    def h_eps(self, lam, eps) -> float:
        self._check_eps(eps)
        return eval_h_eps(self.psi1, self.well1, self.psi2, self.well2, lam, eps)

    def h_eps_hat(self, lam, eps) -> float:
        self._check_eps(eps)
        return eval_h_eps_hat(self.psi1, self.well1, self.psi2, self.well2, lam, eps)

    def minimize_h_eps(self, eps, multistart=12, seed=0) -> MinimizerSet:
        self._check_eps(eps)
        return minimize_h_eps(self.psi1, self.well1, self.psi2, self.well2,
                              eps, multistart, seed)

    def estimate_eps_c(self, grid) -> float:
        return estimate_eps_c(self.psi1, self.well1, self.psi2, self.well2,
                              grid, eps0=self.eps0)

    def report(self, eps_grid=()) -> dict:
        """JSON-ready summary used by the command line layer."""
        rows = []
        for eps in eps_grid:
            ms = self.minimize_h_eps(eps)
            rows.append({
                "eps": float(eps),
                "inf_h_eps": ms.value,
                "minimizers": [pt.tolist() for pt in ms.points],
            })
        return {
            "wells": [self.well1.tolist(), self.well2.tolist()],
            "theta": self.theta,
            "alpha": self.alpha,
            "eps0": self.eps0,
            "lambda0": self.lambda0.tolist(),
            "Hbar0": self.Hbar0,
            "h_eps_table": rows,
        }
