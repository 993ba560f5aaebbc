"""Confining potentials, quadratic interaction, and their analytic derivatives.

All supported potentials are coordinate-separable polynomials,
``V(x) = sum_k P_k(x_k)``, stored as one ascending-coefficient row per
coordinate.  That keeps gradients and Hessians exact (the Hessian is
diagonal), makes every instance serializable for the config layer, and lets
the simulation kernels evaluate drifts with a single Horner pass per
coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

__all__ = [
    "PotentialSpec",
    "InteractionSpec",
    "EffectivePotential",
    "quadratic",
    "symmetric_double_well",
    "asymmetric_double_well",
    "polynomial",
    "estimate_theta",
    "find_wells",
    "AssumptionError",
    "ConfigurationError",
    "NumericError",
]


class ConfigurationError(ValueError):
    """Invalid parameters or dimension mismatch."""


class AssumptionError(ValueError):
    """A structural assumption of the model is violated (named in the message)."""


class NumericError(RuntimeError):
    """Non-finite values or a solver that failed to converge."""


def _polyval(coeffs, x):
    # Horner on ascending coefficients; x may be an array.
    acc = np.zeros_like(np.asarray(x, dtype=float))
    for c in coeffs[::-1]:
        acc = acc * x + c
    return acc


def _polyder(coeffs):
    k = np.arange(1, len(coeffs))
    d = coeffs[1:] * k
    return d if len(d) else np.zeros(1)


class PotentialSpec:
    """A coordinate-separable polynomial potential with exact derivatives.

    Parameters
    ----------
    coeffs : array, shape (d, K)
        Ascending polynomial coefficients of each coordinate's contribution.
    kind : str
        One of ``quadratic``, ``symmetric_double_well``,
        ``asymmetric_double_well``, ``polynomial``.
    params : dict
        The constructor parameters, echoed into configs and reports.
    """

    def __init__(self, coeffs, kind: str, params: dict | None = None):
        coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float)).copy()
        if not np.all(np.isfinite(coeffs)):
            raise ConfigurationError("potential coefficients must be finite")
        coeffs.flags.writeable = False
        self.coeffs = coeffs
        self.kind = kind
        self.params = dict(params or {})
        self.dimension = coeffs.shape[0]
        self._d1 = np.array([_pad(_polyder(row)) for row in coeffs])
        self._d2 = np.array([_pad(_polyder(_polyder(row))) for row in coeffs])
        self._d1.flags.writeable = False
        self._d2.flags.writeable = False

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dimension:
            raise ConfigurationError(
                f"point dimension {x.shape[-1]} != potential dimension {self.dimension}"
            )
        return x

    def value(self, x):
        """V(x); accepts a point (d,) or a batch (..., d)."""
        x = self._check(x)
        return sum(_polyval(self.coeffs[k], x[..., k]) for k in range(self.dimension))

    def grad(self, x):
        x = self._check(x)
        out = np.empty_like(x)
        for k in range(self.dimension):
            out[..., k] = _polyval(self._d1[k], x[..., k])
        return out

    def hess(self, x):
        """Hessian at a single point, shape (d, d) (diagonal by separability)."""
        x = self._check(np.asarray(x, dtype=float))
        diag = np.array([_polyval(self._d2[k], x[k]) for k in range(self.dimension)])
        return np.diag(diag)

    def hess_diag(self, x):
        x = self._check(x)
        out = np.empty_like(x)
        for k in range(self.dimension):
            out[..., k] = _polyval(self._d2[k], x[..., k])
        return out

    def drift_coeffs(self):
        """Derivative coefficient table used by the simulation kernels."""
        return self._d1

    def __repr__(self):
        return f"PotentialSpec(kind={self.kind!r}, d={self.dimension}, {self.params})"


def _pad(row, width=None):
    row = np.asarray(row, dtype=float)
    if width is None:
        return row
    out = np.zeros(width)
    out[: len(row)] = row
    return out


def _coeff_table(rows):
    width = max(len(r) for r in rows)
    return np.array([_pad(r, width) for r in rows])


def quadratic(gamma: float, center=0.0, dimension: int = 1) -> PotentialSpec:
    """V(x) = gamma/2 * ||x - center||^2 (gamma >= 0; 0 gives the flat potential)."""
    if gamma < 0:
        raise ConfigurationError("quadratic potential needs gamma >= 0")
    center = np.broadcast_to(np.asarray(center, dtype=float), (dimension,))
    rows = [
        np.array([0.5 * gamma * c * c, -gamma * c, 0.5 * gamma]) for c in center
    ]
    spec = PotentialSpec(
        _coeff_table(rows), "quadratic",
        {"gamma": gamma, "center": center.tolist(), "dimension": dimension},
    )
    if gamma > 0:
        spec.well = center.copy()  # known minimizer, used by the convex-pair costs
    return spec


def symmetric_double_well(beta: float, dimension: int = 1) -> PotentialSpec:
    """Double well beta*(x1^4/4 - x1^2/2); quadratic beta/2*x_k^2 in coordinates k >= 2."""
    if beta <= 0:
        raise ConfigurationError("symmetric double well needs beta > 0")
    rows = [np.array([0.0, 0.0, -beta / 2, 0.0, beta / 4])]
    rows += [np.array([0.0, 0.0, beta / 2]) for _ in range(dimension - 1)]
    return PotentialSpec(
        _coeff_table(rows), "symmetric_double_well",
        {"beta": beta, "dimension": dimension},
    )


def asymmetric_double_well() -> PotentialSpec:
    """The tilted well x^4/4 + x^3/3 - x^2/2 (one-dimensional)."""
    rows = [np.array([0.0, 0.0, -0.5, 1.0 / 3.0, 0.25])]
    return PotentialSpec(_coeff_table(rows), "asymmetric_double_well", {"dimension": 1})


def polynomial(coefficients) -> PotentialSpec:
    """Custom separable polynomial; ``coefficients[k]`` are ascending for coordinate k."""
    rows = [np.asarray(r, dtype=float) for r in coefficients]
    if not rows:
        raise ConfigurationError("need at least one coordinate polynomial")
    return PotentialSpec(
        _coeff_table(rows), "polynomial",
        {"coefficients": [r.tolist() for r in rows]},
    )


@dataclass(frozen=True)
class InteractionSpec:
    """Quadratic interaction strength: F(x) = alpha/2 * ||x||^2."""

    alpha: float

    def validate(self, theta: float):
        if not self.alpha > -theta:
            raise AssumptionError(
                "synchronization requires alpha > -theta "
                f"(alpha={self.alpha}, theta={theta}); the effective potential "
                "V + alpha/2*||x - m||^2 must be uniformly convex"
            )


class EffectivePotential:
    """Psi(x) = V(x) + alpha/2 * ||x - anchor||^2, uniformly convex when alpha > -theta."""

    def __init__(self, base: PotentialSpec, alpha: float, anchor):
        self.base = base
        self.alpha = float(alpha)
        anchor = np.broadcast_to(
            np.asarray(anchor, dtype=float), (base.dimension,)
        ).copy()
        anchor.flags.writeable = False
        self.anchor = anchor
        self.dimension = base.dimension
        self._well = None

    def value(self, x):
        x = np.asarray(x, dtype=float)
        quad = 0.5 * self.alpha * np.sum((x - self.anchor) ** 2, axis=-1)
        return self.base.value(x) + quad

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return self.base.grad(x) + self.alpha * (x - self.anchor)

    def hess(self, x):
        return self.base.hess(x) + self.alpha * np.eye(self.dimension)

    def hess_diag(self, x):
        return self.base.hess_diag(x) + self.alpha

    def as_potential(self) -> PotentialSpec:
        """Fold the anchored quadratic into a plain separable polynomial."""
        rows = []
        for k in range(self.dimension):
            a = self.anchor[k]
            quad = np.array([0.5 * self.alpha * a * a, -self.alpha * a, 0.5 * self.alpha])
            width = max(self.base.coeffs.shape[1], 3)
            rows.append(_pad(self.base.coeffs[k], width) + _pad(quad, width))
        return PotentialSpec(
            np.array(rows), "polynomial",
            {"folded_from": self.base.kind, "alpha": self.alpha,
             "anchor": self.anchor.tolist()},
        )

    @property
    def well(self):
        """The unique minimizer, solved by Newton on the gradient."""
        if self._well is None:
            w = _newton_root(self.grad, self.hess, self.anchor.copy())
            w.flags.writeable = False
            self._well = w
        return self._well


def _newton_root(grad, hess, x0, tol=1e-13, max_iter=100):
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(max_iter):
        g = grad(x)
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in Newton iteration")
        if np.linalg.norm(g) <= tol:
            return x
        x = x - np.linalg.solve(hess(x), g)
    g = grad(x)
    if np.linalg.norm(g) <= tol * 100:
        return x
    raise NumericError(f"Newton iteration stalled, residual {np.linalg.norm(g):.3e}")


def _min_hess_eig_1d(d2_coeffs, lo, hi, n_grid):
    xs = np.linspace(lo, hi, n_grid)
    vals = _polyval(d2_coeffs, xs)
    i = int(np.argmin(vals))
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, n_grid - 1)]
    if a == b:
        return float(vals[i]), float(xs[i])
    res = minimize_scalar(lambda t: _polyval(d2_coeffs, t), bounds=(a, b),
                          method="bounded", options={"xatol": 1e-12})
    refined = min(float(res.fun), float(vals[i]))
    return refined, float(res.x)


def estimate_theta(p: PotentialSpec, search_box=None, grid: int = 2001,
                   max_widenings: int = 16) -> float:
    """Infimum over space of the smallest Hessian eigenvalue of V.

    The Hessian is diagonal, so the infimum decomposes into per-coordinate
    1-D searches: a grid scan followed by a bounded local refinement.  The
    box is widened until the boundary values strictly exceed the interior
    minimum, which certifies (up to grid tolerance) that the infimum is
    interior; degree <= 2 coordinates have a constant second derivative and
    are read off directly.
    """
    if search_box is None:
        lo, hi = -3.0, 3.0
    else:
        lo, hi = float(search_box[0]), float(search_box[1])
    best = np.inf
    for k in range(p.dimension):
        d2 = p._d2[k]
        if np.count_nonzero(d2[1:]) == 0:  # constant second derivative
            best = min(best, float(d2[0]))
            continue
        a, b = lo, hi
        for _ in range(max_widenings):
            val, _loc = _min_hess_eig_1d(d2, a, b, grid)
            if not np.isfinite(val):
                raise NumericError("non-finite Hessian entries in theta search")
            edge = min(float(_polyval(d2, a)), float(_polyval(d2, b)))
            if edge > val:
                break
            c, h = 0.5 * (a + b), 0.5 * (b - a)
            a, b = c - 1.5 * h, c + 1.5 * h
        else:
            raise NumericError("theta search box kept widening; Hessian not coercive")
        best = min(best, val)
    return float(best)


def _descend(p: PotentialSpec, x0, gtol=1e-6, max_iter=20000):
    """Gradient descent with Armijo backtracking, then a Newton polish.

    The descent phase only needs to settle inside the right basin; Newton on
    the gradient then drives the residual below 1e-10 (and to machine zero on
    symmetric landscapes, keeping mirrored wells exactly mirrored).
    """
    x = np.asarray(x0, dtype=float).copy()
    step = 1.0
    for _ in range(max_iter):
        g = p.grad(x)
        gn = np.linalg.norm(g)
        if not np.isfinite(gn):
            raise NumericError("non-finite gradient during well search")
        if gn <= gtol:
            eig, vec = np.linalg.eigh(p.hess(x))
            if eig[0] > 0:
                break
            # landed on a saddle or maximum: slide off along negative curvature
            direction = vec[:, 0]
            shift = 1e-3 * (1.0 + np.linalg.norm(x))
            left = x - shift * direction
            right = x + shift * direction
            x = left if p.value(left) <= p.value(right) else right
            continue
        v = p.value(x)
        while step > 1e-16:
            trial = x - step * g
            if p.value(trial) <= v - 0.1 * step * gn * gn:
                break
            step *= 0.5
        else:
            raise NumericError("backtracking line search stalled in well search")
        x = x - step * g
        step = min(step * 1.5, 1.0)
    else:
        raise NumericError("well search did not converge")
    try:
        x = _newton_root(p.grad, p.hess, x, tol=1e-14, max_iter=12)
    except NumericError:
        pass
    if np.linalg.norm(p.grad(x)) > 1e-10:
        raise NumericError("well polish left gradient above tolerance")
    return x


def find_wells(p: PotentialSpec, seeds):
    """Locate the two strict local minima of V from the given seeds.

    Returns the wells ordered ascending in coordinate 1.  Raises
    AssumptionError when the descent does not find exactly two distinct
    minima (one per basin).
    """
    seeds = [np.broadcast_to(np.asarray(s, dtype=float), (p.dimension,)) for s in seeds]
    if len(seeds) < 2:
        raise AssumptionError("need at least two seeds in distinct basins")
    found = []
    for s in seeds:
        x = _descend(p, s)
        if not any(np.linalg.norm(x - w) <= 1e-6 for w in found):
            found.append(x)
    if len(found) != 2:
        raise AssumptionError(
            f"potential must have exactly two strict local minima, found {len(found)} "
            "distinct minimizers from the seeds"
        )
    found.sort(key=lambda w: w[0])
    lam1, lam2 = found
    for w in (lam1, lam2):
        eig = np.linalg.eigvalsh(p.hess(w))
        if eig.min() <= 0:
            raise AssumptionError(
                "converged critical point is not a strict local minimum "
                f"(min Hessian eigenvalue {eig.min():.3e})"
            )
    return lam1, lam2
