"""Stopping rules evaluated on simulated paths, and the records they produce.

A composite rule is an ordered list of elementary rules; on every step the
engine evaluates them in order and stops at the first trigger (list order
breaks ties, which keeps reruns deterministic).  Threshold rules trigger on
the post-step state; the exact one-dimensional sign crossing interpolates the
crossing time and location inside the step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .potentials import ConfigurationError

__all__ = [
    "EpsCollision",
    "ExactCollision1D",
    "BallEntry",
    "BoxExit",
    "BallExit",
    "TimeCap",
    "compile_rules",
    "check",
    "CollisionRecord",
    "write_records_csv",
    "RECORD_CSV_HEADER",
]


@dataclass(frozen=True)
class EpsCollision:
    """Tagged pair within distance 2*epsilon."""

    epsilon: float


@dataclass(frozen=True)
class ExactCollision1D:
    """Sign change of X_tag - Y_tag (d = 1 only; requires x1 < x2)."""


@dataclass(frozen=True)
class BallEntry:
    """Tagged particle(s) inside the ball B(center; epsilon).

    With ``both_sides`` the rule is the simultaneous-entry time of the pair;
    otherwise only the X side is watched.
    """

    center: tuple
    epsilon: float
    both_sides: bool = True


@dataclass(frozen=True)
class BoxExit:
    """One-dimensional buffer crossing: X_tag >= z1 and Y_tag <= z2."""

    z1: float
    z2: float


@dataclass(frozen=True)
class BallExit:
    """Single diffusion leaves B(center; radius); side 0 is X, side 1 is Y."""

    center: tuple
    radius: float
    side: int = 0


@dataclass(frozen=True)
class TimeCap:
    """Trigger at a fixed time."""

    t: float


_KIND_CODE = {
    EpsCollision: K.EPS_COLLISION,
    ExactCollision1D: K.EXACT_1D,
    BallEntry: K.BALL_ENTRY,
    BoxExit: K.BOX_EXIT,
    BallExit: K.BALL_EXIT,
    TimeCap: K.TIME_CAP,
}

_KIND_NAME = {
    K.EPS_COLLISION: "eps_collision",
    K.EXACT_1D: "exact_collision_1d",
    K.BALL_ENTRY: "ball_entry",
    K.BOX_EXIT: "box_exit",
    K.BALL_EXIT: "ball_exit",
    K.TIME_CAP: "time_cap",
}


def rule_name(code: int) -> str:
    if code == -1:
        return "censored"
    if code == -2:
        return "blowup"
    return _KIND_NAME[code]


def compile_rules(rules, dim: int, eps0=None, x_init=None):
    """Flatten rules into the numeric tables the kernels evaluate.

    Validates structural preconditions eagerly: collision radii must sit
    below eps0 when a landscape bound is supplied, and the exact 1-D rule
    needs d = 1 with the ordered start x1 < x2.
    """
    if not rules:
        raise ConfigurationError("need at least one stopping rule")
    kinds = np.empty(len(rules), dtype=np.int32)
    params = np.zeros((len(rules), 2 + dim), dtype=np.float64)
    for i, rule in enumerate(rules):
        code = _KIND_CODE.get(type(rule))
        if code is None:
            raise ConfigurationError(f"unknown stopping rule {rule!r}")
        kinds[i] = code
        if isinstance(rule, EpsCollision):
            if rule.epsilon <= 0:
                raise ConfigurationError("eps_collision needs epsilon > 0")
            if eps0 is not None and rule.epsilon >= eps0:
                raise ConfigurationError(
                    f"collision radius epsilon={rule.epsilon} must be below "
                    f"eps0={eps0:.6g}, half the minimal deterministic flow "
                    "separation"
                )
            params[i, 0] = 2.0 * rule.epsilon
        elif isinstance(rule, ExactCollision1D):
            if dim != 1:
                raise ConfigurationError(
                    "exact collisions are well-posed only in dimension 1; "
                    "use eps_collision for d >= 2"
                )
            if x_init is not None and not float(np.ravel(x_init[0])[0]) < float(
                np.ravel(x_init[1])[0]
            ):
                raise ConfigurationError(
                    "exact 1-D collision rule requires the ordered start x1 < x2"
                )
        elif isinstance(rule, BallEntry):
            if rule.epsilon <= 0:
                raise ConfigurationError("ball_entry needs epsilon > 0")
            center = np.broadcast_to(np.asarray(rule.center, dtype=float), (dim,))
            params[i, 0] = rule.epsilon
            params[i, 1] = 1.0 if rule.both_sides else 0.0
            params[i, 2:2 + dim] = center
        elif isinstance(rule, BoxExit):
            if dim != 1:
                raise ConfigurationError("box_exit is a one-dimensional rule")
            params[i, 0] = rule.z1
            params[i, 1] = rule.z2
        elif isinstance(rule, BallExit):
            if rule.radius <= 0:
                raise ConfigurationError("ball_exit needs radius > 0")
            if rule.side not in (0, 1):
                raise ConfigurationError("ball_exit side must be 0 (X) or 1 (Y)")
            center = np.broadcast_to(np.asarray(rule.center, dtype=float), (dim,))
            params[i, 0] = rule.radius
            params[i, 1] = float(rule.side)
            params[i, 2:2 + dim] = center
        elif isinstance(rule, TimeCap):
            if rule.t < 0:
                raise ConfigurationError("time_cap needs t >= 0")
            params[i, 0] = rule.t
    return kinds, params


def check(rules, x_prev, y_prev, x_next, y_next, t_prev, t_next, dim=None,
          eps0=None):
    """Evaluate a composite rule on one step; None if nothing triggered.

    Thin wrapper over the kernel evaluator, so tests and the engine share one
    implementation.  Returns (rule_index, time, x_loc, y_loc).
    """
    x_prev = np.atleast_1d(np.asarray(x_prev, dtype=float))
    dim = dim or x_prev.shape[0]
    kinds, params = compile_rules(rules, dim, eps0=eps0)
    loc = np.empty((2, dim))
    idx, t_hit = K._check_rules(
        kinds, params,
        x_prev, np.atleast_1d(np.asarray(y_prev, dtype=float)),
        np.atleast_1d(np.asarray(x_next, dtype=float)),
        np.atleast_1d(np.asarray(y_next, dtype=float)),
        float(t_prev), float(t_next), dim, loc,
    )
    if idx < 0:
        return None
    return int(idx), float(t_hit), loc[0].copy(), loc[1].copy()


@dataclass
class CollisionRecord:
    """Outcome of one replicate: what stopped it, when, and where."""

    replicate: int
    rule_triggered: str
    time: float
    x_loc: np.ndarray
    y_loc: np.ndarray
    censored: bool
    max_step_displacement: float = 0.0

    @property
    def midpoint(self):
        return 0.5 * (self.x_loc + self.y_loc)

    def csv_row(self):
        return ([self.replicate, self.rule_triggered,
                 f"{self.time:.10g}", int(self.censored)]
                + [f"{v:.10g}" for v in self.x_loc]
                + [f"{v:.10g}" for v in self.y_loc]
                + [f"{v:.10g}" for v in self.midpoint])


RECORD_CSV_HEADER = ["replicate", "rule", "time", "censored"]


def record_csv_header(dim):
    cols = list(RECORD_CSV_HEADER)
    for prefix in ("x", "y", "mid"):
        cols += [f"{prefix}{k}" for k in range(dim)]
    return cols


def write_records_csv(path, records, dim, sigmas=None):
    """CSV dump of collision records (documented schema).

    ``sigmas`` optionally prepends the noise level of each record, which is
    how sweep outputs keep rows from different noise levels apart.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = record_csv_header(dim)
        if sigmas is not None:
            header = ["sigma"] + header
        w.writerow(header)
        for i, rec in enumerate(records):
            row = rec.csv_row()
            if sigmas is not None:
                row = [f"{sigmas[i]:.10g}"] + row
            w.writerow(row)
