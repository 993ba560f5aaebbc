"""Numba kernels for the Euler-Maruyama engine.

One replicate is a pure function of (stream seed, replicate index): every
Gaussian increment is generated on demand from the counter-based generator in
:mod:`collidyn.rng`, keyed by (seed, replicate, side, particle key,
coordinate, step).  Replicates are embarrassingly parallel; outputs are
written to per-replicate slots, so results are bit-identical for any thread
count and schedule.

Drifts are per-coordinate polynomials (separable potentials) plus an optional
mean-field pull ``-alpha * (x - mean)`` toward the side's empirical mean.
"""

import numpy as np
from numba import njit, prange, uint64

from .rng import normal_at

# stopping rule kind codes (shared with stopping.py)
EPS_COLLISION = 1
EXACT_1D = 2
BALL_ENTRY = 3
BOX_EXIT = 4
BALL_EXIT = 5
TIME_CAP = 6

# status codes
OK = 0
BLOWUP = 1

_U0 = uint64(0)
_U1 = uint64(1)


@njit(cache=True, inline="always")
def _dpoly(dcoef, k, x):
    acc = 0.0
    for j in range(dcoef.shape[1] - 1, -1, -1):
        acc = acc * x + dcoef[k, j]
    return acc


@njit(cache=True, inline="always")
def _dist2(a, b, dim):
    s = 0.0
    for k in range(dim):
        d = a[k] - b[k]
        s += d * d
    return s


@njit(cache=True)
def _check_rules(kinds, params, xp, yp, xn, yn, t_prev, t_next, dim,
                 res_loc):
    """First triggered rule on the step (state_prev -> state_next).

    Returns (rule_index, time); res_loc[0] and res_loc[1] receive the tagged
    locations (interpolated for the exact 1-D crossing, state_next
    otherwise).  rule_index is -1 when nothing triggered.
    """
    for i in range(kinds.shape[0]):
        kind = kinds[i]
        if kind == EPS_COLLISION:
            thr = params[i, 0]  # = 2*eps
            if _dist2(xn, yn, dim) <= thr * thr:
                for k in range(dim):
                    res_loc[0, k] = xn[k]
                    res_loc[1, k] = yn[k]
                return i, t_next
        elif kind == EXACT_1D:
            dp = xp[0] - yp[0]
            dn = xn[0] - yn[0]
            if dn == 0.0 or (dp < 0.0 and dn > 0.0) or (dp > 0.0 and dn < 0.0):
                if dn == 0.0 or t_next == t_prev:
                    s = 1.0
                else:
                    s = dp / (dp - dn)
                res_loc[0, 0] = xp[0] + s * (xn[0] - xp[0])
                res_loc[1, 0] = yp[0] + s * (yn[0] - yp[0])
                return i, t_prev + s * (t_next - t_prev)
        elif kind == BALL_ENTRY:
            eps = params[i, 0]
            both = params[i, 1] != 0.0
            inside_x = _dist2(xn, params[i, 2:2 + dim], dim) <= eps * eps
            inside_y = _dist2(yn, params[i, 2:2 + dim], dim) <= eps * eps
            if (inside_x and inside_y) if both else inside_x:
                for k in range(dim):
                    res_loc[0, k] = xn[k]
                    res_loc[1, k] = yn[k]
                return i, t_next
        elif kind == BOX_EXIT:
            if xn[0] >= params[i, 0] and yn[0] <= params[i, 1]:
                for k in range(dim):
                    res_loc[0, k] = xn[k]
                    res_loc[1, k] = yn[k]
                return i, t_next
        elif kind == BALL_EXIT:
            radius = params[i, 0]
            side = int(params[i, 1])
            pos = xn if side == 0 else yn
            if _dist2(pos, params[i, 2:2 + dim], dim) >= radius * radius:
                for k in range(dim):
                    res_loc[0, k] = xn[k]
                    res_loc[1, k] = yn[k]
                return i, t_next
        elif kind == TIME_CAP:
            if t_next >= params[i, 0]:
                for k in range(dim):
                    res_loc[0, k] = xn[k]
                    res_loc[1, k] = yn[k]
                return i, t_next
    return -1, t_next


@njit(cache=True)
def _sim_first_hit(dpx, dpy, alpha, n_part, dim, x0, y0, pkeys, two_sided,
                   dt, sigma, n_steps, seed, rep, tag,
                   kinds, params,
                   loc, mean_acc, final, traj, thin, record_all):
    """One replicate; returns (rule_index, time, status, blow_side,
    blow_particle, max_step_disp, n_steps_done)."""
    x = np.empty((n_part, dim))
    y = np.empty((n_part, dim))
    for p in range(n_part):
        for k in range(dim):
            x[p, k] = x0[p, k]
            y[p, k] = y0[p, k]
    xp = np.empty(dim)
    yp = np.empty(dim)
    mx = np.empty(dim)
    my = np.empty(dim)
    sq = sigma * np.sqrt(dt)
    max_disp = 0.0
    n_saved = 0
    if thin > 0:
        n_rec = traj.shape[2]
        for p in range(n_rec):
            for k in range(dim):
                traj[n_saved, 0, p, k] = x[p if record_all else tag, k]
                traj[n_saved, 1, p, k] = y[p if record_all else tag, k]
        n_saved = 1
    # rules may already hold at the initial state
    idx, t_hit = _check_rules(kinds, params, x[tag], y[tag], x[tag], y[tag],
                              0.0, 0.0, dim, loc)
    if idx >= 0:
        for p in range(n_part):
            for k in range(dim):
                final[0, p, k] = x[p, k]
                final[1, p, k] = y[p, k]
        return idx, t_hit, OK, -1, -1, 0.0, 0
    for step in range(n_steps):
        ustep = uint64(step)
        if alpha != 0.0:
            for k in range(dim):
                sx = 0.0
                sy = 0.0
                for p in range(n_part):
                    sx += x[p, k]
                    sy += y[p, k]
                mx[k] = sx / n_part
                my[k] = sy / n_part
        for k in range(dim):
            xp[k] = x[tag, k]
            yp[k] = y[tag, k]
        blow_side = -1
        blow_particle = -1
        for p in range(n_part):
            key = pkeys[p]
            for k in range(dim):
                xv = x[p, k]
                drift = -_dpoly(dpx, k, xv)
                if alpha != 0.0:
                    drift -= alpha * (xv - mx[k])
                nv = xv + drift * dt + sq * normal_at(
                    seed, rep, _U0, key, uint64(k), ustep)
                if not np.isfinite(nv):
                    blow_side = 0
                    blow_particle = p
                x[p, k] = nv
            if two_sided:
                for k in range(dim):
                    yv = y[p, k]
                    drift = -_dpoly(dpy, k, yv)
                    if alpha != 0.0:
                        drift -= alpha * (yv - my[k])
                    nv = yv + drift * dt + sq * normal_at(
                        seed, rep, _U1, key, uint64(k), ustep)
                    if not np.isfinite(nv):
                        blow_side = 1
                        blow_particle = p
                    y[p, k] = nv
        t_next = (step + 1) * dt
        if blow_side >= 0:
            return -2, t_next, BLOWUP, blow_side, blow_particle, max_disp, step + 1
        dx = np.sqrt(_dist2(x[tag], xp, dim))
        dy = np.sqrt(_dist2(y[tag], yp, dim))
        if dx > max_disp:
            max_disp = dx
        if dy > max_disp:
            max_disp = dy
        for k in range(dim):
            mean_acc[0, k] += x[tag, k]
            mean_acc[1, k] += y[tag, k]
        if thin > 0 and (step + 1) % thin == 0 and n_saved < traj.shape[0]:
            n_rec = traj.shape[2]
            for p in range(n_rec):
                for k in range(dim):
                    traj[n_saved, 0, p, k] = x[p if record_all else tag, k]
                    traj[n_saved, 1, p, k] = y[p if record_all else tag, k]
            n_saved += 1
        idx, t_hit = _check_rules(kinds, params, xp, yp, x[tag], y[tag],
                                  step * dt, t_next, dim, loc)
        if idx >= 0:
            for p in range(n_part):
                for k in range(dim):
                    final[0, p, k] = x[p, k]
                    final[1, p, k] = y[p, k]
            return idx, t_hit, OK, -1, -1, max_disp, step + 1
    for p in range(n_part):
        for k in range(dim):
            final[0, p, k] = x[p, k]
            final[1, p, k] = y[p, k]
    for k in range(dim):
        loc[0, k] = x[tag, k]
        loc[1, k] = y[tag, k]
    return -1, n_steps * dt, OK, -1, -1, max_disp, n_steps


@njit(cache=True, parallel=True)
def first_hit_batch(dpx, dpy, alpha, n_part, dim, x0, y0, pkeys, two_sided,
                    dt, sigma, n_steps, seed, rep0, n_reps, tag,
                    kinds, params, thin, record_all,
                    out_rule, out_time, out_loc, out_maxdisp, out_status,
                    out_blow, out_mean, out_final, out_traj, out_nsteps):
    for r in prange(n_reps):
        idx, t_hit, status, bside, bpart, mdisp, ndone = _sim_first_hit(
            dpx, dpy, alpha, n_part, dim, x0, y0, pkeys, two_sided,
            dt, sigma, n_steps, seed, uint64(rep0 + r), tag, kinds, params,
            out_loc[r], out_mean[r], out_final[r], out_traj[r], thin,
            record_all)
        out_rule[r] = idx
        out_time[r] = t_hit
        out_status[r] = status
        out_blow[r, 0] = bside
        out_blow[r, 1] = bpart
        out_maxdisp[r] = mdisp
        out_nsteps[r] = ndone


@njit(cache=True)
def _sim_mean_track(dpx, alpha, n_part, dim, x0, y0, pkeys,
                    dt, sigma, n_steps, seed, rep, lam1, lam2,
                    burn_step, thin, series, out_max):
    x = np.empty((n_part, dim))
    y = np.empty((n_part, dim))
    for p in range(n_part):
        for k in range(dim):
            x[p, k] = x0[p, k]
            y[p, k] = y0[p, k]
    mx = np.empty(dim)
    my = np.empty(dim)
    sq = sigma * np.sqrt(dt)
    max_dx = 0.0
    max_dy = 0.0
    n_saved = 0
    for step in range(n_steps):
        ustep = uint64(step)
        for k in range(dim):
            sx = 0.0
            sy = 0.0
            for p in range(n_part):
                sx += x[p, k]
                sy += y[p, k]
            mx[k] = sx / n_part
            my[k] = sy / n_part
        dev_x = np.sqrt(_dist2(mx, lam1, dim))
        dev_y = np.sqrt(_dist2(my, lam2, dim))
        if step >= burn_step:
            if dev_x > max_dx:
                max_dx = dev_x
            if dev_y > max_dy:
                max_dy = dev_y
        if thin > 0 and step % thin == 0 and n_saved < series.shape[0]:
            series[n_saved, 0] = dev_x
            series[n_saved, 1] = dev_y
            n_saved += 1
        for p in range(n_part):
            key = pkeys[p]
            for k in range(dim):
                xv = x[p, k]
                nv = (xv + (-_dpoly(dpx, k, xv) - alpha * (xv - mx[k])) * dt
                      + sq * normal_at(seed, rep, _U0, key, uint64(k), ustep))
                if not np.isfinite(nv):
                    return BLOWUP, max_dx, max_dy, step + 1
                x[p, k] = nv
                yv = y[p, k]
                nv = (yv + (-_dpoly(dpx, k, yv) - alpha * (yv - my[k])) * dt
                      + sq * normal_at(seed, rep, _U1, key, uint64(k), ustep))
                if not np.isfinite(nv):
                    return BLOWUP, max_dx, max_dy, step + 1
                y[p, k] = nv
    return OK, max_dx, max_dy, n_steps


@njit(cache=True, parallel=True)
def mean_track_batch(dpx, alpha, n_part, dim, x0, y0, pkeys,
                     dt, sigma, n_steps, seed, rep0, n_reps, lam1, lam2,
                     burn_step, thin, out_series, out_max, out_status):
    for r in prange(n_reps):
        status, mdx, mdy, _ = _sim_mean_track(
            dpx, alpha, n_part, dim, x0, y0, pkeys, dt, sigma, n_steps,
            seed, uint64(rep0 + r), lam1, lam2, burn_step, thin,
            out_series[r], out_max[r])
        out_status[r] = status
        out_max[r, 0] = mdx
        out_max[r, 1] = mdy


@njit(cache=True)
def _sim_coupling(dpx, alpha, n_part, dim, x0, y0, pkeys,
                  dt, sigma, n_burn, n_steps, seed, rep, lam1, lam2):
    """Cohort pair plus linearized pair sharing the tagged particle's noise.

    The linearized copies start from the tagged positions at the coupling
    time and are anchored at the wells instead of the empirical means.
    Returns (status, sup ||X_tag - x||, sup ||Y_tag - y||).
    """
    x = np.empty((n_part, dim))
    y = np.empty((n_part, dim))
    for p in range(n_part):
        for k in range(dim):
            x[p, k] = x0[p, k]
            y[p, k] = y0[p, k]
    zx = np.empty(dim)
    zy = np.empty(dim)
    mx = np.empty(dim)
    my = np.empty(dim)
    sq = sigma * np.sqrt(dt)
    sup_x = 0.0
    sup_y = 0.0
    tag_key = pkeys[0]
    for step in range(n_steps):
        ustep = uint64(step)
        for k in range(dim):
            sx = 0.0
            sy = 0.0
            for p in range(n_part):
                sx += x[p, k]
                sy += y[p, k]
            mx[k] = sx / n_part
            my[k] = sy / n_part
        if step == n_burn:
            for k in range(dim):
                zx[k] = x[0, k]
                zy[k] = y[0, k]
        if step >= n_burn:
            for k in range(dim):
                nv = (zx[k] + (-_dpoly(dpx, k, zx[k])
                               - alpha * (zx[k] - lam1[k])) * dt
                      + sq * normal_at(seed, rep, _U0, tag_key, uint64(k), ustep))
                zx[k] = nv
                nv = (zy[k] + (-_dpoly(dpx, k, zy[k])
                               - alpha * (zy[k] - lam2[k])) * dt
                      + sq * normal_at(seed, rep, _U1, tag_key, uint64(k), ustep))
                zy[k] = nv
        for p in range(n_part):
            key = pkeys[p]
            for k in range(dim):
                xv = x[p, k]
                nv = (xv + (-_dpoly(dpx, k, xv) - alpha * (xv - mx[k])) * dt
                      + sq * normal_at(seed, rep, _U0, key, uint64(k), ustep))
                if not np.isfinite(nv):
                    return BLOWUP, sup_x, sup_y
                x[p, k] = nv
                yv = y[p, k]
                nv = (yv + (-_dpoly(dpx, k, yv) - alpha * (yv - my[k])) * dt
                      + sq * normal_at(seed, rep, _U1, key, uint64(k), ustep))
                if not np.isfinite(nv):
                    return BLOWUP, sup_x, sup_y
                y[p, k] = nv
        if step >= n_burn:
            if not (np.isfinite(zx[0]) and np.isfinite(zy[0])):
                return BLOWUP, sup_x, sup_y
            dx = np.sqrt(_dist2(x[0], zx, dim))
            dy = np.sqrt(_dist2(y[0], zy, dim))
            if dx > sup_x:
                sup_x = dx
            if dy > sup_y:
                sup_y = dy
    return OK, sup_x, sup_y


@njit(cache=True, parallel=True)
def coupling_batch(dpx, alpha, n_part, dim, x0, y0, pkeys,
                   dt, sigma, n_burn, n_steps, seed, rep0, n_reps,
                   lam1, lam2, out_sup, out_status):
    for r in prange(n_reps):
        status, sx, sy = _sim_coupling(
            dpx, alpha, n_part, dim, x0, y0, pkeys, dt, sigma,
            n_burn, n_steps, seed, uint64(rep0 + r), lam1, lam2)
        out_status[r] = status
        out_sup[r, 0] = sx
        out_sup[r, 1] = sy
