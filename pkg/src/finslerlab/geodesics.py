"""Geodesic flow: spray evaluation, fixed-step integration with boundary
events, normal exponential maps, and the cut/focal distance estimators.

Integration is classical fourth-order Runge-Kutta with a fixed step and
bisection refinement of boundary crossings on the domain clearance function.
Fixed steps keep trajectories byte-reproducible across runs; accuracy is
controlled by the step argument and verified by the constant-speed drift.

Everything is batched: a state array has shape (B, 2n) with position in the
first n slots and fiber velocity in the rest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .norms import eval_norm, reverse

__all__ = [
    "spray",
    "phase_rhs",
    "integrate_batch",
    "integrate_geodesic",
    "Trajectory",
    "ExitRecord",
    "exp_map",
    "unit_normal",
    "NormalRay",
    "normal_exp",
    "NormalJacobianField",
    "jacobian_normal_exp",
    "focal_distance",
    "boundary_cut_distance",
    "cut_distance",
    "DEFAULT_STEP",
]

DEFAULT_STEP = 2e-3
#: relative speed drift that terminates a trajectory as a step failure
DRIFT_LIMIT = 1e-4
#: normalized normal component below which an exit counts as tangential
TANGENCY_THRESHOLD = 1e-3


def spray(norm, x, y, dx_step=2e-5):
    """Geodesic acceleration -2 G(x, y), batched.

    The spray coefficients contract the spatial derivatives of the
    fundamental tensor against y twice and are positively homogeneous of
    degree two in the fiber.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    g = norm.tensor(x, y)
    dg = norm.tensor_x_derivative(x, y, dx_step)  # (..., k, i, j)
    # contract the middle index with y once, then each remaining slot:
    # m[..., k, l] = dg[..., k, j, l] y^j serves both spray terms
    m = (dg * y[..., None, :, None]).sum(axis=-2)
    t1 = (m * y[..., :, None]).sum(axis=-2)
    t2 = (m * y[..., None, :]).sum(axis=-1)
    rhs = 2.0 * t1 - t2
    G = 0.25 * np.linalg.solve(g, rhs[..., None])[..., 0]
    return -2.0 * G


def spray_checked(norm, x, y, dx_step=2e-5):
    """Scalar-friendly spray with a conditioning guard on g."""
    y = np.asarray(y, dtype=float)
    if np.all(y == 0.0):
        raise ValueError("spray undefined at the fiber origin")
    g = norm.tensor(np.asarray(x, dtype=float), y)
    w = np.linalg.eigvalsh(g)
    if np.any(w.max(axis=-1) / np.maximum(w.min(axis=-1), 1e-300) > 1e12):
        raise NumericError("fundamental tensor is numerically singular")
    return spray(norm, x, y, dx_step)


def phase_rhs(norm, states, dx_step):
    n = states.shape[-1] // 2
    x, y = states[..., :n], states[..., n:]
    acc = spray(norm, x, y, dx_step)
    return np.concatenate([y, acc], axis=-1)


def _rk4_step(f, s, dt):
    """One RK4 step; dt may be a per-row column vector."""
    k1 = f(s)
    k2 = f(s + 0.5 * dt * k1)
    k3 = f(s + 0.5 * dt * k2)
    k4 = f(s + dt * k3)
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


TERM_TIMEOUT = "time-out"
TERM_EXIT = "boundary-exit"
TERM_STEP = "step-failure"


def integrate_batch(
    norm,
    domain,
    states0,
    t_max,
    step=DEFAULT_STEP,
    record=False,
    dx_step=None,
    drift_check_every=8,
    clearance_tol=1e-10,
):
    """Integrate a batch of phase states, stopping rows at boundary exit.

    Returns a dict with final/exit data per row; with ``record`` the full
    state history on the uniform time grid is kept (rows are frozen at their
    exit state after leaving).
    """
    states0 = np.atleast_2d(np.asarray(states0, dtype=float))
    B, twon = states0.shape
    n = twon // 2
    if dx_step is None:
        dx_step = 1e-5 * (domain.diameter if domain is not None else 2.0)
    f = lambda s: phase_rhs(norm, s, dx_step)

    n_steps = max(1, int(np.ceil(t_max / step - 1e-12)))
    dt = t_max / n_steps

    s = states0.copy()
    speed0 = norm.value(s[:, :n], s[:, n:])
    active = np.ones(B, dtype=bool)
    term = np.array([TERM_TIMEOUT] * B, dtype=object)
    exit_time = np.full(B, np.nan)
    exit_state = np.full((B, twon), np.nan)
    drift = np.zeros(B)
    hist = np.empty((n_steps + 1, B, twon)) if record else None
    if record:
        hist[0] = s

    clear_all = domain.clearance(s[:, :n]) if domain is not None else None
    pend_rows, pend_base, pend_k, pend_c0, pend_c1 = [], [], [], [], []

    for k in range(1, n_steps + 1):
        if not np.any(active):
            if record:
                hist[k:] = hist[k - 1]
            break
        prev = s[active]
        new = _rk4_step(f, prev, dt)
        s[active] = new
        if domain is not None:
            c_new = domain.clearance(new[:, :n])
            rows = np.flatnonzero(active)
            crossed = c_new < 0.0
            if np.any(crossed):
                # defer the crossing refinement: remember the last inside
                # state and refine all crossings together after the sweep
                ridx = rows[crossed]
                pend_rows.append(ridx)
                pend_base.append(prev[crossed])
                pend_k.append(np.full(len(ridx), k - 1))
                pend_c0.append(clear_all[ridx])
                pend_c1.append(c_new[crossed])
                term[ridx] = TERM_EXIT
                active[ridx] = False
            clear_all[rows] = c_new
        if k % drift_check_every == 0 or k == n_steps:
            rows = np.flatnonzero(active)
            if len(rows):
                sp = norm.value(s[rows, :n], s[rows, n:])
                d = np.abs(sp - speed0[rows]) / speed0[rows]
                drift[rows] = np.maximum(drift[rows], d)
                bad = d > DRIFT_LIMIT
                if np.any(bad):
                    ridx = rows[bad]
                    term[ridx] = TERM_STEP
                    active[ridx] = False
        if record:
            hist[k] = s

    if pend_rows:
        ridx = np.concatenate(pend_rows)
        base = np.concatenate(pend_base)
        kk = np.concatenate(pend_k)
        lo = np.zeros(len(ridx))
        hi = np.full(len(ridx), dt)
        flo = np.concatenate(pend_c0)
        fhi = np.concatenate(pend_c1)
        best_dt = hi.copy()
        best_state = _rk4_step(f, base, hi[:, None])
        best_c = np.abs(fhi)
        kept_lo = np.zeros(len(ridx), dtype=int)
        kept_hi = np.zeros(len(ridx), dtype=int)
        open_rows = np.ones(len(ridx), dtype=bool)
        for _ in range(60):
            act = np.flatnonzero(open_rows)
            if len(act) == 0:
                break
            denom = flo[act] - fhi[act]
            frac = np.clip(np.where(np.abs(denom) > 1e-300, flo[act] / denom, 0.5), 1e-4, 1 - 1e-4)
            mid = lo[act] + frac * (hi[act] - lo[act])
            cand = _rk4_step(f, base[act], mid[:, None])
            cm = domain.clearance(cand[:, :n])
            better = np.abs(cm) < best_c[act]
            bidx = act[better]
            best_c[bidx] = np.abs(cm[better])
            best_dt[bidx] = mid[better]
            best_state[bidx] = cand[better]
            done = np.abs(cm) <= clearance_tol
            open_rows[act[done]] = False
            same = cm > 0.0
            kept_lo[act] = np.where(same, kept_lo[act] + 1, 0)
            kept_hi[act] = np.where(~same, kept_hi[act] + 1, 0)
            fhi[act] = np.where(kept_lo[act] >= 2, 0.5 * fhi[act], fhi[act])
            flo[act] = np.where(kept_hi[act] >= 2, 0.5 * flo[act], flo[act])
            lo[act] = np.where(same, mid, lo[act])
            flo[act] = np.where(same, cm, flo[act])
            hi[act] = np.where(~same, mid, hi[act])
            fhi[act] = np.where(~same, cm, fhi[act])
        exit_time[ridx] = kk * dt + best_dt
        exit_state[ridx] = best_state
        s[ridx] = best_state

    return {
        "final_states": s,
        "termination": term,
        "exit_times": exit_time,
        "exit_states": exit_state,
        "speed_drift": drift,
        "times_grid": np.arange(n_steps + 1) * dt,
        "history": hist,
        "step": dt,
    }


@dataclass
class ExitRecord:
    time: float
    point: np.ndarray
    direction: np.ndarray
    param: float
    tangency: bool
    normal_component: float


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    termination: str
    exit: ExitRecord | None
    speed_drift: float

    def positions(self):
        n = self.states.shape[-1] // 2
        return self.states[:, :n]

    def state_at(self, t, norm, dx_step=2e-5):
        """Dense output: partial RK4 step from the last grid state before t."""
        dt = self.times[1] - self.times[0]
        k = int(np.clip(np.floor(t / dt), 0, len(self.times) - 1))
        rem = t - k * dt
        s = self.states[k][None, :]
        if rem <= 0:
            return self.states[k]
        f = lambda st: phase_rhs(norm, st, dx_step)
        return _rk4_step(f, s, rem)[0]


def _exit_record(norm, domain, state, time):
    n = state.shape[-1] // 2
    point, vel = state[:n], state[n:]
    param = float(domain.boundary_param(point))
    speed = float(eval_norm(norm, point, vel))
    unit = vel / speed
    nu = unit_normal(norm, domain, param, orientation="outward")
    gnu = norm.tensor(point, nu)
    comp = float(np.einsum("i,ij,j->", nu, gnu, unit))
    return ExitRecord(
        time=float(time),
        point=point.copy(),
        direction=unit,
        param=param,
        tangency=bool(abs(comp) < TANGENCY_THRESHOLD),
        normal_component=comp,
    )


def integrate_geodesic(norm, domain, start, t_max, step=DEFAULT_STEP, record=True):
    """Single-trajectory convenience wrapper returning a :class:`Trajectory`.

    ``start`` is a phase state (x, y) as one 2n vector or an (x, y) pair.
    """
    if isinstance(start, (tuple, list)) and len(start) == 2:
        start = np.concatenate([np.asarray(start[0], float), np.asarray(start[1], float)])
    res = integrate_batch(norm, domain, start[None, :], t_max, step=step, record=record)
    term = res["termination"][0]
    exit_rec = None
    if term == TERM_EXIT:
        exit_rec = _exit_record(norm, domain, res["exit_states"][0], res["exit_times"][0])
    if record:
        times, states = res["times_grid"], res["history"][:, 0, :]
        if term == TERM_EXIT:
            keep = times <= res["exit_times"][0]
            times = np.append(times[keep], res["exit_times"][0])
            states = np.vstack([states[keep], res["exit_states"][0]])
    else:
        times = np.array([0.0, t_max])
        states = np.vstack([start, res["final_states"][0]])
    return Trajectory(
        times=times,
        states=states,
        termination=term,
        exit=exit_rec,
        speed_drift=float(res["speed_drift"][0]),
    )


def exp_map(norm, x, y, step=DEFAULT_STEP):
    """Time-one geodesic endpoint, ignoring any domain boundary."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    f = float(eval_norm(norm, x, y))
    if f == 0.0:
        return x.copy()
    state = np.concatenate([x, y / f])
    res = integrate_batch(norm, None, state[None, :], f, step=step)
    n = len(x)
    return res["final_states"][0, :n]


def unit_normal(norm, domain, params, orientation="inward", direction_mode="forward", tol=1e-13):
    """Unit normal(s) to the boundary at the given parameter value(s).

    Solves g_nu(nu, T) = 0, F(nu) = 1 by Newton from the Euclidean normal
    seed; ``direction_mode='reversed'`` computes the normal of the reversed
    norm.  Batched over params; returns (..., n).
    """
    nm = reverse(norm) if direction_mode == "reversed" else norm
    params = np.asarray(params, dtype=float)
    scalar = params.ndim == 0
    t = np.atleast_1d(params)
    z = domain.boundary_point(t)
    tan = domain.boundary_tangent(t)
    tan = tan / np.linalg.norm(tan, axis=-1, keepdims=True)
    seed = domain.boundary_normal_euclid(t, orientation)
    nu = seed / eval_norm(nm, z, seed)[..., None]
    for _ in range(60):
        g = nm.tensor(z, nu)
        ell = np.einsum("...ij,...j->...i", g, nu)
        r1 = np.einsum("...i,...i->...", ell, tan)
        r2 = 0.5 * (np.einsum("...i,...i->...", ell, nu) - 1.0)
        res = np.hypot(r1, r2)
        if np.all(res <= tol):
            break
        jac = np.stack([np.einsum("...ij,...j->...i", g, tan), ell], axis=-2)
        rhs = np.stack([r1, r2], axis=-1)
        delta = np.linalg.solve(jac, rhs[..., None])[..., 0]
        nu = nu - delta
    else:
        raise NumericError("unit normal Newton did not converge")
    if np.any(np.einsum("...i,...i->...", nu, seed) <= 0):
        raise NumericError("unit normal converged to the wrong orientation")
    return nu[0] if scalar else nu


class NormalRay:
    """The inward normal geodesic of the reversed norm from one boundary
    point, integrated once and densely evaluable in the arc parameter."""

    def __init__(self, norm, domain, param, s_max, step=1e-3, dx_step=None):
        self.norm = norm
        self.rev = reverse(norm)
        self.domain = domain
        self.param = float(param)
        self.s_max = float(s_max)
        z = domain.boundary_point(np.atleast_1d(param))[0]
        nu = unit_normal(norm, domain, param, "inward", "reversed")
        state0 = np.concatenate([z, nu])
        self._dx_step = dx_step if dx_step is not None else 1e-5 * domain.diameter
        res = integrate_batch(self.rev, None, state0[None], s_max, step=step, record=True, dx_step=self._dx_step)
        self.traj = Trajectory(
            times=res["times_grid"],
            states=res["history"][:, 0, :],
            termination=res["termination"][0],
            exit=None,
            speed_drift=float(res["speed_drift"][0]),
        )

    def state(self, s):
        return self.traj.state_at(s, self.rev, self._dx_step)

    def point(self, s):
        n = self.traj.states.shape[-1] // 2
        return self.state(s)[:n]

    def points(self, ss):
        return np.array([self.point(s) for s in np.atleast_1d(ss)])


def normal_exp(norm, domain, param, s, step=1e-3, return_trajectory=False):
    """Normal exponential map: reversed-norm geodesic from the boundary along
    the reversed inward unit normal, evaluated at arc parameter s >= 0."""
    if s < 0:
        raise ValueError("the normal map takes s >= 0")
    ray = NormalRay(norm, domain, param, max(s, 1e-9), step=step)
    if return_trajectory:
        return ray.point(s), ray.traj
    return ray.point(s)


class NormalJacobianField:
    """Differential of the normal map along a batch of normal geodesics.

    For each boundary parameter three reversed-norm normal rays are
    integrated in one batch (parameter offsets -d, 0, +d).  The
    boundary-parameter column of the Jacobian is the central difference of
    the neighboring rays; the arc column is the integrated velocity, which
    the integrator provides as the exact s-derivative.
    """

    def __init__(self, norm, domain, params, s_max, step=1e-3, dparam=1e-5):
        self.params = np.atleast_1d(np.asarray(params, dtype=float))
        self.dparam = dparam
        self.s_max = float(s_max)
        self.rev = reverse(norm)
        self._dx_step = 1e-5 * domain.diameter
        B = len(self.params)
        trip = np.concatenate([self.params - dparam, self.params, self.params + dparam])
        z = domain.boundary_point(trip)
        nu = unit_normal(norm, domain, trip, "inward", "reversed")
        states0 = np.concatenate([z, nu], axis=-1)
        res = integrate_batch(self.rev, None, states0, s_max, step=step, record=True, dx_step=self._dx_step)
        self.times = res["times_grid"]
        self.history = res["history"]  # (T+1, 3B, 4)
        self.B = B

    def _dense(self, s_per_node):
        """States of all 3B rays at per-node arc values (vectorized)."""
        s_per_node = np.asarray(s_per_node, dtype=float)
        dt = self.times[1] - self.times[0]
        s3 = np.tile(s_per_node, 3)
        k = np.clip(np.floor(s3 / dt).astype(int), 0, len(self.times) - 1)
        base = self.history[k, np.arange(3 * self.B)]
        rem = (s3 - k * dt)[:, None]
        f = lambda st: phase_rhs(self.rev, st, self._dx_step)
        return _rk4_step(f, base, np.maximum(rem, 0.0))

    def det_history(self):
        """Jacobian determinant on the stored time grid, shape (T+1, B)."""
        h = self.history
        B = self.B
        col_t = (h[:, 2 * B :, :2] - h[:, :B, :2]) / (2.0 * self.dparam)
        col_s = h[:, B : 2 * B, 2:]
        return col_t[..., 0] * col_s[..., 1] - col_t[..., 1] * col_s[..., 0]

    def det_at(self, s_per_node):
        st = self._dense(s_per_node)
        B = self.B
        col_t = (st[2 * B :, :2] - st[:B, :2]) / (2.0 * self.dparam)
        col_s = st[B : 2 * B, 2:]
        return col_t[..., 0] * col_s[..., 1] - col_t[..., 1] * col_s[..., 0]

    def jacobian(self, s, node=0):
        st = self._dense(np.full(self.B, s))
        B = self.B
        col_t = (st[2 * B + node, :2] - st[node, :2]) / (2.0 * self.dparam)
        col_s = st[B + node, 2:]
        return np.stack([col_t, col_s], axis=-1)


def jacobian_normal_exp(norm, domain, param, s, step=1e-3, dparam=1e-5):
    """D exp-perp at (boundary param, s) as a 2x2 matrix."""
    if s <= 0:
        raise ValueError("jacobian of the normal map needs s > 0")
    field = NormalJacobianField(norm, domain, [param], s, step=step, dparam=dparam)
    return field.jacobian(s)


def focal_distances(
    norm,
    domain,
    params,
    s_max,
    resolution=1e-4,
    floor_ratio=1e-6,
    step=1e-3,
):
    """First singular arc distance of the normal map per boundary parameter.

    The determinant is scanned on the integration grid for a sign change and
    refined by a bisection vectorized across nodes; a near-zero touch without
    a crossing (symmetric focusing) is caught by the magnitude floor relative
    to the initial determinant.  Entries with no root are NaN.
    """
    params = np.atleast_1d(np.asarray(params, dtype=float))
    field = NormalJacobianField(norm, domain, params, s_max, step=step)
    dets = field.det_history()  # (T+1, B)
    times = field.times
    B = field.B

    out = np.full(B, np.nan)
    sign = np.sign(dets)
    change = sign[1:] * sign[:-1] < 0
    lo = np.zeros(B)
    hi = np.zeros(B)
    flo = np.zeros(B)
    active = np.zeros(B, dtype=bool)
    for b in range(B):
        idx = np.flatnonzero(change[1:, b])  # skip the s=0 row
        if len(idx):
            i = idx[0] + 1
            lo[b], hi[b] = times[i], times[i + 1]
            flo[b] = dets[i, b]
            active[b] = True
        else:
            mags = np.abs(dets[1:, b])
            imin = int(np.argmin(mags)) + 1
            if mags[imin - 1] <= floor_ratio * abs(dets[1, b]):
                out[b] = times[imin]
    while np.any(active & (hi - lo > resolution)):
        mid = np.where(active, 0.5 * (lo + hi), lo)
        fm = field.det_at(mid)
        same = np.sign(fm) == np.sign(flo)
        lo = np.where(active & same, mid, lo)
        flo = np.where(active & same, fm, flo)
        hi = np.where(active & ~same, mid, hi)
    out[active] = 0.5 * (lo + hi)[active]
    return out


def focal_distance(norm, domain, param, s_max, resolution=1e-4, floor_ratio=1e-6, step=1e-3):
    """Scalar convenience wrapper around :func:`focal_distances`."""
    val = focal_distances(norm, domain, [param], s_max, resolution, floor_ratio, step)[0]
    return None if np.isnan(val) else float(val)


def boundary_cut_distance(
    norm,
    domain,
    param,
    s_max,
    boundary_distance_fn,
    tol,
    resolution=1e-3,
    samples=16,
    step=1e-3,
):
    """How far the inward normal geodesic stays the minimizer to the boundary.

    ``boundary_distance_fn(x)`` measures the forward distance from x to the
    boundary; the estimator bisects on the predicate "that distance still
    equals the arc parameter" (within tol).
    """
    ray = NormalRay(norm, domain, param, s_max, step=step)

    def holds(t):
        pt = ray.point(t)
        if not bool(domain.inside(pt[None])[0] if np.ndim(domain.inside(pt[None])) else domain.inside(pt[None])):
            return False
        return boundary_distance_fn(pt) >= t - tol

    ts = np.linspace(s_max / samples, s_max, samples)
    lo = 0.0
    hi = None
    for t in ts:
        if holds(t):
            lo = t
        else:
            hi = t
            break
    if hi is None:
        return float(s_max)
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))


def trajectory_to_csv(traj, norm, path):
    """Dump a trajectory as CSV: t, positions, velocities, speed (17 digits)."""
    n = traj.states.shape[-1] // 2
    header = (
        ["t"]
        + [f"x{i+1}" for i in range(n)]
        + [f"y{i+1}" for i in range(n)]
        + ["speed"]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        sp = norm.value(traj.states[:, :n], traj.states[:, n:])
        for t, row, s in zip(traj.times, traj.states, sp):
            cells = [t, *row, s]
            fh.write(",".join(format(c, ".17g") for c in cells) + "\n")


def cut_distance(
    norm,
    x,
    v,
    t_max,
    distance_fn,
    tol,
    resolution=1e-3,
    samples=16,
    step=DEFAULT_STEP,
    inside_fn=None,
):
    """Ordinary cut distance along the geodesic from (x, v), by bisection on
    the predicate distance_fn(x, gamma(t)) = t within tol.

    Returns t_max when the geodesic stays minimizing over the whole window.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    f = float(eval_norm(norm, x, v))
    state0 = np.concatenate([x, v / f])
    res = integrate_batch(norm, None, state0[None], t_max, step=step, record=True)
    traj = Trajectory(res["times_grid"], res["history"][:, 0, :], res["termination"][0], None, 0.0)
    n = len(x)

    def holds(t):
        q = traj.state_at(t, norm)[:n]
        if inside_fn is not None and not inside_fn(q):
            return False
        return abs(distance_fn(x, q) - t) <= tol

    ts = np.linspace(t_max / samples, t_max, samples)
    lo, hi = 0.0, None
    for t in ts:
        if holds(t):
            lo = t
        else:
            hi = t
            break
    if hi is None:
        return float(t_max)
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))
