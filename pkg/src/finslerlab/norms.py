"""Fiberwise Minkowski norm machinery.

A fiber norm F(x, y) is positively 1-homogeneous and strongly convex in the
fiber variable y.  The module provides the closed-form families used
throughout the package (Riemannian, Randers), a family built as the dual of a
smooth co-norm on covectors, a direction-bump perturbation of an existing
norm, and the generic duality operations tying them together: fundamental
tensor, Legendre transform and its inverse, dual norm, reversal.

All evaluation entry points are batched: base points ``x`` and fibers ``y``
are arrays of shape ``(..., n)`` broadcast against each other, and results
keep the leading shape.  Norm objects are immutable after construction, so
every operation here is safe to call concurrently.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvexityViolation, NumericError

__all__ = [
    "FiberNorm",
    "RiemannianNorm",
    "RandersNorm",
    "DualSupportNorm",
    "DirectionBumpNorm",
    "CustomNorm",
    "ReversedNorm",
    "GaussianConformalField",
    "eval_norm",
    "fundamental_tensor",
    "legendre",
    "dual_norm",
    "legendre_inverse",
    "reverse",
    "sphere_directions",
    "norm_to_dict",
    "norm_from_dict",
]


def _atleast_2d(v):
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        return v[None, :], True
    return v, False


def _restore(val, squeeze):
    return val[0] if squeeze else val


def sphere_directions(count, dim, rng=None):
    """Roughly uniform unit directions: a uniform circle for n=2, a Fibonacci
    sphere for n=3, seeded Gaussians otherwise."""
    if dim == 2:
        t = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    if dim == 3:
        i = np.arange(count) + 0.5
        phi = np.arccos(1.0 - 2.0 * i / count)
        golden = np.pi * (1.0 + np.sqrt(5.0))
        theta = golden * i
        return np.stack(
            [
                np.sin(phi) * np.cos(theta),
                np.sin(phi) * np.sin(theta),
                np.cos(phi),
            ],
            axis=-1,
        )
    rng = np.random.default_rng(0) if rng is None else rng
    d = rng.standard_normal((count, dim))
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# Families
# --------------------------------------------------------------------------


class FiberNorm:
    """Base interface for fiber norms.

    Subclasses implement :meth:`value` and may override :meth:`tensor`,
    :meth:`covector` and :meth:`tensor_x_derivative` with closed forms.  The
    base class falls back on symmetric central differences of F**2/2 in the
    fiber variable (step ``fd_rel * F(x, y)``).
    """

    family = "custom"
    dim: int = 2
    #: relative fiber step for the finite-difference fundamental tensor
    fd_rel = 1e-5

    # -- evaluation ---------------------------------------------------------

    def value(self, x, y):
        raise NotImplementedError

    def __call__(self, x, y):
        return self.value(x, y)

    def half_sq(self, x, y):
        v = self.value(x, y)
        return 0.5 * v * v

    # -- fundamental tensor -------------------------------------------------

    def tensor(self, x, y):
        """Fundamental tensor g_y, the fiber Hessian of F**2/2 at (x, y)."""
        return self._fd_tensor(x, y)

    def _fd_tensor(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n = self.dim
        scale = self.value(x, y)
        h = self.fd_rel * scale
        eye = np.eye(n)
        g = np.empty(np.broadcast_shapes(x.shape, y.shape)[:-1] + (n, n))
        hh = h[..., None] if np.ndim(h) else h
        for i in range(n):
            ei = eye[i]
            f_pp = self.half_sq(x, y + hh * ei)
            f_mm = self.half_sq(x, y - hh * ei)
            f_00 = self.half_sq(x, y)
            g[..., i, i] = (f_pp - 2.0 * f_00 + f_mm) / (h * h)
            for j in range(i + 1, n):
                ej = eye[j]
                f1 = self.half_sq(x, y + hh * (ei + ej))
                f2 = self.half_sq(x, y + hh * (ei - ej))
                f3 = self.half_sq(x, y - hh * (ei - ej))
                f4 = self.half_sq(x, y - hh * (ei + ej))
                gij = (f1 - f2 - f3 + f4) / (4.0 * h * h)
                g[..., i, j] = gij
                g[..., j, i] = gij
        return 0.5 * (g + np.swapaxes(g, -1, -2))

    # -- Legendre covector ---------------------------------------------------

    def covector(self, x, y):
        """Legendre transform g_y(y, .) of the fiber vector y."""
        g = self.tensor(x, y)
        return np.einsum("...ij,...j->...i", g, np.asarray(y, dtype=float))

    # -- spatial variation ---------------------------------------------------

    def tensor_x_derivative(self, x, y, step):
        """d g_ij / d x^k by central differences, shape (..., k, i, j)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n = self.dim
        eye = np.eye(n)
        out = np.empty(np.broadcast_shapes(x.shape, y.shape)[:-1] + (n, n, n))
        for k in range(n):
            gp = self.tensor(x + step * eye[k], y)
            gm = self.tensor(x - step * eye[k], y)
            out[..., k, :, :] = (gp - gm) / (2.0 * step)
        return out

    # -- reversal ------------------------------------------------------------

    def reversed_norm(self):
        return ReversedNorm(self)


class RiemannianNorm(FiberNorm):
    """F(x, y) = sqrt(y^T A(x) y) for a symmetric positive definite field A.

    ``matrix`` is either a constant (n, n) array or a batched callable
    ``x -> (..., n, n)``.  An optional ``matrix_grad`` callable returning
    dA_ij/dx^k with shape (..., k, i, j) enables closed-form sprays.
    """

    family = "riemannian"

    def __init__(self, matrix, matrix_grad=None, dim=None):
        if callable(matrix):
            self._matrix_fn = matrix
            self._matrix_const = None
            if dim is None:
                raise ValueError("dim is required for callable matrix fields")
            self.dim = dim
        else:
            m = np.asarray(matrix, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError("constant metric must be a square matrix")
            if not np.allclose(m, m.T, atol=1e-12):
                raise ValueError("metric matrix must be symmetric")
            if np.linalg.eigvalsh(m).min() <= 0:
                raise ConvexityViolation("metric matrix must be positive definite")
            self._matrix_fn = None
            self._matrix_const = m
            self.dim = m.shape[0]
        self._matrix_grad = matrix_grad

    def matrix(self, x):
        if self._matrix_fn is None:
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(self._matrix_const, x.shape[:-1] + (self.dim, self.dim))
        return self._matrix_fn(np.asarray(x, dtype=float))

    def value(self, x, y):
        y = np.asarray(y, dtype=float)
        a = self.matrix(x)
        q = np.einsum("...i,...ij,...j->...", y, a, y)
        return np.sqrt(np.maximum(q, 0.0))

    def tensor(self, x, y):
        y = np.asarray(y, dtype=float)
        a = self.matrix(x)
        return np.broadcast_to(a, np.broadcast_shapes(a.shape[:-2], y.shape[:-1]) + a.shape[-2:]).copy()

    def covector(self, x, y):
        y = np.asarray(y, dtype=float)
        return np.einsum("...ij,...j->...i", self.matrix(x), y)

    def tensor_x_derivative(self, x, y, step):
        if self._matrix_grad is not None:
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            d = self._matrix_grad(x)
            shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
            return np.broadcast_to(d, shape + d.shape[-3:]).copy()
        if self._matrix_fn is None:
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            n = self.dim
            shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
            return np.zeros(shape + (n, n, n))
        return super().tensor_x_derivative(x, y, step)

    def reversed_norm(self):
        return self


class GaussianConformalField:
    """Matrix field exp(2*phi(x)) * I with a Gaussian profile phi.

    phi(x) = amplitude * exp(-|x - center|^2 / (2 * width^2)).  Supplies the
    analytic spatial gradient so geodesic sprays avoid finite differences.
    """

    def __init__(self, amplitude, center, width, dim=2):
        self.amplitude = float(amplitude)
        self.center = np.asarray(center, dtype=float)
        self.width = float(width)
        self.dim = dim

    def phi(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return self.amplitude * np.exp(-np.sum(d * d, axis=-1) / (2.0 * self.width**2))

    def phi_grad(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return -self.phi(x)[..., None] * d / self.width**2

    def matrix(self, x):
        f = np.exp(2.0 * self.phi(x))
        return f[..., None, None] * np.eye(self.dim)

    def matrix_grad(self, x):
        # dA_ij/dx^k = 2 phi_k exp(2 phi) delta_ij
        f = np.exp(2.0 * self.phi(x))
        gp = self.phi_grad(x)
        return 2.0 * f[..., None, None, None] * gp[..., :, None, None] * np.eye(self.dim)

    def norm(self):
        return RiemannianNorm(self.matrix, matrix_grad=self.matrix_grad, dim=self.dim)


class RandersNorm(FiberNorm):
    """F(x, y) = sqrt(y^T A(x) y) + b(x) . y with the drift form b small.

    Admissibility (|b|_{A^{-1}} < 1) is checked at construction on the given
    sample points (or directly for constant fields).
    """

    family = "randers"

    def __init__(self, matrix, one_form, dim=None, check_points=None):
        if callable(matrix):
            if dim is None:
                raise ValueError("dim is required for callable fields")
            self.dim = dim
            self._matrix_fn = matrix
            self._matrix_const = None
        else:
            m = np.asarray(matrix, dtype=float)
            self.dim = m.shape[0]
            self._matrix_fn = None
            self._matrix_const = m
        if callable(one_form):
            self._form_fn = one_form
            self._form_const = None
        else:
            self._form_fn = None
            self._form_const = np.asarray(one_form, dtype=float)
        if check_points is None:
            check_points = np.zeros((1, self.dim))
        a = self.matrix(check_points)
        b = self.one_form(check_points)
        bnorm = np.einsum("...i,...ij,...j->...", b, np.linalg.inv(a), b)
        if np.any(bnorm >= 1.0):
            raise ConvexityViolation("Randers one-form must have a-norm < 1")

    def matrix(self, x):
        if self._matrix_fn is None:
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(self._matrix_const, x.shape[:-1] + (self.dim, self.dim))
        return self._matrix_fn(np.asarray(x, dtype=float))

    def one_form(self, x):
        if self._form_fn is None:
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(self._form_const, x.shape[:-1] + (self.dim,))
        return self._form_fn(np.asarray(x, dtype=float))

    def value(self, x, y):
        y = np.asarray(y, dtype=float)
        a = self.matrix(x)
        b = self.one_form(x)
        alpha = np.sqrt(np.maximum(np.einsum("...i,...ij,...j->...", y, a, y), 0.0))
        return alpha + np.einsum("...i,...i->...", b, y)

    def tensor(self, x, y):
        y = np.asarray(y, dtype=float)
        a = self.matrix(x)
        b = self.one_form(x)
        ay = np.einsum("...ij,...j->...i", a, y)
        alpha = np.sqrt(np.einsum("...i,...i->...", y, ay))
        ell = ay / alpha[..., None]
        f = alpha + np.einsum("...i,...i->...", b, y)
        lb = ell + b
        outer = lb[..., :, None] * lb[..., None, :]
        core = a - ell[..., :, None] * ell[..., None, :]
        return outer + (f / alpha)[..., None, None] * core

    def covector(self, x, y):
        # g_y(y, .) = F(y) * (A y / alpha + b)
        y = np.asarray(y, dtype=float)
        a = self.matrix(x)
        b = self.one_form(x)
        ay = np.einsum("...ij,...j->...i", a, y)
        alpha = np.sqrt(np.einsum("...i,...i->...", y, ay))
        f = alpha + np.einsum("...i,...i->...", b, y)
        return f[..., None] * (ay / alpha[..., None] + b)

    def tensor_x_derivative(self, x, y, step):
        if self._matrix_fn is None and self._form_fn is None:
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            n = self.dim
            shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
            return np.zeros(shape + (n, n, n))
        return super().tensor_x_derivative(x, y, step)

    def reversed_norm(self):
        if self._form_fn is None and self._matrix_fn is None:
            return RandersNorm(self._matrix_const, -self._form_const)
        if self._form_fn is None:
            return RandersNorm(self._matrix_fn, -self._form_const, dim=self.dim)
        form = self._form_fn
        return RandersNorm(
            self._matrix_fn if self._matrix_fn is not None else self._matrix_const,
            lambda x: -form(x),
            dim=self.dim,
        )


class DualSupportNorm(FiberNorm):
    """Norm defined as the dual of a smooth strongly convex co-norm.

    The co-norm object must provide ``value(x, p)``, ``half_sq_grad(x, p)``
    and ``half_sq_hess(x, p)`` (all batched).  Evaluation solves
    grad(f^2/2)(p) = y by Newton iteration; by Legendre duality the solution
    p is the covector of y, F(x, y) = f(x, p), and the fundamental tensor is
    the inverse co-Hessian at p.
    """

    family = "qp_dual"

    def __init__(self, conorm, dim=3, newton_tol=1e-13, max_iter=60):
        self.conorm = conorm
        self.dim = dim
        self.newton_tol = newton_tol
        self.max_iter = max_iter

    def _solve(self, x, y):
        """Newton-invert the co-Legendre map: find p with grad f^2/2 (p) = y."""
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        yb = np.broadcast_to(y, shape + (self.dim,)).reshape(-1, self.dim).copy()
        xb = np.broadcast_to(x, shape + (self.dim,)).reshape(-1, self.dim).copy()
        p = yb.copy()
        scale = np.linalg.norm(yb, axis=-1)
        active = np.ones(len(p), dtype=bool)
        bundle = getattr(self.conorm, "bundle", None)
        for _ in range(self.max_iter):
            if bundle is not None:
                _, grad, hess = bundle(xb[active], p[active])
                r = grad - yb[active]
            else:
                r = self.conorm.half_sq_grad(xb[active], p[active]) - yb[active]
                hess = None
            res = np.linalg.norm(r, axis=-1)
            done = res <= self.newton_tol * scale[active]
            if np.all(done):
                active[active] = False
                break
            if hess is None:
                hess = self.conorm.half_sq_hess(xb[active], p[active])
            step = np.linalg.solve(hess, r[..., None])[..., 0]
            # cap the step to stay away from the fiber origin
            pn = np.linalg.norm(p[active], axis=-1)
            sn = np.linalg.norm(step, axis=-1)
            cap = np.minimum(1.0, 0.8 * pn / np.maximum(sn, 1e-300))
            p[active] -= cap[..., None] * step
            keep = ~done
            idx = np.flatnonzero(active)
            active[idx[done]] = False
            if not np.any(keep):
                break
        if np.any(active):
            raise NumericError("dual-norm Newton failed to converge", best=p.reshape(shape + (self.dim,)))
        return xb, p, shape

    def value(self, x, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1 and np.all(y == 0.0):
            return 0.0
        xb, p, shape = self._solve(x, y)
        return self.conorm.value(xb, p).reshape(shape)

    def covector(self, x, y):
        _, p, shape = self._solve(x, y)
        return p.reshape(shape + (self.dim,))

    def tensor(self, x, y):
        xb, p, shape = self._solve(x, y)
        hess = self.conorm.half_sq_hess(xb, p)
        return np.linalg.inv(hess).reshape(shape + (self.dim, self.dim))


class DirectionBumpNorm(FiberNorm):
    """Multiplicative perturbation (1 + s * bump(x, y/F(x,y))) * F(x, y).

    ``bump`` maps (x, unit fiber vector) to a scalar in [0, 1] and is
    compactly supported.  Positive definiteness of the fundamental tensor is
    the caller's responsibility (see the pairing generator, which bisects on
    the amplitude s); this class only evaluates.
    """

    family = "perturbed"

    def __init__(self, base, amplitude, bump):
        self.base = base
        self.amplitude = float(amplitude)
        self.bump = bump
        self.dim = base.dim

    def value(self, x, y):
        f = self.base.value(x, y)
        y = np.asarray(y, dtype=float)
        safe = np.maximum(f, 1e-300)
        unit = y / np.asarray(safe)[..., None]
        return (1.0 + self.amplitude * self.bump(x, unit)) * f


class CustomNorm(FiberNorm):
    """Wrap an arbitrary batched callable F(x, y)."""

    family = "custom"

    def __init__(self, fn, dim):
        self._fn = fn
        self.dim = dim

    def value(self, x, y):
        return self._fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


class ReversedNorm(FiberNorm):
    """The reversed norm x, y -> F(x, -y)."""

    family = "reversed"

    def __init__(self, base):
        self.base = base
        self.dim = base.dim

    def value(self, x, y):
        return self.base.value(x, -np.asarray(y, dtype=float))

    def tensor(self, x, y):
        return self.base.tensor(x, -np.asarray(y, dtype=float))

    def covector(self, x, y):
        return -self.base.covector(x, -np.asarray(y, dtype=float))

    def tensor_x_derivative(self, x, y, step):
        return self.base.tensor_x_derivative(x, -np.asarray(y, dtype=float), step)

    def reversed_norm(self):
        return self.base


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def _check_fiber(y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("fiber vector must be finite")
    return y


def eval_norm(norm, x, y):
    """F(x, y); y = 0 short-circuits to 0 without derivative machinery."""
    y = _check_fiber(y)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("base point must be finite")
    zero = np.all(y == 0.0, axis=-1)
    if np.all(zero):
        return np.zeros(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]))
    val = norm.value(x, np.where(zero[..., None], 1.0, y))
    return np.where(zero, 0.0, val)


def _require_nonzero(y):
    y = _check_fiber(y)
    if np.any(np.all(y == 0.0, axis=-1)):
        raise ValueError("operation undefined at the fiber origin")
    return y


def fundamental_tensor(norm, x, y, check_pd=False):
    """Fundamental tensor g_y at (x, y != 0)."""
    y = _require_nonzero(y)
    g = norm.tensor(x, y)
    if check_pd:
        w = np.linalg.eigvalsh(g)
        if np.any(w <= 0.0):
            raise ConvexityViolation("fundamental tensor is not positive definite")
    return g


def legendre(norm, x, y):
    """Legendre covector g_y(y, .) at (x, y != 0)."""
    y = _require_nonzero(y)
    return norm.covector(x, y)


def _dual_ascent(norm, x, p, seeds=None, tol=1e-12, max_iter=100):
    """Maximize p(v) - F(x, v)^2 / 2 by damped Newton; the optimum value is
    F*(x, p)^2 / 2 with maximizer the inverse Legendre image of p.

    Returns (dual value, maximizer).  Batched over leading axes of x and p;
    seeds (S, n) start points are run in parallel and the best kept.
    """
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    n = norm.dim
    shape = np.broadcast_shapes(x.shape[:-1], p.shape[:-1])
    pb = np.broadcast_to(p, shape + (n,)).reshape(-1, n)
    xb = np.broadcast_to(x, shape + (n,)).reshape(-1, n)
    m = len(pb)

    if seeds is None:
        count = 32 if n == 2 else 128
        dirs = sphere_directions(count, n)
        f0 = norm.value(xb[:, None, :], dirs[None, :, :])
        v = dirs[None, :, :] / f0[..., None]  # (m, S, n) unit-sphere seeds
        v = np.ascontiguousarray(np.broadcast_to(v, (m, count, n)))
        # rank seeds by the concave objective and iterate only the best few:
        # the maximizer is unique, the full fan is only there to seed capture
        obj0 = np.einsum("bi,bsi->bs", pb, v) - 0.5 * norm.value(xb[:, None, :], v) ** 2
        keep = min(4, count)
        top = np.argsort(obj0, axis=1)[:, -keep:]
        v = np.take_along_axis(v, top[..., None], axis=1)
        xs = np.broadcast_to(xb[:, None, :], v.shape)
        ps = np.broadcast_to(pb[:, None, :], v.shape)
    else:
        v = np.asarray(seeds, dtype=float).reshape(-1, n)[:, None, :].copy()
        if len(v) != m:
            v = np.broadcast_to(v.reshape(-1, n), (m, n))[:, None, :].copy()
        xs = xb[:, None, :]
        ps = pb[:, None, :]
    v = np.ascontiguousarray(np.broadcast_to(v, (m,) + v.shape[1:]).copy())
    pscale = np.linalg.norm(pb, axis=-1)[:, None]

    def objective(vv):
        f = norm.value(xs, vv)
        return np.einsum("...i,...i->...", ps, vv) - 0.5 * f * f

    converged = np.zeros(v.shape[:-1], dtype=bool)
    for _ in range(max_iter):
        g = norm.tensor(xs, v)
        ell = np.einsum("...ij,...j->...i", g, v)
        r = ps - ell
        rn = np.linalg.norm(r, axis=-1)
        converged = rn <= tol * pscale
        if np.all(converged):
            break
        step = np.linalg.solve(g, r[..., None])[..., 0]
        sn = np.linalg.norm(step, axis=-1)
        vn = np.linalg.norm(v, axis=-1)
        cap = np.minimum(1.0, 0.8 * vn / np.maximum(sn, 1e-300))
        t = np.where(converged, 0.0, cap)
        # backtrack on the concave objective, but only outside the quadratic
        # basin: near the optimum the increment drops below roundoff and a
        # strict comparison would stall full Newton steps
        needs_ls = (rn > 1e-7 * pscale) & ~converged
        if np.any(needs_ls):
            phi = objective(v)
            slack = 1e-14 * (1.0 + np.abs(phi))
            for _ in range(40):
                trial = v + t[..., None] * step
                phit = objective(trial)
                bad = (phit < phi - slack) & (t > 0) & needs_ls
                if not np.any(bad):
                    break
                t = np.where(bad, 0.5 * t, t)
        v = v + t[..., None] * step
    phi = objective(v)
    best = np.argmax(np.where(converged, phi, -np.inf), axis=1)
    rows = np.arange(m)
    if not np.all(np.any(converged, axis=1)):
        val = np.sqrt(np.maximum(2.0 * phi[rows, np.argmax(phi, axis=1)], 0.0))
        raise NumericError(
            "dual-norm ascent did not converge", best=val.reshape(shape)
        )
    vbest = v[rows, best]
    value = np.sqrt(2.0 * np.maximum(phi[rows, best], 0.0))
    return value.reshape(shape), vbest.reshape(shape + (n,))


def dual_norm(norm, x, p, seeds=None):
    """Dual norm F*(x, p) = max of p(v) over the F-unit sphere, p != 0."""
    p = _require_nonzero(p)
    value, _ = _dual_ascent(norm, x, p, seeds=seeds)
    return value


def dual_norm_with_argmax(norm, x, p, seeds=None):
    """Dual norm together with the maximizing unit vector (= inverse
    Legendre image of p, rescaled to the unit sphere)."""
    p = _require_nonzero(p)
    value, v = _dual_ascent(norm, x, p, seeds=seeds)
    return value, v / np.asarray(norm.value(x, v))[..., None]


def legendre_inverse(norm, x, p, step_rel=1e-4):
    """Invert the Legendre transform through the dual norm.

    Components follow y_j = (1/2) d^2 (F*)^2 / dp_i dp_j * p_i with the dual
    Hessian taken by symmetric central differences (step ``step_rel * F*``).
    """
    p = _require_nonzero(p)
    x = np.asarray(x, dtype=float)
    n = norm.dim
    shape = np.broadcast_shapes(x.shape[:-1], p.shape[:-1])
    pb = np.broadcast_to(p, shape + (n,)).reshape(-1, n)
    xb = np.broadcast_to(x, shape + (n,)).reshape(-1, n)
    f0, v0 = _dual_ascent(norm, xb, pb)
    h = (step_rel * f0)[:, None]

    eye = np.eye(n)
    # stencil of dual evaluations, warm-started from the center maximizer
    def dual_half_sq(q):
        val, _ = _dual_ascent(norm, xb, q, seeds=v0)
        return 0.5 * val * val

    hess = np.empty((len(pb), n, n))
    center = 0.5 * f0 * f0
    for i in range(n):
        ei = eye[i]
        fp = dual_half_sq(pb + h * ei)
        fm = dual_half_sq(pb - h * ei)
        hess[:, i, i] = (fp - 2.0 * center + fm) / (h[:, 0] ** 2)
        for j in range(i + 1, n):
            ej = eye[j]
            f1 = dual_half_sq(pb + h * (ei + ej))
            f2 = dual_half_sq(pb + h * (ei - ej))
            f3 = dual_half_sq(pb - h * (ei - ej))
            f4 = dual_half_sq(pb - h * (ei + ej))
            val = (f1 - f2 - f3 + f4) / (4.0 * h[:, 0] ** 2)
            hess[:, i, j] = val
            hess[:, j, i] = val
    y = np.einsum("bij,bj->bi", hess, pb)
    return y.reshape(shape + (n,))


def reverse(norm):
    """The reversed norm; reverse(reverse(F)) is F itself."""
    return norm.reversed_norm()


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def norm_to_dict(norm):
    """Serializable description of a norm (closed-form families only)."""
    if isinstance(norm, RiemannianNorm):
        if norm._matrix_fn is None:
            return {
                "family": "riemannian",
                "dim": norm.dim,
                "matrix": norm._matrix_const.tolist(),
            }
        field = getattr(norm, "field_params", None)
        if field is not None:
            return {"family": "riemannian", "dim": norm.dim, "field": field}
        raise ValueError("cannot serialize a callable metric field without field_params")
    if isinstance(norm, RandersNorm):
        if norm._matrix_fn is not None or norm._form_fn is not None:
            raise ValueError("only constant Randers fields serialize")
        return {
            "family": "randers",
            "dim": norm.dim,
            "matrix": norm._matrix_const.tolist(),
            "one_form": norm._form_const.tolist(),
        }
    if isinstance(norm, DirectionBumpNorm):
        bump_params = getattr(norm.bump, "params", None)
        if bump_params is None:
            raise ValueError("bump must expose params for serialization")
        return {
            "family": "perturbed",
            "dim": norm.dim,
            "amplitude": norm.amplitude,
            "bump": bump_params,
            "base": norm_to_dict(norm.base),
        }
    if isinstance(norm, DualSupportNorm):
        co = getattr(norm.conorm, "params", None)
        if co is None:
            raise ValueError("co-norm must expose params for serialization")
        return {"family": "qp_dual", "dim": norm.dim, "conorm": co}
    raise ValueError(f"cannot serialize norm family {norm.family!r}")


def norm_from_dict(spec):
    """Inverse of :func:`norm_to_dict` (conformal fields reconstructed)."""
    family = spec["family"]
    if family == "riemannian":
        if "matrix" in spec:
            return RiemannianNorm(np.asarray(spec["matrix"], dtype=float))
        field = spec["field"]
        if field["kind"] != "gaussian_conformal":
            raise ValueError(f"unknown metric field kind {field['kind']!r}")
        g = GaussianConformalField(
            field["amplitude"], field["center"], field["width"], dim=spec["dim"]
        )
        norm = g.norm()
        norm.field_params = field
        return norm
    if family == "randers":
        return RandersNorm(
            np.asarray(spec["matrix"], dtype=float),
            np.asarray(spec["one_form"], dtype=float),
        )
    if family == "perturbed":
        from .reconstruct import bump_from_params  # local import: avoids a cycle

        base = norm_from_dict(spec["base"])
        return DirectionBumpNorm(base, spec["amplitude"], bump_from_params(spec["bump"]))
    if family == "qp_dual":
        from .elastic import StiffnessField, qp_finsler

        co = spec["conorm"]
        field = StiffnessField.from_voigt(
            np.asarray(co["voigt"], dtype=float), co["density"]
        )
        return qp_finsler(field)
    raise ValueError(f"unknown norm family {family!r}")
