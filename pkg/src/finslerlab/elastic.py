"""From anisotropic stiffness tensors to the fastest-wave fiber norm.

The density-normalized moduli a_ijkl contract with a momentum covector p into
the symmetric Christoffel matrix.  The square root of its largest eigenvalue
is a smooth co-norm on covectors whenever that eigenvalue stays separated
from the other two, and the dual of the co-norm is the travel-time norm of
the fastest polarization.  Eigenvalue derivatives are computed analytically
(Hellmann-Feynman for the gradient, second-order perturbation for the
Hessian), which keeps the dual-norm Newton solves at machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SeparationViolation
from .norms import DualSupportNorm, sphere_directions

__all__ = [
    "StiffnessField",
    "voigt_to_full",
    "full_to_voigt",
    "christoffel",
    "qp_eigen",
    "qp_eigen_gradient",
    "qp_eigen_hessian",
    "QpCoNorm",
    "verify_cofinsler",
    "qp_finsler",
    "CoFinslerReport",
]

_VOIGT_PAIRS = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
_VOIGT_INDEX = np.zeros((3, 3), dtype=int)
for _m, (_i, _j) in enumerate(_VOIGT_PAIRS):
    _VOIGT_INDEX[_i, _j] = _m
    _VOIGT_INDEX[_j, _i] = _m

#: relative threshold below which the top two eigenvalues count as crossed
SEPARATION_REL_THRESHOLD = 1e-8


def voigt_to_full(c6):
    """Expand a symmetric 6x6 Voigt matrix to the full rank-4 tensor."""
    c6 = np.asarray(c6, dtype=float)
    if c6.shape != (6, 6):
        raise ValueError("Voigt stiffness must be 6x6")
    if not np.allclose(c6, c6.T, atol=1e-12 * max(1.0, np.abs(c6).max())):
        raise ValueError("Voigt stiffness must be symmetric")
    full = np.empty((3, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    full[i, j, k, l] = c6[_VOIGT_INDEX[i, j], _VOIGT_INDEX[k, l]]
    return full


def full_to_voigt(c):
    c = np.asarray(c, dtype=float)
    out = np.empty((6, 6))
    for m, (i, j) in enumerate(_VOIGT_PAIRS):
        for n, (k, l) in enumerate(_VOIGT_PAIRS):
            out[m, n] = c[i, j, k, l]
    return out


def _check_symmetries(c, tol=1e-12):
    scale = max(1.0, np.abs(c).max())
    if not np.allclose(c, np.swapaxes(c, 0, 1), atol=tol * scale):
        raise ValueError("stiffness violates the minor symmetry c_ijkl = c_jikl")
    if not np.allclose(c, np.transpose(c, (2, 3, 0, 1)), atol=tol * scale):
        raise ValueError("stiffness violates the major symmetry c_ijkl = c_klij")


class StiffnessField:
    """Density-normalized elastic moduli a_ijkl = c_ijkl / rho.

    Either constant (a single tensor and density) or spatially varying via a
    callable ``x -> (..., 3, 3, 3, 3)``; symmetries are validated to 1e-12 at
    construction for constant fields and at sampled points for callables.
    """

    def __init__(self, stiffness, density, sample_points=None):
        if callable(stiffness):
            self._fn = stiffness
            self._const = None
            if sample_points is not None:
                for x in np.atleast_2d(np.asarray(sample_points, dtype=float)):
                    _check_symmetries(np.asarray(stiffness(x), dtype=float))
        else:
            c = np.asarray(stiffness, dtype=float)
            if c.shape != (3, 3, 3, 3):
                raise ValueError("full stiffness must have shape (3,3,3,3)")
            _check_symmetries(c)
            self._fn = None
            self._const = c
        if callable(density):
            self._rho_fn = density
            self._rho_const = None
        else:
            rho = float(density)
            if rho <= 0:
                raise ValueError("density must be positive")
            self._rho_fn = None
            self._rho_const = rho
        self.params = None  # serialization payload, set by from_voigt

    @classmethod
    def from_voigt(cls, c6, density):
        field = cls(voigt_to_full(c6), density)
        field.params = {"voigt": np.asarray(c6, dtype=float).tolist(), "density": density}
        return field

    @classmethod
    def from_lame(cls, lam, mu, density):
        """Isotropic stiffness from the two Lame moduli."""
        c6 = np.zeros((6, 6))
        c6[:3, :3] = lam
        c6[np.arange(3), np.arange(3)] = lam + 2.0 * mu
        c6[np.arange(3, 6), np.arange(3, 6)] = mu
        return cls.from_voigt(c6, density)

    @property
    def constant(self):
        return self._fn is None and self._rho_fn is None

    def constant_moduli(self):
        if not self.constant:
            raise ValueError("field is not spatially constant")
        return self._const / self._rho_const

    def moduli(self, x):
        """a_ijkl at x, batched (..., 3, 3, 3, 3)."""
        x = np.asarray(x, dtype=float)
        rho = self._rho_const if self._rho_fn is None else self._rho_fn(x)
        if self._fn is None:
            a = self._const / rho if self._rho_fn is None else None
            if a is not None:
                return np.broadcast_to(a, x.shape[:-1] + (3, 3, 3, 3))
            return self._const / np.asarray(rho)[..., None, None, None, None]
        c = np.asarray(self._fn(x), dtype=float)
        return c / np.asarray(rho)[..., None, None, None, None]


def christoffel(field, x, p):
    """Christoffel matrix: contraction of the moduli with p in both momentum
    slots, explicitly symmetrized."""
    p = np.asarray(p, dtype=float)
    if field.constant:
        a = field.constant_moduli()
        gamma = np.einsum("ijkl,...j,...k->...il", a, p, p, optimize=True)
    else:
        a = field.moduli(x)
        gamma = np.einsum("...ijkl,...j,...k->...il", a, p, p, optimize=True)
    return 0.5 * (gamma + np.swapaxes(gamma, -1, -2))


def _eig_descending(gamma):
    w, v = np.linalg.eigh(gamma)
    return w[..., ::-1], v[..., ::-1]


def qp_eigen(field, x, p):
    """Largest Christoffel eigenvalue and its separation margin.

    Raises :class:`SeparationViolation` when the margin drops to or below
    ``SEPARATION_REL_THRESHOLD`` times the eigenvalue.
    """
    p = np.asarray(p, dtype=float)
    if np.any(np.all(p == 0.0, axis=-1)):
        raise ValueError("momentum must be nonzero")
    w, _ = _eig_descending(christoffel(field, x, p))
    lam = w[..., 0]
    margin = lam - w[..., 1]
    if np.any(margin <= SEPARATION_REL_THRESHOLD * lam):
        raise SeparationViolation(
            "fastest eigenvalue is not separated from the next branch"
        )
    return lam, margin


def _gamma_p_derivative(field, x, p):
    """d Gamma_il / d p_m, shape (..., m, i, l)."""
    p = np.asarray(p, dtype=float)
    if field.constant:
        a = field.constant_moduli()
        d = np.einsum("imkl,...k->...mil", a, p, optimize=True) + np.einsum("ijml,...j->...mil", a, p, optimize=True)
    else:
        a = field.moduli(x)
        d = np.einsum("...imkl,...k->...mil", a, p, optimize=True) + np.einsum("...ijml,...j->...mil", a, p, optimize=True)
    return 0.5 * (d + np.swapaxes(d, -1, -2))


def _eigen_calculus(field, x, p, want_hessian=True):
    """Largest eigenvalue of the Christoffel matrix with analytic momentum
    derivatives in one pass.

    The gradient is the Hellmann-Feynman contraction; the Hessian adds the
    second-order perturbation of the eigenvector against the spectral gaps.
    """
    p = np.asarray(p, dtype=float)
    gamma = christoffel(field, x, p)
    w, v = _eig_descending(gamma)
    lam = w[..., 0]
    q = v[..., :, 0]
    dg = _gamma_p_derivative(field, x, p)
    grad = np.einsum("...i,...mil,...l->...m", q, dg, q, optimize=True)
    if not want_hessian:
        return lam, grad, None
    if field.constant:
        d2 = np.einsum("...i,imnl,...l->...mn", q, field.constant_moduli(), q, optimize=True)
    else:
        d2 = np.einsum("...i,...imnl,...l->...mn", q, field.moduli(x), q, optimize=True)
    d2 = d2 + np.swapaxes(d2, -1, -2)
    cross = np.einsum("...i,...mil,...lr->...mr", q, dg, v[..., :, 1:], optimize=True)
    gaps = lam[..., None] - w[..., 1:]
    hess = d2 + 2.0 * np.einsum("...mr,...nr->...mn", cross / gaps[..., None, :], cross, optimize=True)
    return lam, grad, hess


def qp_eigen_gradient(field, x, p):
    """Analytic momentum gradient of the largest eigenvalue."""
    _, grad, _ = _eigen_calculus(field, x, p, want_hessian=False)
    return grad


def qp_eigen_hessian(field, x, p):
    """Analytic momentum Hessian of the largest eigenvalue."""
    _, _, hess = _eigen_calculus(field, x, p)
    return hess


class QpCoNorm:
    """Co-norm sqrt(largest Christoffel eigenvalue) with analytic calculus."""

    def __init__(self, field):
        self.field = field
        self.params = field.params

    def value(self, x, p):
        gamma = christoffel(self.field, x, p)
        w = np.linalg.eigvalsh(gamma)
        return np.sqrt(w[..., -1])

    def half_sq_grad(self, x, p):
        return 0.5 * qp_eigen_gradient(self.field, x, p)

    def half_sq_hess(self, x, p):
        return 0.5 * qp_eigen_hessian(self.field, x, p)

    def bundle(self, x, p):
        """(f, grad of f^2/2, Hessian of f^2/2) in one eigen pass."""
        lam, grad, hess = _eigen_calculus(self.field, x, p)
        return np.sqrt(lam), 0.5 * grad, 0.5 * hess


@dataclass
class CoFinslerReport:
    """Per-direction admissibility of the co-norm at one base point."""

    directions: np.ndarray
    homogeneity_residual: np.ndarray
    min_hessian_eigenvalue: np.ndarray
    separation_margin: np.ndarray

    @property
    def passed(self):
        return bool(
            np.all(self.min_hessian_eigenvalue > 0.0)
            and np.all(self.separation_margin > 0.0)
        )

    def failing_directions(self):
        bad = (self.min_hessian_eigenvalue <= 0.0) | (self.separation_margin <= 0.0)
        return self.directions[bad]


def verify_cofinsler(field, x, samples=200):
    """Sweep momentum directions and report the co-norm admissibility.

    For each sampled unit p: the degree-1 homogeneity residual of the
    co-norm, the smallest eigenvalue of the Hessian of f^2/2 (finite
    differences, independent of the analytic route), and the spectral
    separation margin.  Fiberwise real-analyticity of the eigenvalue branch
    holds whenever the separation does; it is documented, not tested.
    """
    x = np.asarray(x, dtype=float)
    dirs = sphere_directions(samples, 3) if np.ndim(samples) == 0 else np.asarray(samples)
    co = QpCoNorm(field)
    xs = np.broadcast_to(x, dirs.shape[:-1] + (3,))

    f1 = co.value(xs, dirs)
    f2 = co.value(xs, 2.0 * dirs)
    homog = np.abs(f2 - 2.0 * f1) / (2.0 * f1)

    w, _ = _eig_descending(christoffel(field, xs, dirs))
    margin = w[..., 0] - w[..., 1]

    h = 1e-5
    eye = np.eye(3)
    hess = np.empty(dirs.shape[:-1] + (3, 3))

    def half_sq(p):
        v = co.value(xs, p)
        return 0.5 * v * v

    c0 = half_sq(dirs)
    for i in range(3):
        ei = eye[i]
        hess[..., i, i] = (half_sq(dirs + h * ei) - 2 * c0 + half_sq(dirs - h * ei)) / h**2
        for j in range(i + 1, 3):
            ej = eye[j]
            val = (
                half_sq(dirs + h * (ei + ej))
                - half_sq(dirs + h * (ei - ej))
                - half_sq(dirs - h * (ei - ej))
                + half_sq(dirs - h * (ei + ej))
            ) / (4 * h**2)
            hess[..., i, j] = val
            hess[..., j, i] = val
    min_eig = np.linalg.eigvalsh(hess)[..., 0]
    return CoFinslerReport(dirs, homog, min_eig, margin)


def qp_finsler(field, check_points=None, samples=200):
    """Fastest-polarization fiber norm: the dual of the eigenvalue co-norm.

    ``check_points`` (default: the origin) are swept with
    :func:`verify_cofinsler` first; any separation or convexity failure
    raises before the norm is built.
    """
    if check_points is None:
        check_points = np.zeros((1, 3))
    for x in np.atleast_2d(np.asarray(check_points, dtype=float)):
        report = verify_cofinsler(field, x, samples=samples)
        if np.any(report.separation_margin <= 0.0):
            raise SeparationViolation(
                "eigenvalue branches cross on the sampled sphere"
            )
        if not report.passed:
            raise SeparationViolation(
                "co-norm Hessian loses positive definiteness on the sampled sphere"
            )
    return DualSupportNorm(QpCoNorm(field), dim=3)
