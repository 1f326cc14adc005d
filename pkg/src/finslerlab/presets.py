"""Standard fixture metrics, domains, and stiffness tensors.

These are the configurations the test suite and the command-line scenarios
share: a flat disk, a constant-drift Randers disk, a disk with an off-center
conformal slow bump (strong enough that rays crossing the bump stop being
minimizers), a stadium that behaves like a flat strip along its straight
edges, a nonconvex peanut for tangential-exit cases, and the elastic
reference tensors.
"""

from __future__ import annotations

import numpy as np

from .domains import DiskDomain, RadialDomain, StadiumDomain
from .elastic import StiffnessField
from .norms import GaussianConformalField, RandersNorm, RiemannianNorm

__all__ = [
    "flat_norm",
    "randers_norm",
    "bump_norm",
    "unit_disk",
    "strip_stadium",
    "peanut_domain",
    "isotropic_stiffness",
    "ti_stiffness",
    "degenerate_stiffness",
    "BUMP_AMPLITUDE",
    "BUMP_CENTER",
    "BUMP_WIDTH",
]

# slow-bump profile: exp(amplitude) ~ 2.5x slowdown at the bump center,
# placed off-center so cut and focal distances split cleanly
BUMP_AMPLITUDE = 0.9
BUMP_CENTER = (0.35, 0.0)
BUMP_WIDTH = 0.18


def flat_norm():
    return RiemannianNorm(np.eye(2))


def randers_norm(drift=(0.5, 0.0)):
    return RandersNorm(np.eye(2), drift)


def bump_norm(amplitude=BUMP_AMPLITUDE, center=BUMP_CENTER, width=BUMP_WIDTH):
    field = GaussianConformalField(amplitude, center, width)
    norm = field.norm()
    norm.field_params = {
        "kind": "gaussian_conformal",
        "amplitude": amplitude,
        "center": list(center),
        "width": width,
    }
    norm.conformal_field = field
    return norm


def unit_disk():
    return DiskDomain((0.0, 0.0), 1.0)


def strip_stadium(half_length=1.0, radius=0.5):
    return StadiumDomain(half_length, radius)


def peanut_domain(base=0.8, amplitude=0.25):
    """Nonconvex radial domain; straight rays can exit tangentially at the
    concave waist."""
    return RadialDomain(
        lambda t: base + amplitude * np.cos(2 * t),
        lambda t: -2 * amplitude * np.sin(2 * t),
        params={"kind": "radial_cos", "base": base, "amplitude": amplitude, "mode": 2},
    )


def isotropic_stiffness(lam=2.0, mu=1.0, rho=1.0):
    return StiffnessField.from_lame(lam, mu, rho)


def ti_stiffness(rho=1.0):
    """Transversely isotropic sample (symmetry axis e3) with a wide gap
    between the fastest branch and the rest."""
    c11, c33, c44, c66, c13 = 14.0, 10.0, 2.5, 3.0, 4.5
    c12 = c11 - 2.0 * c66
    C = np.zeros((6, 6))
    C[0, 0] = C[1, 1] = c11
    C[2, 2] = c33
    C[3, 3] = C[4, 4] = c44
    C[5, 5] = c66
    C[0, 1] = C[1, 0] = c12
    C[0, 2] = C[2, 0] = C[1, 2] = C[2, 1] = c13
    return StiffnessField.from_voigt(C, rho)


def degenerate_stiffness(rho=1.0):
    """Crafted tensor whose two leading branches cross along the symmetry
    axis (the axial quasi-compressional speed drops below the shear speed)."""
    c11, c33, c44, c66, c13 = 14.0, 2.0, 3.0, 3.5, 1.0
    c12 = c11 - 2.0 * c66
    C = np.zeros((6, 6))
    C[0, 0] = C[1, 1] = c11
    C[2, 2] = c33
    C[3, 3] = C[4, 4] = c44
    C[5, 5] = c66
    C[0, 1] = C[1, 0] = c12
    C[0, 2] = C[2, 0] = C[1, 2] = C[2, 1] = c13
    return StiffnessField.from_voigt(C, rho)
