"""Compact planar domains with parameterized boundaries.

Each domain exposes a closed boundary curve parameterized counterclockwise by
t in [0, 2*pi), an inside predicate, and a signed clearance function
(positive inside, zero on the boundary) used only for event detection during
geodesic integration.  Boundary meshes are node lists at uniform parameter
values starting from t = 0, which fixes the node ordering contract for all
data files.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Domain", "DiskDomain", "RadialDomain", "StadiumDomain", "wrap_angle"]

TWO_PI = 2.0 * np.pi


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), TWO_PI)


class Domain:
    dim = 2

    # subclasses: boundary_point, boundary_tangent, clearance, boundary_param,
    # plus bounding_box and diameter attributes

    def inside(self, x):
        return self.clearance(x) > 0.0

    def boundary_mesh(self, count):
        """(params, nodes): counterclockwise nodes from t = 0."""
        params = np.arange(count) * (TWO_PI / count)
        return params, self.boundary_point(params)

    def boundary_normal_euclid(self, t, orientation="inward"):
        """Euclidean unit normal from the tangent; CCW parameterization puts
        the interior on the left, so the +90 degree rotation points inward."""
        tan = self.boundary_tangent(t)
        tan = tan / np.linalg.norm(tan, axis=-1, keepdims=True)
        inward = np.stack([-tan[..., 1], tan[..., 0]], axis=-1)
        return inward if orientation == "inward" else -inward

    def interior_samples(self, count, rng, margin=0.0):
        """Rejection-sample points with clearance above ``margin``."""
        (lo_x, hi_x), (lo_y, hi_y) = self.bounding_box
        pts = np.empty((0, 2))
        while len(pts) < count:
            cand = rng.uniform([lo_x, lo_y], [hi_x, hi_y], size=(4 * count, 2))
            keep = cand[self.clearance(cand) > margin]
            pts = np.vstack([pts, keep])
        return pts[:count]


class DiskDomain(Domain):
    """Round disk; clearance is the exact signed Euclidean distance."""

    def __init__(self, center=(0.0, 0.0), radius=1.0):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.params = {"kind": "disk", "center": self.center.tolist(), "radius": radius}

    @property
    def diameter(self):
        return 2.0 * self.radius

    @property
    def bounding_box(self):
        c, r = self.center, self.radius
        return (c[0] - r, c[0] + r), (c[1] - r, c[1] + r)

    def boundary_point(self, t):
        t = np.asarray(t, dtype=float)
        return self.center + self.radius * np.stack([np.cos(t), np.sin(t)], axis=-1)

    def boundary_tangent(self, t):
        t = np.asarray(t, dtype=float)
        return self.radius * np.stack([-np.sin(t), np.cos(t)], axis=-1)

    def clearance(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return self.radius - np.linalg.norm(d, axis=-1)

    def boundary_param(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return np.mod(np.arctan2(d[..., 1], d[..., 0]), TWO_PI)


class RadialDomain(Domain):
    """Star-shaped domain r < R(t); R must be smooth and 2*pi periodic.

    The clearance R(t(x)) - |x - c| is sign-correct but only approximately a
    Euclidean distance, which is all event detection needs.
    """

    def __init__(self, radius_fn, radius_fn_deriv, center=(0.0, 0.0), params=None):
        self.center = np.asarray(center, dtype=float)
        self.radius_fn = radius_fn
        self.radius_fn_deriv = radius_fn_deriv
        t = np.linspace(0.0, TWO_PI, 720, endpoint=False)
        r = np.asarray(radius_fn(t), dtype=float)
        if np.any(r <= 0):
            raise ValueError("radius function must stay positive")
        self._rmax = float(r.max())
        self._diam = 2.0 * self._rmax
        self.params = params or {"kind": "radial"}

    @property
    def diameter(self):
        return self._diam

    @property
    def bounding_box(self):
        c, r = self.center, self._rmax
        return (c[0] - r, c[0] + r), (c[1] - r, c[1] + r)

    def boundary_point(self, t):
        t = np.asarray(t, dtype=float)
        r = np.asarray(self.radius_fn(t), dtype=float)
        return self.center + r[..., None] * np.stack([np.cos(t), np.sin(t)], axis=-1)

    def boundary_tangent(self, t):
        t = np.asarray(t, dtype=float)
        r = np.asarray(self.radius_fn(t), dtype=float)
        dr = np.asarray(self.radius_fn_deriv(t), dtype=float)
        c, s = np.cos(t), np.sin(t)
        return np.stack([dr * c - r * s, dr * s + r * c], axis=-1)

    def clearance(self, x):
        d = np.asarray(x, dtype=float) - self.center
        t = np.arctan2(d[..., 1], d[..., 0])
        return np.asarray(self.radius_fn(t), dtype=float) - np.linalg.norm(d, axis=-1)

    def boundary_param(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return np.mod(np.arctan2(d[..., 1], d[..., 0]), TWO_PI)


class StadiumDomain(Domain):
    """Two straight edges of length 2*half_length capped by semicircles.

    The flat edges model an infinite strip locally: inward normals along them
    are parallel, so normal-map Jacobians never degenerate there.  Clearance
    is the exact signed Euclidean distance to the boundary.
    """

    def __init__(self, half_length=1.0, radius=0.5):
        self.half_length = float(half_length)
        self.radius = float(radius)
        self.perimeter = 4.0 * self.half_length + TWO_PI * self.radius
        self.params = {"kind": "stadium", "half_length": half_length, "radius": radius}

    @property
    def diameter(self):
        return 2.0 * (self.half_length + self.radius)

    @property
    def bounding_box(self):
        return (
            (-self.half_length - self.radius, self.half_length + self.radius),
            (-self.radius, self.radius),
        )

    def _pieces(self, t):
        """Arclength s along [0, P): right cap, top edge, left cap, bottom."""
        s = np.mod(np.asarray(t, dtype=float), TWO_PI) * (self.perimeter / TWO_PI)
        l, r = self.half_length, self.radius
        cap = np.pi * r
        return s, l, r, cap

    def boundary_point(self, t):
        s, l, r, cap = self._pieces(t)
        out = np.empty(s.shape + (2,))
        m1 = s < cap
        a = s / r - 0.5 * np.pi
        out[m1] = np.stack([l + r * np.cos(a), r * np.sin(a)], axis=-1)[m1]
        m2 = (s >= cap) & (s < cap + 2 * l)
        u = s - cap
        out[m2] = np.stack([l - u, np.full_like(u, r)], axis=-1)[m2]
        m3 = (s >= cap + 2 * l) & (s < 2 * cap + 2 * l)
        a = (s - cap - 2 * l) / r + 0.5 * np.pi
        out[m3] = np.stack([-l + r * np.cos(a), r * np.sin(a)], axis=-1)[m3]
        m4 = s >= 2 * cap + 2 * l
        u = s - 2 * cap - 2 * l
        out[m4] = np.stack([-l + u, np.full_like(u, -r)], axis=-1)[m4]
        return out

    def boundary_tangent(self, t):
        s, l, r, cap = self._pieces(t)
        scale = self.perimeter / TWO_PI
        out = np.empty(s.shape + (2,))
        m1 = s < cap
        a = s / r - 0.5 * np.pi
        out[m1] = np.stack([-np.sin(a), np.cos(a)], axis=-1)[m1]
        m2 = (s >= cap) & (s < cap + 2 * l)
        out[m2] = np.array([-1.0, 0.0])
        m3 = (s >= cap + 2 * l) & (s < 2 * cap + 2 * l)
        a = (s - cap - 2 * l) / r + 0.5 * np.pi
        out[m3] = np.stack([-np.sin(a), np.cos(a)], axis=-1)[m3]
        m4 = s >= 2 * cap + 2 * l
        out[m4] = np.array([1.0, 0.0])
        return out * scale

    def clearance(self, x):
        x = np.asarray(x, dtype=float)
        ax = np.clip(x[..., 0], -self.half_length, self.half_length)
        d = np.stack([x[..., 0] - ax, x[..., 1]], axis=-1)
        return self.radius - np.linalg.norm(d, axis=-1)

    def boundary_param(self, x):
        x = np.asarray(x, dtype=float)
        l, r = self.half_length, self.radius
        cap = np.pi * r
        ax = np.clip(x[..., 0], -l, l)
        dx = x[..., 0] - ax
        dy = x[..., 1]
        ang = np.arctan2(dy, dx)
        on_right = x[..., 0] >= l
        on_left = x[..., 0] <= -l
        s = np.where(
            on_right,
            np.mod(ang + 0.5 * np.pi, TWO_PI) * r,
            np.where(
                on_left,
                cap + 2 * l + np.mod(ang - 0.5 * np.pi, TWO_PI) * r,
                np.where(dy >= 0, cap + (l - ax), 2 * cap + 2 * l + (ax + l)),
            ),
        )
        return np.mod(s / self.perimeter * TWO_PI, TWO_PI)


def domain_from_dict(spec):
    kind = spec["kind"]
    if kind == "disk":
        return DiskDomain(spec.get("center", (0.0, 0.0)), spec.get("radius", 1.0))
    if kind == "stadium":
        return StadiumDomain(spec.get("half_length", 1.0), spec.get("radius", 0.5))
    if kind == "radial_cos":
        base = float(spec.get("base", 0.8))
        amp = float(spec.get("amplitude", 0.25))
        mode = int(spec.get("mode", 2))
        dom = RadialDomain(
            lambda t: base + amp * np.cos(mode * t),
            lambda t: -amp * mode * np.sin(mode * t),
            center=spec.get("center", (0.0, 0.0)),
            params={"kind": "radial_cos", "base": base, "amplitude": amp, "mode": mode},
        )
        return dom
    raise ValueError(f"unknown domain kind {kind!r}")
