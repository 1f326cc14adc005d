"""The inverse pipeline over boundary distance data.

Data-side operations need nothing but the blinded samples: extending the
family of boundary distance functions to boundary source points, checking
that the sample-to-function map stays injective, and matching two datasets as
unordered sets.  Engine-side operations (distance-coordinate charts, norm
recovery on the covered cone, boundary norm recovery, the non-uniqueness
generator) consume exact forward-engine distances, since differentiating
blinded samples in the source position is impossible without source
locations; the split is deliberate and mirrors how the underlying theory
separates what the data determine from how the proof certifies it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .distances import (
    IN_G,
    NOT_MIN,
    TRAPPED,
    DistanceOracle,
    SmoothnessProbe,
    classify_directions,
    fan_boundary_vectors,
)
from .domains import wrap_angle
from .errors import ChartFailure, ConstructionImpossible, InsufficientCone
from .norms import DirectionBumpNorm, eval_norm, fundamental_tensor, reverse

__all__ = [
    "BoundaryDistanceData",
    "extend_to_boundary",
    "EmbeddingReport",
    "embedding_check",
    "MatchResult",
    "match_datasets",
    "ForwardEngine",
    "ChartCertificate",
    "build_chart",
    "DualConeInterpolant",
    "RecoveredNormSamples",
    "recover_norm_at",
    "boundary_norm_recovery",
    "DirectionBump",
    "bump_from_params",
    "make_nonuniqueness_pair",
    "NonUniquenessReport",
    "verify_nonuniqueness",
]


# --------------------------------------------------------------------------
# Data container
# --------------------------------------------------------------------------


@dataclass
class BoundaryDistanceData:
    """Boundary mesh plus an unordered family of sampled distance functions.

    ``sources`` is validation-only ground truth and is dropped by
    :meth:`blinded`; nothing in the data-side pipeline may read it.
    """

    boundary_params: np.ndarray  # (m,)
    boundary_nodes: np.ndarray  # (m, 2)
    r_vectors: np.ndarray  # (N, m)
    sources: np.ndarray | None = None

    def __post_init__(self):
        self.boundary_params = np.asarray(self.boundary_params, dtype=float)
        self.boundary_nodes = np.asarray(self.boundary_nodes, dtype=float)
        self.r_vectors = np.atleast_2d(np.asarray(self.r_vectors, dtype=float))
        if self.r_vectors.shape[1] != len(self.boundary_nodes):
            raise ValueError("r-vector length must match the boundary mesh")
        if np.any(self.r_vectors < -1e-12):
            raise ValueError("boundary distances must be nonnegative")

    @property
    def count(self):
        return len(self.r_vectors)

    @property
    def mesh_size(self):
        return self.boundary_nodes.shape[0]

    def blinded(self):
        return BoundaryDistanceData(
            self.boundary_params.copy(),
            self.boundary_nodes.copy(),
            self.r_vectors.copy(),
            None,
        )

    def shuffled(self, rng):
        perm = rng.permutation(self.count)
        return (
            BoundaryDistanceData(
                self.boundary_params.copy(),
                self.boundary_nodes.copy(),
                self.r_vectors[perm],
                None if self.sources is None else self.sources[perm],
            ),
            perm,
        )

    def to_dict(self):
        out = {
            "format": "boundary-distance-data/1",
            "node_ordering": "counterclockwise from parameter 0",
            "boundary_params": self.boundary_params.tolist(),
            "boundary_nodes": self.boundary_nodes.tolist(),
            "r_vectors": self.r_vectors.tolist(),
        }
        if self.sources is not None:
            out["ground_truth"] = {
                "comment": "validation only; strip for blinded runs",
                "sources": self.sources.tolist(),
            }
        return out

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        gt = d.get("ground_truth")
        return cls(
            np.asarray(d["boundary_params"], dtype=float),
            np.asarray(d["boundary_nodes"], dtype=float),
            np.asarray(d["r_vectors"], dtype=float),
            None if gt is None else np.asarray(gt["sources"], dtype=float),
        )

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# Data-side operations
# --------------------------------------------------------------------------


def extend_to_boundary(data):
    """Distance functions of the boundary mesh points themselves.

    Row b approximates the boundary distance function of node b as the
    supremum over stored samples q of r_q(z) - r_q(b); the output is exact
    from below up to the sampling gap, the diagonal is pinned at zero, and
    negative sampling artifacts clip to zero.
    """
    R = data.r_vectors  # (N, m)
    ext = np.max(R[:, None, :] - R[:, :, None], axis=0)  # (m_b, m_z)
    np.fill_diagonal(ext, 0.0)
    return np.maximum(ext, 0.0)


@dataclass
class EmbeddingReport:
    min_sup_gap: float
    collisions: list
    ratio_min: float | None
    ratio_max: float | None

    @property
    def injective(self):
        return len(self.collisions) == 0


def embedding_check(data, truth_distances=None, collision_tol=0.0):
    """Injectivity of the sample-to-function map in the sup norm.

    With ground-truth pairwise distances (validation mode) the report also
    carries the spread of sup-gap over distance ratios, whose lower bound is
    controlled by the quasi-symmetry constant of the norm.
    """
    R = data.r_vectors
    N = len(R)
    gaps = np.max(np.abs(R[:, None, :] - R[None, :, :]), axis=-1)
    iu = np.triu_indices(N, k=1)
    sup_gaps = gaps[iu]
    collisions = [
        (int(i), int(j))
        for i, j in zip(*iu)
        if gaps[i, j] <= collision_tol
    ]
    ratio_min = ratio_max = None
    if truth_distances is not None:
        t = np.asarray(truth_distances, dtype=float)[iu]
        ratios = sup_gaps / np.maximum(t, 1e-300)
        ratio_min = float(ratios.min())
        ratio_max = float(ratios.max())
    return EmbeddingReport(float(sup_gaps.min()), collisions, ratio_min, ratio_max)


@dataclass
class MatchResult:
    assignment: np.ndarray  # index into data2 rows for each data1 row
    max_mismatch: float
    mismatches: np.ndarray
    ambiguous: int


def match_datasets(data1, data2, phi=None, ambiguity_tol=0.0, exact_limit=512):
    """Optimal one-to-one matching of two unordered datasets.

    ``phi`` reindexes the second mesh onto the first (a permutation of node
    columns).  Up to ``exact_limit`` sources the assignment is the exact
    linear-sum optimum in the sup-norm cost; above it a greedy
    nearest-neighbor pass with a verification sweep is used.
    """
    R1 = data1.r_vectors
    R2 = data2.r_vectors
    if phi is not None:
        R2 = R2[:, np.asarray(phi, dtype=int)]
    if R1.shape != R2.shape:
        raise ValueError("datasets must hold the same number of sources and nodes")
    N = len(R1)
    cost = np.max(np.abs(R1[:, None, :] - R2[None, :, :]), axis=-1)
    if N <= exact_limit:
        rows, cols = linear_sum_assignment(cost)
        assignment = cols[np.argsort(rows)]
    else:
        assignment = np.full(N, -1, dtype=int)
        taken = np.zeros(N, dtype=bool)
        order = np.argsort(cost.min(axis=1))
        for i in order:
            j = int(np.argmin(np.where(taken, np.inf, cost[i])))
            assignment[i] = j
            taken[j] = True
        # verification sweep: adjacent swaps that reduce the worst mismatch
        for _ in range(2):
            improved = False
            worst = np.argsort(-cost[np.arange(N), assignment])[: min(64, N)]
            for i in worst:
                for j in worst:
                    if i == j:
                        continue
                    a, b = assignment[i], assignment[j]
                    if max(cost[i, b], cost[j, a]) < max(cost[i, a], cost[j, b]):
                        assignment[i], assignment[j] = b, a
                        improved = True
            if not improved:
                break
    mm = cost[np.arange(N), assignment]
    ambiguous = 0
    if ambiguity_tol > 0:
        masked = cost.copy()
        masked[np.arange(N), assignment] = np.inf
        second = masked.min(axis=1)
        ambiguous = int(np.sum(second <= mm + ambiguity_tol))
    return MatchResult(assignment, float(mm.max()), mm, ambiguous)


# --------------------------------------------------------------------------
# Forward engine (validation-mode machinery)
# --------------------------------------------------------------------------


class ForwardEngine:
    """Bundle of the true norm, domain, oracle, and cached probe stencils.

    Engine-side reconstruction checks (charts, pointwise norm recovery,
    boundary norm recovery) read their distances from here, not from blinded
    data.
    """

    def __init__(self, norm, domain, oracle=None, probe_method="shoot", stencil_step_rel=1e-2, fan_K=192, mesh_count=64):
        self.norm = norm
        self.rev = reverse(norm)
        self.domain = domain
        self.oracle = oracle
        self.probe_method = probe_method
        self.stencil_step_rel = stencil_step_rel
        self.fan_K = fan_K
        if oracle is not None:
            self.mesh_params = oracle.boundary_params
        else:
            self.mesh_params = np.arange(mesh_count) * (2 * np.pi / mesh_count)
        self._probes = {}

    def probe(self, x):
        key = tuple(np.round(np.asarray(x, dtype=float), 12))
        if key not in self._probes:
            self._probes[key] = SmoothnessProbe(
                self.norm,
                self.domain,
                x,
                step_rel=self.stencil_step_rel,
                mesh_params=self.mesh_params,
                oracle=self.oracle,
                method=self.probe_method,
                K=self.fan_K,
            )
        return self._probes[key]

    def boundary_vector(self, x, method=None):
        method = method or self.probe_method
        if method == "oracle":
            return self.oracle.boundary_vector(x)
        vals, reached, _, _ = fan_boundary_vectors(
            self.norm, self.domain, np.asarray(x, float)[None], self.mesh_params, K=self.fan_K
        )
        out = vals[0]
        if self.oracle is not None and not reached.all():
            fb = ~reached[0]
            out[fb] = self.oracle.boundary_vector(x)[fb]
        return out


# --------------------------------------------------------------------------
# Distance-coordinate charts
# --------------------------------------------------------------------------


@dataclass
class ChartCertificate:
    center: np.ndarray
    node_indices: tuple
    determinant: float
    condition: float
    tuples_tried: int


def build_chart(engine, x, rng=None, max_tuples=200, det_threshold=1e-6, window=np.pi / 2):
    """Search boundary tuples whose distance differentials form a chart at x.

    The first node is the boundary distance minimizer; companions are drawn
    from a window around it among nodes whose distance function the stencil
    certifies smooth.  The determinant is taken on row-normalized
    differentials, so the threshold is scale free.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    x = np.asarray(x, dtype=float)
    probe = engine.probe(x)
    r = probe.table[0]
    z1 = int(np.argmin(r))
    smooth = probe.smooth_mask()
    if not smooth[z1]:
        raise ChartFailure("distance to the nearest boundary point is not certified smooth")
    params = probe.mesh_params
    gaps = np.abs(wrap_angle(params - params[z1]))
    candidates = np.flatnonzero((gaps > 1e-12) & (gaps <= window) & smooth)
    if len(candidates) == 0:
        raise ChartFailure("no smooth companion nodes in the window")
    diffs = probe.differentials()
    p1 = diffs[z1]
    p1n = p1 / np.linalg.norm(p1)
    best_det = 0.0
    tried = 0
    order = rng.permutation(candidates)
    for z2 in order[:max_tuples]:
        tried += 1
        p2 = diffs[z2]
        p2n = p2 / np.linalg.norm(p2)
        M = np.stack([p1n, p2n])
        det = abs(np.linalg.det(M))
        if det > best_det:
            best_det = det
            best = (int(z2), M)
        if det > det_threshold:
            cond = float(np.linalg.cond(M))
            return ChartCertificate(x, (z1, int(z2)), float(det), cond, tried)
    raise ChartFailure("no tuple reached the determinant threshold", best_det=best_det)


# --------------------------------------------------------------------------
# Norm recovery on the covered cone
# --------------------------------------------------------------------------


class DualConeInterpolant:
    """Dual-norm model on the covered covector cone.

    The recovered dual norm equals one on each certified covector; writing it
    in polar form r * W(angle), W is interpolated by periodic multiquadric
    radial basis functions with an additive constant (so constant data are
    reproduced exactly) and extended 1-homogeneously in the radius.
    """

    def __init__(self, covectors, shape=None, ridge=1e-12):
        covectors = np.atleast_2d(np.asarray(covectors, dtype=float))
        self.angles = np.arctan2(covectors[:, 1], covectors[:, 0])
        radii = np.linalg.norm(covectors, axis=1)
        self.values = 1.0 / radii  # W(angle_j): dual norm of the unit direction
        n = len(self.angles)
        if shape is None:
            gaps = np.sort(np.mod(np.diff(np.sort(self.angles)), 2 * np.pi))
            med = np.median(gaps) if len(gaps) else 0.2
            shape = max(4.0 * med, 0.15)
        self.shape = float(shape)
        K = self._kernel(self.angles[:, None], self.angles[None, :])
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = K + ridge * np.eye(n)
        A[:n, n] = 1.0
        A[n, :n] = 1.0
        rhs = np.concatenate([self.values, [0.0]])
        sol = np.linalg.solve(A, rhs)
        self.weights = sol[:n]
        self.intercept = sol[n]

    def _kernel(self, a, b):
        # multiquadric in chordal angular distance: smooth and 2*pi periodic
        r2 = 2.0 * (1.0 - np.cos(a - b))
        return np.sqrt(self.shape**2 + r2)

    def _w_derivs(self, phi):
        phi = np.asarray(phi, dtype=float)
        d = phi[..., None] - self.angles
        k = np.sqrt(self.shape**2 + 2.0 * (1.0 - np.cos(d)))
        w = k @ self.weights + self.intercept
        dk = np.sin(d) / k
        w1 = dk @ self.weights
        d2k = np.cos(d) / k - (np.sin(d) ** 2) / k**3
        w2 = d2k @ self.weights
        return w, w1, w2

    def value(self, p):
        p = np.asarray(p, dtype=float)
        r = np.linalg.norm(p, axis=-1)
        phi = np.arctan2(p[..., 1], p[..., 0])
        w, _, _ = self._w_derivs(phi)
        return r * w

    def legendre_inverse(self, p):
        """Velocity image of covectors under the recovered dual structure.

        Contracts the analytic Hessian of half the squared interpolated dual
        norm with p; in polar form the Hessian has the closed expression used
        here, so no finite differences touch the fitted surface.
        """
        p = np.atleast_2d(np.asarray(p, dtype=float))
        r = np.linalg.norm(p, axis=-1)
        phi = np.arctan2(p[:, 1], p[:, 0])
        w, w1, _ = self._w_derivs(phi)
        s = w * w
        s1 = 2.0 * w * w1
        phat = p / r[:, None]
        that = np.stack([-phat[:, 1], phat[:, 0]], axis=-1)
        return r[:, None] * (s[:, None] * phat + 0.5 * s1[:, None] * that)


@dataclass
class RecoveredNormSamples:
    point: np.ndarray
    directions: np.ndarray  # unit (Euclidean) fiber directions
    recovered: np.ndarray  # recovered norm values along them
    truth: np.ndarray | None
    covectors: np.ndarray
    coverage: float

    @property
    def max_rel_error(self):
        if self.truth is None:
            return None
        return float(np.max(np.abs(self.recovered - self.truth) / self.truth))


def _cone_coverage(angles, expected_gap):
    a = np.sort(np.mod(angles, 2 * np.pi))
    if len(a) < 2:
        return 0.0
    gaps = np.diff(np.concatenate([a, [a[0] + 2 * np.pi]]))
    covered = np.minimum(gaps, 3.0 * expected_gap).sum()
    return float(covered / (2 * np.pi))


def recover_norm_at(engine, x, min_covectors=None, with_truth=True):
    """Pointwise norm recovery from distance differentials.

    Differentials of the certified-smooth boundary distance functions are
    covectors on the recovered dual unit sphere; the dual norm is
    interpolated over their cone, the inverse Legendre image turns them into
    velocities of the reversed norm, and a final sign flip lands on the
    forward norm along the covered directions.
    """
    x = np.asarray(x, dtype=float)
    probe = engine.probe(x)
    smooth = probe.smooth_mask()
    n = 2
    if min_covectors is None:
        min_covectors = 2 * n
    if smooth.sum() < min_covectors:
        raise InsufficientCone(
            f"only {int(smooth.sum())} certified covectors at this point"
        )
    covectors = probe.differentials()[smooth]
    interp = DualConeInterpolant(covectors)
    y = interp.legendre_inverse(covectors)  # reversed-norm unit velocities
    speeds = np.linalg.norm(y, axis=1)
    dirs = -y / speeds[:, None]  # forward directions; F(x, dir) = 1/|y|
    recovered = 1.0 / speeds
    truth = None
    if with_truth:
        truth = eval_norm(engine.norm, np.broadcast_to(x, dirs.shape), dirs)
    coverage = _cone_coverage(
        np.arctan2(dirs[:, 1], dirs[:, 0]), 2 * np.pi / probe.mesh_params.size
    )
    return RecoveredNormSamples(x, dirs, recovered, truth, covectors, coverage)


def boundary_norm_recovery(engine, z_param, y, h_rel=1e-2):
    """Norm of an outward boundary vector from interior distance quotients.

    Walks in along the straight ray with velocity y, forms the quotient
    distance/(remaining parameter) at three dyadic steps, and Richardson
    extrapolates the linear and quadratic error terms away.
    """
    domain = engine.domain
    z = domain.boundary_point(np.atleast_1d(z_param))[0]
    y = np.asarray(y, dtype=float)
    from .geodesics import unit_normal

    nu = unit_normal(engine.norm, domain, z_param, orientation="outward")
    g = engine.norm.tensor(z, nu)
    comp = float(np.einsum("i,ij,j->", nu, g, y))
    if comp <= 1e-8 * np.linalg.norm(y):
        raise ValueError("boundary recovery needs a strictly outward vector")
    h = h_rel * domain.diameter
    quot = []
    for step in (h, 0.5 * h, 0.25 * h):
        c = z - step * y
        if not domain.inside(c[None])[0]:
            raise ValueError("stencil point fell outside the domain; lower h_rel")
        vals, reached, _, _ = fan_boundary_vectors(
            engine.norm, domain, c[None], np.atleast_1d(z_param), K=engine.fan_K
        )
        if not reached[0, 0]:
            raise ChartFailure("no geodesic from the interior stencil reached z")
        quot.append(vals[0, 0] / step)
    q1, q2, q3 = quot
    r1 = 2.0 * q2 - q1
    r2 = 2.0 * q3 - q2
    return float((4.0 * r2 - r1) / 3.0)


# --------------------------------------------------------------------------
# Non-uniqueness pair
# --------------------------------------------------------------------------


class DirectionBump:
    """Compactly supported cosine-taper bump on the unit sphere bundle."""

    def __init__(self, center, radius, angle, angle_halfwidth):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.angle = float(angle)
        self.angle_halfwidth = float(angle_halfwidth)
        self.params = {
            "kind": "cosine_taper",
            "center": self.center.tolist(),
            "radius": self.radius,
            "angle": self.angle,
            "angle_halfwidth": self.angle_halfwidth,
        }

    def __call__(self, x, unit_dirs):
        x = np.asarray(x, dtype=float)
        unit_dirs = np.asarray(unit_dirs, dtype=float)
        d = np.linalg.norm(x - self.center, axis=-1)
        ub = np.clip(d / self.radius, 0.0, 1.0)
        ang = np.arctan2(unit_dirs[..., 1], unit_dirs[..., 0])
        ua = np.clip(np.abs(wrap_angle(ang - self.angle)) / self.angle_halfwidth, 0.0, 1.0)
        tb = np.cos(0.5 * np.pi * ub) ** 2
        ta = np.cos(0.5 * np.pi * ua) ** 2
        tb = np.where(ub < 1.0, tb, 0.0)
        ta = np.where(ua < 1.0, ta, 0.0)
        return tb * ta


def bump_from_params(params):
    if params["kind"] != "cosine_taper":
        raise ValueError(f"unknown bump kind {params['kind']!r}")
    return DirectionBump(
        params["center"], params["radius"], params["angle"], params["angle_halfwidth"]
    )


def _pd_on_lattice(norm_pert, center, radius, n_base=8, n_dir=64):
    """Smallest fundamental-tensor eigenvalue over a support-covering lattice."""
    rr = np.linspace(0.0, radius, n_base)
    tt = np.linspace(0.0, 2 * np.pi, n_base, endpoint=False)
    R, T = np.meshgrid(rr, tt, indexing="ij")
    pts = center + np.stack([R * np.cos(T), R * np.sin(T)], axis=-1).reshape(-1, 2)
    dirs = np.stack(
        [np.cos(np.linspace(0, 2 * np.pi, n_dir, endpoint=False)),
         np.sin(np.linspace(0, 2 * np.pi, n_dir, endpoint=False))],
        axis=-1,
    )
    X = np.repeat(pts, n_dir, axis=0)
    Y = np.tile(dirs, (len(pts), 1))
    g = fundamental_tensor(norm_pert, X, Y)
    return float(np.linalg.eigvalsh(g)[..., 0].min())


def classify_lattice(norm, domain, oracle, base_points, dir_count=64, tol=None):
    """Good-set labels over a base-point-by-direction lattice."""
    angles = np.arange(dir_count) * (2 * np.pi / dir_count)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    labels = np.empty((len(base_points), dir_count), dtype=object)
    for i, x in enumerate(np.atleast_2d(base_points)):
        labels[i] = classify_directions(norm, domain, oracle, x, dirs, tol=tol)
    return angles, labels


def make_nonuniqueness_pair(
    norm,
    domain,
    oracle,
    rng=None,
    base_count=140,
    dir_count=64,
    s_cap=0.2,
    boundary_margin_rel=0.1,
    margin_cells=2,
    classify_tol=None,
):
    """Bump perturbation supported outside the sampled good set.

    Scans a base-by-direction lattice for directions whose geodesics fail to
    minimize, centers a cosine-taper direction bump deep inside that
    complement (its base support kept away from the boundary and its angular
    support at least two lattice cells from any good sample), and bisects the
    largest amplitude below the cap that keeps the perturbed fundamental
    tensor positive definite on a verification lattice.

    Raises :class:`ConstructionImpossible` when the sampled complement is
    empty, as on the flat disk where every chord minimizes.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    base_points = domain.interior_samples(base_count, rng, margin=0.02 * domain.diameter)
    angles, labels = classify_lattice(norm, domain, oracle, base_points, dir_count, tol=classify_tol)
    bad = (labels == NOT_MIN) | (labels == TRAPPED)
    if not np.any(bad):
        raise ConstructionImpossible("no sampled direction leaves the good set")
    good = labels == IN_G
    cell = 2 * np.pi / dir_count
    margin = margin_cells * cell
    b_idx, d_idx = np.nonzero(bad)
    g_idx, gd_idx = np.nonzero(good)
    g_pts = base_points[g_idx]
    g_ang = angles[gd_idx]

    best = None
    euclid_clear = np.array([_euclid_boundary_gap(domain, p) for p in base_points])
    for bi, di in zip(b_idx, d_idx):
        x0 = base_points[bi]
        a0 = angles[di]
        r_max = euclid_clear[bi] - boundary_margin_rel * domain.diameter
        if r_max <= 0.02 * domain.diameter:
            continue
        for r_base in (r_max, 0.75 * r_max, 0.5 * r_max):
            near = np.linalg.norm(g_pts - x0, axis=1) < r_base
            if np.any(near):
                ang_gap = np.min(np.abs(wrap_angle(g_ang[near] - a0)))
            else:
                ang_gap = np.pi
            r_ang = min(ang_gap - margin, 0.5 * np.pi)
            if r_ang < cell:
                continue
            score = r_base * r_ang
            if best is None or score > best[0]:
                best = (score, x0, a0, r_base, r_ang)
    if best is None:
        raise ConstructionImpossible(
            "complement samples exist but none admit the support margins"
        )
    _, x0, a0, r_base, r_ang = best
    bump = DirectionBump(x0, r_base, a0, r_ang)

    s = s_cap
    min_eig = _pd_on_lattice(DirectionBumpNorm(norm, s, bump), x0, r_base)
    if min_eig <= 0:
        lo, hi = 0.0, s_cap
        for _ in range(12):
            mid = 0.5 * (lo + hi)
            if _pd_on_lattice(DirectionBumpNorm(norm, mid, bump), x0, r_base) > 0:
                lo = mid
            else:
                hi = mid
        s = lo
        min_eig = _pd_on_lattice(DirectionBumpNorm(norm, s, bump), x0, r_base)
    if s <= 0:
        raise ConstructionImpossible("no positive amplitude keeps the norm convex")
    report = {
        "center": x0.tolist(),
        "direction_angle": float(a0),
        "base_radius": float(r_base),
        "angle_halfwidth": float(r_ang),
        "amplitude": float(s),
        "lattice_min_eigenvalue": float(min_eig),
        "complement_samples": int(bad.sum()),
        "good_samples": int(good.sum()),
    }
    return DirectionBumpNorm(norm, s, bump), report


def _euclid_boundary_gap(domain, p):
    """Euclidean distance from p to the boundary mesh (fine sampling)."""
    t = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    return float(np.linalg.norm(domain.boundary_point(t) - p, axis=1).min())


@dataclass
class NonUniquenessReport:
    matrix_diff: float
    matrix_tolerance: float
    norm_gap: float
    degenerate: bool

    @property
    def passed(self):
        if self.degenerate:
            return False
        return (
            self.matrix_diff <= self.matrix_tolerance
            and self.norm_gap >= 10.0 * max(self.matrix_diff, 1e-15)
        )


def verify_nonuniqueness(norm, pert, domain, sources, oracle_h, k=3, boundary_count=64, tol_factor=2.0, sphere_samples=48):
    """Compare full boundary-distance matrices of the pair and the sup gap.

    Passes when the matrices agree within twice the oracle error level while
    the pointwise norm gap on the unit sphere bundle is at least an order of
    magnitude larger; an identically zero gap reports as degenerate.
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    orc_f = DistanceOracle(norm, domain, oracle_h, k=k, boundary_count=boundary_count)
    orc_h = DistanceOracle(pert, domain, oracle_h, k=k, boundary_count=boundary_count)
    Rf = np.stack([orc_f.boundary_vector(x) for x in sources])
    Rh = np.stack([orc_h.boundary_vector(x) for x in sources])
    matrix_diff = float(np.max(np.abs(Rf - Rh)))
    tol = tol_factor * orc_f.rel_error_bound * float(np.max(Rf))

    pts = domain.interior_samples(sphere_samples, np.random.default_rng(7), margin=0.02 * domain.diameter)
    angles = np.linspace(0, 2 * np.pi, 128, endpoint=False)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    X = np.repeat(pts, len(dirs), axis=0)
    D = np.tile(dirs, (len(pts), 1))
    ff = eval_norm(norm, X, D)
    unit = D / ff[:, None]
    gap = float(np.max(np.abs(eval_norm(pert, X, unit) - 1.0)))
    return NonUniquenessReport(matrix_diff, tol, gap, degenerate=gap < 1e-12)
