"""Scenario-driven command line front end.

Commands: ``forward`` simulates boundary distance data, ``recover`` runs the
inverse checks on a data file, ``nonunique`` builds and verifies a
perturbation pair with identical data, ``elastic`` converts a stiffness file
into the fastest-wave norm, and ``geodesy`` tabulates exit, cut, and focal
distances per boundary node.

One JSON config per run, no prompts.  Exit codes: 0 pass, 2 config error,
3 expected-impossible or degenerate input, 4 verification failure.  A fixed
seed makes every output byte-identical across runs; floats are written with
17 significant digits.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import presets
from .distances import DistanceOracle, boundary_cut_distances, reversed_cut_distances
from .domains import domain_from_dict
from .elastic import StiffnessField, qp_finsler, verify_cofinsler
from .errors import ConstructionImpossible, FinslerError, SeparationViolation
from .geodesics import NormalRay, Trajectory, focal_distances, integrate_batch, trajectory_to_csv, unit_normal
from .norms import eval_norm, norm_from_dict, norm_to_dict, reverse
from .reconstruct import (
    BoundaryDistanceData,
    ForwardEngine,
    build_chart,
    embedding_check,
    extend_to_boundary,
    make_nonuniqueness_pair,
    match_datasets,
    recover_norm_at,
    verify_nonuniqueness,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IMPOSSIBLE = 3
EXIT_FAILED = 4

_PRESET_METRICS = {
    "flat": presets.flat_norm,
    "randers": presets.randers_norm,
    "bump": presets.bump_norm,
}


def _fmt(x):
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(c) if isinstance(c, (int, float, np.floating)) else str(c) for c in row) + "\n")


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def metric_from_config(cfg):
    m = cfg.get("metric")
    if m is None:
        raise KeyError("config needs a 'metric' section")
    if "preset" in m:
        name = m["preset"]
        if name not in _PRESET_METRICS:
            raise KeyError(f"unknown metric preset {name!r}")
        return _PRESET_METRICS[name]()
    return norm_from_dict(m)


def load_scenario(path, seed_override=None):
    with open(path) as fh:
        cfg = json.load(fh)
    norm = metric_from_config(cfg)
    domain = domain_from_dict(cfg.get("domain", {"kind": "disk"}))
    mesh = cfg.get("mesh", {})
    scenario = {
        "config": cfg,
        "norm": norm,
        "domain": domain,
        "boundary_nodes": int(mesh.get("boundary_nodes", 64)),
        "interior_sources": int(mesh.get("interior_sources", 30)),
        "oracle_h": float(mesh.get("oracle_h", domain.diameter / 60)),
        "oracle_k": int(mesh.get("oracle_k", 3)),
        "seed": int(seed_override if seed_override is not None else cfg.get("seed", 0)),
    }
    for v in ("boundary_nodes", "interior_sources", "oracle_k"):
        if scenario[v] <= 0:
            raise ValueError(f"{v} must be positive")
    if scenario["oracle_h"] <= 0:
        raise ValueError("oracle_h must be positive")
    return scenario


def _oracle(scn, norm=None):
    return DistanceOracle(
        norm if norm is not None else scn["norm"],
        scn["domain"],
        h=scn["oracle_h"],
        k=scn["oracle_k"],
        boundary_count=scn["boundary_nodes"],
    )


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------


def cmd_forward(scn, out, blind=False, threads=1):
    norm, domain = scn["norm"], scn["domain"]
    rng = np.random.default_rng(scn["seed"])
    oracle = _oracle(scn)
    margin = 0.02 * domain.diameter
    sources = domain.interior_samples(scn["interior_sources"], rng, margin=margin)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vectors = list(pool.map(oracle.boundary_vector, sources))
    else:
        vectors = [oracle.boundary_vector(x) for x in sources]
    data = BoundaryDistanceData(
        oracle.boundary_params,
        oracle.boundary_nodes,
        np.stack(vectors),
        None if blind else sources,
    )
    data.save(out / "data.json")
    write_json(out / "calibration.json", oracle.calibrate())
    rows = []
    for i, r in enumerate(data.r_vectors):
        rows.append([i, r.min(), oracle.boundary_params[int(np.argmin(r))], r.max(), r.mean()])
    write_csv(out / "rstats.csv", ["source", "min", "argmin_param", "max", "mean"], rows)
    print(f"forward: wrote {data.count} boundary distance functions on {data.mesh_size} nodes")
    return EXIT_OK


# --------------------------------------------------------------------------
# recover
# --------------------------------------------------------------------------


def cmd_recover(scn, data_path, out, blind=False):
    cfg = scn["config"].get("recover", {})
    data = BoundaryDistanceData.load(data_path)
    rng = np.random.default_rng(scn["seed"])
    oracle = _oracle(scn)
    checks = {}

    # data-side: injectivity, shuffled self-matching, boundary extension
    truth = None
    if data.sources is not None and not blind:
        fields = [oracle.field_from_point(x) for x in data.sources]
        truth = np.array(
            [[oracle.eval_field_at(fields[i], data.sources[j]) if i != j else 0.0 for j in range(data.count)] for i in range(data.count)]
        )
    emb = embedding_check(data, truth_distances=truth)
    checks["embedding_injective"] = emb.injective
    shuffled, perm = data.shuffled(rng)
    match = match_datasets(data, shuffled)
    inverse_ok = bool(np.all(perm[match.assignment] == np.arange(data.count)))
    checks["self_match_exact"] = inverse_ok and match.max_mismatch == 0.0
    ext = extend_to_boundary(data)
    ext_rows = [[j, float(ext[j].max()), float(ext[j].mean())] for j in range(data.mesh_size)]
    write_csv(out / "boundary_extension.csv", ["node", "max", "mean"], ext_rows)
    write_json(
        out / "data_side.json",
        {
            "embedding": {
                "min_sup_gap": emb.min_sup_gap,
                "collisions": emb.collisions,
                "ratio_min": emb.ratio_min,
                "ratio_max": emb.ratio_max,
            },
            "self_match": {"max_mismatch": match.max_mismatch, "exact": checks["self_match_exact"]},
        },
    )

    # engine-side: charts and pointwise recovery with the scenario metric
    n_points = int(cfg.get("points", 4))
    max_err_allowed = float(cfg.get("max_rel_error", 0.02))
    engine = ForwardEngine(scn["norm"], scn["domain"], oracle)
    pts = scn["domain"].interior_samples(n_points, rng, margin=0.15 * scn["domain"].diameter)
    chart_rows, rec_rows = [], []
    worst = 0.0
    charts_ok = True
    for i, x in enumerate(pts):
        try:
            cert = build_chart(engine, x, rng=rng, max_tuples=int(cfg.get("max_tuples", 200)))
            chart_rows.append([i, x[0], x[1], cert.node_indices[0], cert.node_indices[1], cert.determinant, cert.condition, cert.tuples_tried])
        except FinslerError:
            charts_ok = False
            chart_rows.append([i, x[0], x[1], -1, -1, 0.0, np.inf, -1])
            continue
        rec = recover_norm_at(engine, x)
        worst = max(worst, rec.max_rel_error)
        for d, r, t in zip(rec.directions, rec.recovered, rec.truth):
            rec_rows.append([i, x[0], x[1], np.arctan2(d[1], d[0]), r, t, abs(r - t) / t])
    checks["charts_found"] = charts_ok
    checks["recovery_max_rel_error_ok"] = worst <= max_err_allowed
    write_csv(out / "charts.csv", ["point", "x1", "x2", "z1", "z2", "det", "cond", "tuples"], chart_rows)
    write_csv(out / "recovery.csv", ["point", "x1", "x2", "direction_angle", "recovered", "truth", "rel_error"], rec_rows)
    write_json(out / "recover_summary.json", {"checks": checks, "recovery_max_rel_error": worst})
    print("recover:", checks, f"max rel error {worst:.3e}")
    return EXIT_OK if all(checks.values()) else EXIT_FAILED


# --------------------------------------------------------------------------
# nonunique
# --------------------------------------------------------------------------


def cmd_nonunique(scn, out):
    cfg = scn["config"].get("nonunique", {})
    norm, domain = scn["norm"], scn["domain"]
    rng = np.random.default_rng(scn["seed"])
    oracle = _oracle(scn)
    try:
        pert, report = make_nonuniqueness_pair(
            norm,
            domain,
            oracle,
            rng=rng,
            base_count=int(cfg.get("base_count", 90)),
            dir_count=int(cfg.get("dir_count", 48)),
        )
    except ConstructionImpossible as exc:
        write_json(out / "nonunique_report.json", {"status": "construction-impossible", "reason": str(exc)})
        print(f"nonunique: construction impossible ({exc})")
        return EXIT_IMPOSSIBLE
    sources = domain.interior_samples(int(cfg.get("verify_sources", 24)), rng, margin=0.02 * domain.diameter)
    ver = verify_nonuniqueness(norm, pert, domain, sources, oracle_h=scn["oracle_h"], k=scn["oracle_k"], boundary_count=scn["boundary_nodes"])
    payload = {
        "status": "pass" if ver.passed else "fail",
        "bump": report,
        "matrix_diff": ver.matrix_diff,
        "matrix_tolerance": ver.matrix_tolerance,
        "norm_gap": ver.norm_gap,
        "degenerate": ver.degenerate,
    }
    write_json(out / "nonunique_report.json", payload)
    try:
        write_json(out / "pair.json", {"base": norm_to_dict(norm), "perturbed": norm_to_dict(pert)})
    except ValueError:
        pass  # non-serializable custom base metric; the report still stands
    print(f"nonunique: {payload['status']} diff={ver.matrix_diff:.3e} gap={ver.norm_gap:.3e}")
    return EXIT_OK if ver.passed else EXIT_FAILED


# --------------------------------------------------------------------------
# elastic
# --------------------------------------------------------------------------

_VOIGT_UPPER = [(i, j) for i in range(6) for j in range(i, 6)]


def stiffness_from_file(path):
    with open(path) as fh:
        spec = json.load(fh)
    rho = float(spec["density"])
    if "voigt" in spec:
        c6 = np.asarray(spec["voigt"], dtype=float)
    elif "voigt_upper" in spec:
        vals = np.asarray(spec["voigt_upper"], dtype=float)
        if len(vals) != 21:
            raise ValueError("voigt_upper must list the 21 independent entries")
        c6 = np.zeros((6, 6))
        for (i, j), v in zip(_VOIGT_UPPER, vals):
            c6[i, j] = v
            c6[j, i] = v
    else:
        raise KeyError("stiffness file needs 'voigt' or 'voigt_upper'")
    return StiffnessField.from_voigt(c6, rho)


def cmd_elastic(scn, stiffness_path, out):
    cfg = scn["config"].get("elastic", {})
    field = stiffness_from_file(stiffness_path)
    report = verify_cofinsler(field, np.zeros(3), samples=int(cfg.get("sphere_samples", 200)))
    write_json(
        out / "admissibility.json",
        {
            "passed": report.passed,
            "min_hessian_eigenvalue": float(report.min_hessian_eigenvalue.min()),
            "min_separation_margin": float(report.separation_margin.min()),
            "max_homogeneity_residual": float(report.homogeneity_residual.max()),
        },
    )
    try:
        norm = qp_finsler(field)
    except SeparationViolation as exc:
        print(f"elastic: degenerate stiffness ({exc})")
        return EXIT_IMPOSSIBLE
    write_json(out / "qp_norm.json", norm_to_dict(norm))
    n_dirs = int(cfg.get("table_directions", 10))
    from .norms import sphere_directions

    dirs = sphere_directions(n_dirs, 3)
    x0 = np.zeros((n_dirs, 3))
    times = eval_norm(norm, x0, dirs)
    rows = [[*d, t, 1.0 / t] for d, t in zip(dirs, times)]
    write_csv(out / "travel_times.csv", ["dx", "dy", "dz", "time_per_unit_length", "group_speed"], rows)
    print(f"elastic: admissible, wrote travel-time table for {n_dirs} directions")
    return EXIT_OK


# --------------------------------------------------------------------------
# geodesy
# --------------------------------------------------------------------------


def cmd_geodesy(scn, out):
    cfg = scn["config"].get("geodesy", {})
    norm, domain = scn["norm"], scn["domain"]
    count = int(cfg.get("nodes", 16))
    s_max = float(cfg.get("s_max", 1.5 * domain.diameter))
    params = np.arange(count) * (2 * np.pi / count)

    # exit time of each inward (reversed-norm) normal ray
    z = domain.boundary_point(params)
    nu = unit_normal(norm, domain, params, "inward", "reversed")
    rev = reverse(norm)
    res = integrate_batch(rev, domain, np.concatenate([z, nu], axis=-1), 10.0 * domain.diameter)
    tau_exit = res["exit_times"]

    tau_f = focal_distances(norm, domain, params, s_max)
    tau_bd = boundary_cut_distances(norm, domain, params, s_max)
    tol = 2.0 * DistanceOracle.REL_ERROR.get(scn["oracle_k"], 0.02) * domain.diameter
    tau_rev = reversed_cut_distances(
        norm,
        domain,
        params,
        s_max,
        tol=tol,
        oracle_kw={"h": scn["oracle_h"], "k": scn["oracle_k"], "boundary_count": count},
    )
    rows = []
    for i in range(count):
        rows.append([params[i], tau_exit[i], tau_rev[i], tau_bd[i], tau_f[i] if np.isfinite(tau_f[i]) else float("nan")])
    write_csv(out / "cut_focal_table.csv", ["param", "tau_exit", "tau_cut_reversed", "tau_boundary_cut", "tau_focal"], rows)

    for idx in cfg.get("trajectory_nodes", [0]):
        ray = NormalRay(norm, domain, params[int(idx)], s_max)
        trajectory_to_csv(ray.traj, rev, out / f"normal_ray_{int(idx):03d}.csv")
    ok = np.all(tau_bd <= np.where(np.isfinite(tau_f), tau_f, np.inf) + 2e-3) and np.all(tau_rev > tau_bd)
    write_json(out / "geodesy_summary.json", {"cut_before_focal": bool(ok)})
    print(f"geodesy: wrote tables for {count} nodes; ordering ok: {bool(ok)}")
    return EXIT_OK if ok else EXIT_FAILED


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="finslerlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("forward", "recover", "nonunique", "elastic", "geodesy"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="scenario JSON")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--blind", action="store_true", help="strip ground truth from outputs")
        if name == "recover":
            sp.add_argument("--data", required=True, help="boundary distance data file")
        if name == "elastic":
            sp.add_argument("--stiffness", required=True, help="stiffness JSON file")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        scn = load_scenario(args.config, seed_override=args.seed)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "forward":
            return cmd_forward(scn, out, blind=args.blind, threads=args.threads)
        if args.command == "recover":
            return cmd_recover(scn, args.data, out, blind=args.blind)
        if args.command == "nonunique":
            return cmd_nonunique(scn, out)
        if args.command == "elastic":
            return cmd_elastic(scn, args.stiffness, out)
        if args.command == "geodesy":
            return cmd_geodesy(scn, out)
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
