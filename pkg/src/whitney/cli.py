"""Command-line surface: scene validation, extension runs, verification
and plot-data emission.

Exit codes: 0 all checks pass, 1 a verification check failed, 2 input or
schema error, 3 engine failure (support leak, convergence failure, ...).
Reports are byte-reproducible given (scene, seed, flags); seeds are
mandatory in every report, defaulting to 0.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, geometry, verify
from .errors import EngineError, InputError, WhitneyError
from .extension import (check_stratum_consistency, extend_field,
                        flatness_rate_probe)
from .geometry import GraphCell, PointCell
from .jets import jet_permute, multi_indices
from .sceneio import SceneFile, dump_deterministic, load_scene
from .verify import rate_fit, whitney_residual

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_ENGINE = 0, 1, 2, 3

BOX_ENV = "WHITNEY_BOX"


def _load(path: str) -> SceneFile:
    sf = load_scene(path)
    env_box = os.environ.get(BOX_ENV)
    if env_box and "box" not in sf.raw:
        scene = sf.scene
        object.__setattr__(scene, "box", float(env_box))
    return sf


def _file_sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args) -> int:
    sf = _load(args.scene)
    scene = sf.scene
    problems = scene.validate()
    for s in scene.strata:
        if isinstance(s.cell, GraphCell):
            try:
                samples = geometry.stratum_samples(s.cell, 24, scene.box)
                check_stratum_consistency(scene.fields[s.id], s.cell,
                                          samples[:24])
            except WhitneyError as exc:
                problems.append(f"field consistency on {s.id!r}: {exc}")
    if problems:
        for p in problems:
            print(f"INVALID  {p}")
        return EXIT_INPUT
    print(f"VALID    {args.scene}: {len(scene.strata)} strata, "
          f"n={scene.n} p={scene.p} q={scene.q}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# extend


def _parse_grid(specs, n: int, box: float):
    if not specs:
        specs = [f"{-box}:{box}:{box / 25}"]
    if len(specs) == 1 and n > 1:
        specs = specs * n
    if len(specs) != n:
        raise InputError(f"need one --grid per axis ({n}), got {len(specs)}")
    axes = []
    for spec in specs:
        try:
            a, b, step = (float(v) for v in spec.split(":"))
        except ValueError:
            raise InputError(f"bad grid spec {spec!r}; use a:b:step")
        count = int(round((b - a) / step)) + 1
        axes.append(np.linspace(a, b, count))
    return axes


def cmd_extend(args) -> int:
    sf = _load(args.scene)
    scene = sf.scene
    seed = args.seed if args.seed is not None else sf.plan.seed
    problems = scene.validate()
    if problems:
        for p in problems:
            print(f"INVALID  {p}")
        return EXIT_INPUT

    f = extend_field(scene, seed=seed)
    axes = _parse_grid(args.grid, scene.n, scene.box)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)

    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    z_ids = [s.id for s in scene.strata if s.dim < scene.dim]
    z_desc = scene.descriptor_for(z_ids) if z_ids else None

    lines = [",".join([f"x{i + 1}" for i in range(scene.n)] + ["f", "d_skel"])]
    for x in pts:
        val = f(tuple(x))
        dz = (geometry.set_distance(z_desc, x, box=scene.box).mid
              if z_desc is not None else 1.0)
        lines.append(",".join([repr(float(v)) for v in x]
                              + [repr(val), repr(dz)]))
    samples_path = outdir / "samples.csv"
    samples_path.write_text("\n".join(lines) + "\n")

    report = {
        "schema": "jetfield-run/1",
        "version": __version__,
        "scene": Path(args.scene).name,
        "scene_sha": _file_sha(Path(args.scene)),
        "seed": seed,
        "grid": [f"{a[0]}:{a[-1]}:{len(a)}" for a in axes],
        "assembly": f.assembly_trace(),
        "leaks": f.leak_count,
        "samples_file": "samples.csv",
        "samples_sha": _file_sha(samples_path),
        "sample_count": len(pts),
    }
    (outdir / "report.json").write_text(dump_deterministic(report) + "\n")
    _write_manifest(outdir)
    print(f"extended {args.scene}: {len(pts)} grid samples -> {outdir}")
    return EXIT_OK


def _write_manifest(outdir: Path):
    entries = {}
    for p in sorted(outdir.iterdir()):
        if p.name == "manifest.json" or p.is_dir():
            continue
        entries[p.name] = _file_sha(p)
    (outdir / "manifest.json").write_text(
        dump_deterministic({"files": entries}) + "\n")


# ---------------------------------------------------------------------------
# verify


def _scene_jets_at(scene):
    """Point -> ambient-frame jet of the scene's field, looked up by
    stratum membership."""
    inv_perms = {}
    for s in scene.strata:
        if isinstance(s.cell, GraphCell):
            inv = [0] * scene.n
            for i, a in enumerate(s.cell.perm):
                inv[a] = i
            inv_perms[s.id] = tuple(inv)

    def jets_at(x):
        for s in scene.strata:
            cell = s.cell
            if isinstance(cell, PointCell):
                if geometry.contains(cell, x, 1e-9) == "inside":
                    return scene.fields[s.id].jet_at((0,), cell.point)
            else:
                if geometry.contains(cell, x, 1e-7) != "outside":
                    m = cell.intrinsic_dim
                    u = cell.to_internal(x)[:m]
                    jet = scene.fields[s.id].jet_at(u, cell.to_internal(x))
                    return jet_permute(jet, inv_perms[s.id])
        raise EngineError(f"point {tuple(x)} not on any stratum")

    return jets_at


def _whitney_probes(scene, cfg):
    """Pair families per probe: points approach the target along a line
    (full-dimensional strata) or along a stratum parameterization (curved
    strata), plus pairs anchored at the target point itself -- the family
    that exposes incompatible jets on lower strata."""
    j0, j1 = cfg.get("j0", 4), cfg.get("j1", 14)
    scales = [2.0 ** (-j) for j in range(j0, j1)]
    probes = cfg.get("probes")
    if probes is None:
        probes = [{"target": t, "direction": d} for t, d in zip(
            cfg.get("targets") or [[0.0] * scene.n],
            cfg.get("directions") or [[1.0] * scene.n])]
    for probe in probes:
        if "stratum" in probe:
            cell = scene.stratum(probe["stratum"]).cell
            u0 = np.asarray(probe["param_target"], dtype=float)
            du = np.asarray(probe["param_direction"], dtype=float)
            embed = lambda s: tuple(
                float(v) for v in cell.embed(tuple(u0 + du * s)))
            anchor = tuple(float(v) for v in probe["anchor"])
            radial = [(embed(s), embed(s / 2)) for s in scales]
            anchored = [(embed(s), anchor) for s in scales]
            target = anchor
        else:
            t = np.asarray(probe["target"], dtype=float)
            d = np.asarray(probe.get("direction", [1.0] * scene.n),
                           dtype=float)
            line = lambda s: tuple(float(v) for v in t + d * s)
            radial = [(line(s), line(s / 2)) for s in scales]
            anchored = [(line(s), tuple(float(v) for v in t))
                        for s in scales]
            target = tuple(float(v) for v in t)
        yield target, {"radial": radial, "anchored": anchored}


def _run_whitney_check(scene, plan) -> list[dict]:
    jets_at = _scene_jets_at(scene)
    results = []
    for target, families in _whitney_probes(scene, plan.whitney or {}):
        for beta in multi_indices(scene.n, scene.p):
            exponent = scene.p - sum(beta)
            for family, pairs in families.items():
                try:
                    samples = whitney_residual(jets_at, target, beta, pairs)
                    fit = rate_fit([(r.separation, r.residual)
                                    for r in samples], exponent)
                    results.append({"target": list(target),
                                    "beta": list(beta), "family": family,
                                    "slope": fit.slope,
                                    "verdict": fit.verdict})
                except WhitneyError as exc:
                    results.append({"target": list(target),
                                    "beta": list(beta), "family": family,
                                    "verdict": "FAIL", "error": str(exc)})
    return results


def _run_flatness(scene, f, plan) -> list[dict]:
    out = []
    for item in plan.flatness:
        sid = item["stratum"]
        stratum = scene.stratum(sid)
        target = np.asarray(item["target"], dtype=float)
        direction = np.asarray(item["direction"], dtype=float)
        j0, j1 = item.get("j0", 3), item.get("j1", 14)
        points = [tuple(target + direction * 2.0 ** (-j))
                  for j in range(j0, j1 + 1)]
        z_ids = [s.id for s in scene.strata if s.id != sid]
        z_desc = scene.descriptor_for(z_ids)
        report = flatness_rate_probe(
            f, z_desc, stratum.cell, item.get("cone", 0.5), scene.p, points,
            theta=item.get("theta", 1e-2), box=scene.box)
        for kappa, vals in sorted(report.per_kappa.items()):
            out.append({"stratum": sid, "kappa": list(kappa),
                        "normalized": [float(v) for v in vals],
                        "flat": bool(report.flat[kappa])})
    return out


def cmd_verify(args) -> int:
    sf = _load(args.scene)
    scene, plan = sf.scene, sf.plan
    rundir = Path(args.artifact)
    report_path = rundir / "report.json"
    if not report_path.exists():
        raise InputError(f"no report.json under {rundir}")
    run_report = json.loads(report_path.read_text())
    if run_report.get("schema") != "jetfield-run/1":
        raise InputError("artifact schema mismatch")
    if run_report.get("scene_sha") != _file_sha(Path(args.scene)):
        raise InputError("artifact was produced from a different scene file")

    seed = run_report["seed"]
    f = extend_field(scene, seed=seed)
    if f.assembly_trace() != run_report["assembly"]:
        raise InputError("assembly trace mismatch; artifact out of date")

    wanted = set(args.checks.split(",")) if args.checks else set(plan.checks)
    verdicts = {}
    details: dict = {"schema": "jetfield-verify/1", "version": __version__,
                     "seed": seed, "scene": Path(args.scene).name}

    if "structure" in wanted:
        problems = scene.validate()
        verdicts["structure"] = not problems
        details["structure"] = problems
    if "consistency" in wanted:
        ok = True
        for s in scene.strata:
            if isinstance(s.cell, GraphCell):
                try:
                    samples = geometry.stratum_samples(s.cell, 24, scene.box)
                    check_stratum_consistency(scene.fields[s.id], s.cell,
                                              samples[:24])
                except WhitneyError as exc:
                    ok = False
                    details.setdefault("consistency", []).append(str(exc))
        verdicts["consistency"] = ok
    if "agreement" in wanted:
        tol = args.tol if args.tol is not None else plan.tolerance
        rep = verify.check_extension(f, scene, tol=tol,
                                     samples_per_stratum=plan.samples_per_stratum,
                                     seed=seed)
        verdicts["agreement"] = rep.passed
        details["agreement"] = [
            {"stratum": e.stratum_id, "alpha": list(e.alpha),
             "max_rel_dev": e.max_rel_dev, "pass": e.passed}
            for e in rep.entries]
    if "whitney" in wanted and plan.whitney is not None:
        res = _run_whitney_check(scene, plan)
        verdicts["whitney"] = all(r["verdict"] == "PASS" for r in res)
        details["whitney"] = res
    if "flatness" in wanted and plan.flatness:
        res = _run_flatness(scene, f, plan)
        verdicts["flatness"] = all(r["flat"] for r in res)
        details["flatness"] = res

    details["verdicts"] = {k: ("PASS" if v else "FAIL")
                           for k, v in sorted(verdicts.items())}
    (rundir / "verify_report.json").write_text(
        dump_deterministic(details) + "\n")
    _write_manifest(rundir)
    for name, verdict in sorted(verdicts.items()):
        print(f"{'PASS' if verdict else 'FAIL'}  {name}")
    return EXIT_OK if all(verdicts.values()) else EXIT_FAIL


# ---------------------------------------------------------------------------
# plotdata


def cmd_plotdata(args) -> int:
    rundir = Path(args.report)
    selector = args.select
    out = Path(args.output) if args.output else None
    if selector == "extension":
        src = rundir / "samples.csv"
        if not src.exists():
            raise InputError(f"no samples.csv under {rundir}")
        text = src.read_text()
    elif selector.startswith("flatness:kappa="):
        key = selector.split("=", 1)[1]
        vpath = rundir / "verify_report.json"
        if not vpath.exists():
            raise InputError("flatness selector needs a verify report")
        data = json.loads(vpath.read_text())
        rows = ["scale_index,normalized"]
        for item in data.get("flatness", []):
            if ",".join(str(k) for k in item["kappa"]) == key:
                for j, v in enumerate(item["normalized"]):
                    rows.append(f"{j},{v!r}")
        text = "\n".join(rows) + "\n"
    else:
        raise InputError(f"unknown selector {selector!r}")
    if out:
        out.write_text(text)
        print(f"wrote {out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="whitney",
        description="Extend jet fields off stratified scenes and verify "
                    "the construction's contracts.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="schema + stratification checks")
    v.add_argument("scene")
    v.set_defaults(fn=cmd_validate)

    e = sub.add_parser("extend", help="build the extension, sample a grid")
    e.add_argument("scene")
    e.add_argument("-o", "--output", required=True)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--grid", action="append",
                   help="a:b:step, repeat per axis")
    e.set_defaults(fn=cmd_extend)

    c = sub.add_parser("verify", help="run the scene's verification plan")
    c.add_argument("scene")
    c.add_argument("artifact", help="run directory from 'extend'")
    c.add_argument("--checks", default=None,
                   help="comma-separated subset of the plan's checks")
    c.add_argument("--tol", type=float, default=None)
    c.set_defaults(fn=cmd_verify)

    p = sub.add_parser("plotdata", help="emit tabular data from a run")
    p.add_argument("report", help="run directory")
    p.add_argument("--select", required=True)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(fn=cmd_plotdata)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EngineError as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
