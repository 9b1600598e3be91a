"""Command-line entry point: ``scanreg <subcommand> ...``.

Exit codes: 0 on success, 2 when multi-view registration stalls (partial
output is still written), 1 on any other error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import Config, load_config
from .errors import RegistrationStalled, ScanRegError
from .evaluation import evaluate, make_base_surface, synth_generate
from .io import TransformRecord, load_cloud, load_transforms, save_cloud, save_json, save_transforms
from .multiview import register_all, session_report
from .pairwise import register_pair

EXIT_OK, EXIT_ERROR, EXIT_STALLED = 0, 1, 2
CLOUD_SUFFIXES = (".ply", ".xyz", ".txt", ".pts")

# flag -> (config key, argparse kwargs)
_CONFIG_FLAGS = {
    "--delta": ("delta", {"type": float}),
    "--descriptor-freq": ("descriptor_freq", {"type": int}),
    "--model-descriptor-freq": ("model_descriptor_freq", {"type": int}),
    "--icp-freq": ("icp_freq", {"type": int}),
    "--lambda": ("lam", {"type": float}),
    "--xi-min": ("xi_min", {"type": float}),
    "--max-iterations": ("max_iterations", {"type": int}),
    "--epsilon": ("epsilon", {"type": float}),
    "--ransac-iterations": ("ransac_iterations", {"type": int}),
    "--ransac-seed": ("ransac_seed", {"type": int}),
    "--d-factor": ("d_factor", {"type": float}),
    "--normal-angle": ("normal_angle_deg", {"type": float}),
    "--length-factor": ("length_factor", {"type": float}),
    "--reference": ("reference", {"type": int}),
}
_BOOL_FLAGS = {
    "--full-propagation": "full_propagation",
    "--full-propagation-fallback": "full_propagation_fallback",
    "--rude": "rude_augmentation",
}


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("configuration (flags override the config file)")
    group.add_argument("--config", help="JSON config file (default: $SCANREG_CONFIG)")
    for flag, (key, kw) in _CONFIG_FLAGS.items():
        group.add_argument(flag, dest=key, default=None, **kw)
    for flag, key in _BOOL_FLAGS.items():
        group.add_argument(flag, dest=key, action="store_true", default=None)
    return parent


def _config_from_args(args) -> Config:
    keys = [k for k, _ in _CONFIG_FLAGS.values()] + list(_BOOL_FLAGS.values())
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    return load_config(args.config, overrides)


def _scan_paths(inputs) -> list[Path]:
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in CLOUD_SUFFIXES))
        else:
            paths.append(p)
    if not paths:
        raise ScanRegError("no scan files found")
    return paths


def cmd_register(args) -> int:
    cfg = _config_from_args(args)
    paths = _scan_paths(args.scans)
    scans = [load_cloud(p) for p in paths]
    code = EXIT_OK
    try:
        result = register_all(scans, cfg.to_multiview())
    except RegistrationStalled as err:
        result, code = err.result, EXIT_STALLED
        print(f"scanreg: {err}", file=sys.stderr)
    records = [TransformRecord(paths[r.scan].stem, r.transform, r.tmse, r.pass_index) for r in result.records]
    save_transforms(records, args.out)
    if args.model:
        save_cloud(result.model.points, args.model)
    report = session_report(result)
    report["scan_files"] = [str(p) for p in paths]
    if args.report:
        save_json(report, args.report)
    print(
        f"placed {len(result.records) - 1}/{len(scans) - 1} scans in {result.passes} passes, "
        f"{result.pairwise_calls} pairwise registrations"
    )
    return code


def cmd_pairwise(args) -> int:
    cfg = _config_from_args(args)
    P, Q = load_cloud(args.data), load_cloud(args.model)
    res = register_pair(P, Q, cfg.to_pairwise())
    save_transforms([TransformRecord(Path(args.data).stem, res.transform, res.tmse, 0)], args.out)
    print(json.dumps({"xi": res.xi, "tmse": res.tmse, "psi": res.psi, "iterations": res.iterations}))
    return EXIT_OK


def _by_scan(records) -> dict:
    return {str(r.scan): r.transform for r in records}


def cmd_evaluate(args) -> int:
    est, gt = load_transforms(args.transforms), load_transforms(args.ground_truth)
    est_map, gt_map = _by_scan(est), _by_scan(gt)
    names = [str(r.scan) for r in gt]
    missing = [n for n in names if n not in est_map]
    if missing:
        raise ScanRegError(f"no estimated transform for scans {missing}")
    ref = names.index(args.reference) if args.reference else 0
    report = evaluate([est_map[n] for n in names], [gt_map[n] for n in names], ref)
    out = report.as_dict()
    out["scans"] = names
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = make_base_surface(args.points, seed=args.base_seed)
    scans, gt = synth_generate(base, args.scans, args.overlap, args.noise, args.seed)
    width = len(str(args.scans - 1))
    names = [f"scan_{i:0{width}d}" for i in range(args.scans)]
    for name, scan in zip(names, scans):
        save_cloud(scan, out / f"{name}.{args.format}")
    save_transforms([TransformRecord(n, T) for n, T in zip(names, gt.transforms)], out / "ground_truth.json")
    print(f"wrote {args.scans} scans to {out}")
    return EXIT_OK


def cmd_merge(args) -> int:
    records = load_transforms(args.transforms)
    paths = {p.stem: p for p in _scan_paths(args.scans)}
    parts = []
    for r in records:
        if str(r.scan) not in paths:
            raise ScanRegError(f"no scan file for record {r.scan!r}")
        parts.append(r.transform.apply(load_cloud(paths[str(r.scan)])))
    save_cloud(np.concatenate(parts) if parts else np.zeros((0, 3)), args.out)
    print(f"merged {len(parts)} scans into {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ScanRegError(f"cannot read report {args.report}: {err}") from err
    lines = [
        f"scans: {report.get('n_scans')}  reference: {report.get('reference')}  stalled: {report.get('stalled')}",
        f"passes: {report.get('passes')}  pairwise registrations: {report.get('pairwise_calls')}",
    ]
    for entry in report.get("tmse_history", []):
        mark = "reliable" if entry["reliable"] else "rejected"
        lines.append(f"  pass {entry['pass']} scan {entry['scan']}: tmse {entry['tmse']:.6g} ({mark})")
    if report.get("unplaced"):
        lines.append(f"unplaced: {report['unplaced']}")
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scanreg", description="Registration of unordered range scans.")
    sub = parser.add_subparsers(dest="command", required=True)
    cfg = _config_parent()

    p = sub.add_parser("register", parents=[cfg], help="register a set of scans into one frame")
    p.add_argument("scans", nargs="+", help="scan files or a directory of them")
    p.add_argument("--out", default="transforms.json")
    p.add_argument("--model", help="write the fused model here")
    p.add_argument("--report", help="write the session report (JSON) here")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("pairwise", parents=[cfg], help="align one scan to another")
    p.add_argument("data")
    p.add_argument("model")
    p.add_argument("--out", default="transform.json")
    p.set_defaults(func=cmd_pairwise)

    p = sub.add_parser("evaluate", help="compare transforms with ground truth")
    p.add_argument("transforms")
    p.add_argument("ground_truth")
    p.add_argument("--reference", help="scan name used as the common frame (default: first)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate synthetic scans with ground truth")
    p.add_argument("out_dir")
    p.add_argument("--scans", type=int, default=6)
    p.add_argument("--overlap", type=float, default=0.6)
    p.add_argument("--noise", type=float, default=5e-4, help="noise sigma as a fraction of the bbox diagonal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=20000)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--format", choices=["ply", "xyz"], default="ply")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("merge", help="apply transforms and concatenate scans")
    p.add_argument("transforms")
    p.add_argument("scans", nargs="+")
    p.add_argument("--out", default="merged.ply")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("report", help="print a session report")
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScanRegError, ValueError) as err:
        print(f"scanreg: error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
