"""Command-line surface: synthesize protocol data, unmix, evaluate, and
self-test. Every subcommand echoes its invocation into `run.json` in the
output directory so results are reproducible from the artifacts alone."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import UnmixError
from .geometry import abundance_pinv, nmf_mu, vca
from .initsplit import init_endmembers, project_columns_to_simplex
from .mixmodel import ImageCube
from .protocol import (lins_protocol, match_endmembers, read_cube,
                       read_matrix_csv, rmse, sam, synth_reference,
                       write_cube, write_matrix_csv, write_pgm)
from .report import (save_abundance_figure, save_diagnostics_figure,
                     save_signature_figure)
from .selftest import run_suites
from .solver import PrimeConfig, load_config, prime
from .prism.network import load_params, save_params

PRIME_FLAG_FIELDS = ("gamma", "p", "lam", "alpha", "outer", "epochs_first",
                     "epochs_rest", "lr", "eta", "r", "nmf_iters")


def _write_run_record(outdir: Path, command: str, args_ns, extra=None):
    record = {
        "command": command,
        "argv": sys.argv[1:] if sys.argv[0] else [],
        "version": __version__,
        "flags": {k: v for k, v in sorted(vars(args_ns).items())
                  if k != "func" and not isinstance(v, Path)},
    }
    record["flags"].update(
        {k: str(v) for k, v in vars(args_ns).items() if isinstance(v, Path)})
    if extra:
        record.update(extra)
    (outdir / "run.json").write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")


def _write_diag_csv(path, rows):
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for row in rows:
            writer.writerow([f"{row[k]:.17g}" if isinstance(row[k], float)
                             else row[k] for k in keys])


def cmd_synth(args) -> int:
    if args.m < args.n:
        print(f"error: need --m >= --n (got {args.m} < {args.n})", file=sys.stderr)
        return 2
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    a_ref, s_gt, ref_cube = synth_reference(args.seed, args.h, args.w,
                                            args.m, args.n)
    zm, b_gt, s_gt = lins_protocol(a_ref, s_gt, args.gamma, args.h, args.w)
    write_cube(outdir / "reference", ref_cube)
    write_cube(outdir / "zm", zm)
    write_cube(outdir / "sgt", ImageCube(s_gt.reshape(args.n, args.h, args.w)))
    write_matrix_csv(outdir / "bgt.csv", b_gt)
    write_matrix_csv(outdir / "aref.csv", a_ref)
    _write_run_record(outdir, "synth", args)
    print(f"wrote reference/zm/sgt cubes and bgt.csv to {outdir}")
    return 0


def _prime_config_from_args(args) -> PrimeConfig:
    if args.config:
        cfg = load_config(args.config)
        doc = asdict(cfg)
    elif args.n is None:
        raise UnmixError("source count required: pass --n or --config")
    else:
        doc = asdict(PrimeConfig(n=args.n))
    doc["n"] = args.n if args.n is not None else doc["n"]
    doc["seed"] = args.seed
    for name in PRIME_FLAG_FIELDS:
        v = getattr(args, name)
        if v is not None:
            doc[name] = v
    if args.no_hi:
        doc["hi"] = False
    if args.no_ss:
        doc["ss"] = False
    if args.no_cg:
        doc["cg"] = False
    if args.early_stop:
        doc["early_stop"] = True
    return PrimeConfig(**doc)


def _nmf_warm_start(zm: ImageCube, n: int, seed: int):
    """Warm start for the factorization baseline.

    With enough bands this is the regular seed unmixing; in the
    underdetermined case the extra columns are jittered copies of the data
    mean (deterministic from the seed).
    """
    x = zm.matrix()
    p, l = x.shape
    if p >= n:
        return init_endmembers(zm, n)
    b0, _ = init_endmembers(zm, p)
    rng = np.random.default_rng(seed)
    mean = x.mean(axis=1)
    extra = np.abs(mean[:, None]
                   * (1.0 + 0.25 * rng.standard_normal((p, n - p))))
    b0 = np.column_stack([b0, extra])
    s0 = project_columns_to_simplex(np.linalg.lstsq(b0, x, rcond=None)[0])
    return b0, np.maximum(s0, 1e-9)


def cmd_unmix(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    zm = read_cube(args.msi)
    cfg = _prime_config_from_args(args)
    t0 = time.perf_counter()

    if args.method == "prime":
        params0 = load_params(args.params_in) if args.params_in else None
        result = prime(zm, cfg, params0=params0)
        b_est, s_est = result.b, result.s
        diag = result.diagnostics
    elif args.method == "vca":
        b_est = vca(zm, cfg.n, seed=cfg.seed)
        s_est = abundance_pinv(b_est, zm)
        diag = [{"iter": 0, "note": "vertex picking is single-shot"}]
    elif args.method == "nmf":
        init = _nmf_warm_start(zm, cfg.n, cfg.seed)
        b_est, s_est, trace = nmf_mu(zm, cfg.n, init=init, iters=cfg.nmf_iters)
        diag = [{"iter": k, "objective": float(v)} for k, v in enumerate(trace)]
    else:
        print(f"error: unknown method '{args.method}'", file=sys.stderr)
        return 2
    elapsed = time.perf_counter() - t0

    write_matrix_csv(outdir / "best.csv", b_est)
    write_cube(outdir / "sest", ImageCube(
        s_est.reshape(cfg.n, zm.height, zm.width)))
    _write_diag_csv(outdir / "diagnostics.csv", diag)
    for j in range(cfg.n):
        write_pgm(outdir / f"abundance_{j + 1}.pgm",
                  s_est[j].reshape(zm.height, zm.width))
    if args.method == "prime":
        save_diagnostics_figure(diag, outdir / "diagnostics.png")
        if args.params_out:
            ppath = Path(args.params_out)
            ppath.parent.mkdir(parents=True, exist_ok=True)
            save_params(result.params, ppath)
    _write_run_record(outdir, "unmix", args,
                      extra={"elapsed_sec": elapsed, "method": args.method,
                             "config": asdict(cfg)})
    print(f"{args.method}: unmixed {zm.bands}x{zm.height}x{zm.width} cube "
          f"into {cfg.n} sources in {elapsed:.2f}s -> {outdir}")
    return 0


def _read_estimate(d: Path):
    if (d / "best.csv").exists():
        b = read_matrix_csv(d / "best.csv")
        s_cube = read_cube(d / "sest")
    elif (d / "bgt.csv").exists():
        b = read_matrix_csv(d / "bgt.csv")
        s_cube = read_cube(d / "sgt")
    else:
        raise UnmixError(f"no estimate artifacts (best.csv/bgt.csv) in {d}")
    run = {}
    if (d / "run.json").exists():
        run = json.loads((d / "run.json").read_text())
    return b, s_cube, run


def cmd_eval(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    gt_dir = Path(args.gt)
    b_gt = read_matrix_csv(gt_dir / "bgt.csv")
    s_gt = read_cube(gt_dir / "sgt").matrix()
    rows = []
    for est in args.est:
        est_dir = Path(est)
        b_est, s_cube, run = _read_estimate(est_dir)
        if b_est.shape != b_gt.shape:
            print(f"error: estimate {est_dir} has shape {b_est.shape}, "
                  f"GT is {b_gt.shape}", file=sys.stderr)
            return 2
        s_est = s_cube.matrix()
        method = run.get("method", est_dir.name)
        perm = match_endmembers(b_est, b_gt)
        b_m = b_est[:, perm]
        s_m = s_est[perm, :]
        rows.append({
            "method": method,
            "sam_deg": sam(b_m, b_gt),
            "rmse": rmse(s_m, s_gt),
            "time_sec": float(run.get("elapsed_sec", float("nan"))),
            "seed": run.get("flags", {}).get("seed", -1),
        })
        sig = np.column_stack([np.arange(1, b_gt.shape[0] + 1), b_gt, b_m])
        header = (["band"] + [f"gt{j + 1}" for j in range(b_gt.shape[1])]
                  + [f"est{j + 1}" for j in range(b_gt.shape[1])])
        with open(outdir / f"signatures_{method}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in sig:
                writer.writerow([f"{v:.17g}" for v in r])
        save_signature_figure(b_gt, b_m, method,
                              outdir / f"signatures_{method}.png")
        save_abundance_figure(s_m, s_cube.height, s_cube.width, method,
                              outdir / f"abundances_{method}.png")
    with open(outdir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "sam_deg", "rmse", "time_sec", "seed"])
        for row in rows:
            writer.writerow([row["method"], f"{row['sam_deg']:.17g}",
                             f"{row['rmse']:.17g}", f"{row['time_sec']:.17g}",
                             row["seed"]])
    _write_run_record(outdir, "eval", args)
    for row in rows:
        print(f"{row['method']:>8}: SAM {row['sam_deg']:8.4f} deg | "
              f"RMSE {row['rmse']:.4f} | {row['time_sec']:.2f}s")
    return 0


def cmd_selftest(args) -> int:
    results = run_suites(args.filter)
    if not results:
        print(f"no suites match filter {args.filter!r}")
        return 2
    width = max(len(name) for name, _, _ in results)
    failed = 0
    for name, ok, msg in results:
        status = "PASS" if ok else "FAIL"
        line = f"{name:<{width}}  {status}"
        if msg:
            line += f"  {msg}"
        print(line)
        failed += 0 if ok else 1
    print(f"{len(results) - failed}/{len(results)} suites passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prime-unmix",
        description="Underdetermined multispectral unmixing via a virtual "
                    "light-splitting prism and convex-geometry endmember "
                    "extraction.")
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="synthesize protocol ground truth")
    ps.add_argument("--h", type=int, required=True, help="image height")
    ps.add_argument("--w", type=int, required=True, help="image width")
    ps.add_argument("--m", type=int, required=True, help="reference band count")
    ps.add_argument("--n", type=int, required=True, help="source count")
    ps.add_argument("--gamma", type=int, default=2, help="band split factor")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_synth)

    pu = sub.add_parser("unmix", help="unmix an observed cube")
    pu.add_argument("--method", choices=("prime", "vca", "nmf"), required=True)
    pu.add_argument("--msi", required=True, help="observed cube basename")
    pu.add_argument("--n", type=int, help="source count")
    pu.add_argument("--seed", type=int, default=0)
    pu.add_argument("--out", required=True)
    pu.add_argument("--config", help="JSON config mirroring solver fields")
    pu.add_argument("--gamma", type=int)
    pu.add_argument("--p", type=float, help="init noise energy fraction")
    pu.add_argument("--lam", type=float, help="regularization weight")
    pu.add_argument("--alpha", type=float, help="spectral-TV weight")
    pu.add_argument("--outer", type=int, help="outer iterations")
    pu.add_argument("--epochs-first", dest="epochs_first", type=int)
    pu.add_argument("--epochs-rest", dest="epochs_rest", type=int)
    pu.add_argument("--lr", type=float)
    pu.add_argument("--eta", type=float, help="hyperplane compression")
    pu.add_argument("--r", type=float, help="purest-pixel ball radius")
    pu.add_argument("--nmf-iters", dest="nmf_iters", type=int)
    pu.add_argument("--no-hi", action="store_true",
                    help="random instead of heuristic initialization")
    pu.add_argument("--no-ss", action="store_true",
                    help="decode all bands directly (no spectrum shaping)")
    pu.add_argument("--no-cg", action="store_true",
                    help="factorization instead of convex geometry")
    pu.add_argument("--early-stop", action="store_true")
    pu.add_argument("--params-in", help="prism weight record to warm-start from")
    pu.add_argument("--params-out", help="where to persist prism weights")
    pu.set_defaults(func=cmd_unmix)

    pe = sub.add_parser("eval", help="score estimates against ground truth")
    pe.add_argument("--gt", required=True, help="directory from `synth`")
    pe.add_argument("--est", action="append", required=True,
                    help="method output directory (repeatable)")
    pe.add_argument("--out", required=True)
    pe.set_defaults(func=cmd_eval)

    pt = sub.add_parser("selftest", help="run built-in invariant suites")
    pt.add_argument("--filter", help="substring filter on suite names")
    pt.add_argument("--seed", type=int, default=0, help="unused; suites are pinned")
    pt.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UnmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
