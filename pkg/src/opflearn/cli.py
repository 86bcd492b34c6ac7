"""Command-line entry point.

Subcommands: generate, baseline, analyze, train, eval, pf-check.  Every run
writes a manifest with the effective options, the seed, output checksums and
a timestamp; the timestamp and timings appear nowhere else, so repeating an
invocation reproduces every other file byte for byte.

Exit status is 0 on success, 1 on a runtime failure (one line
``error: <category>: <message>`` on stderr) and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, mlbench
from . import polytope as poly
from .acopf import DEFAULT_ACTIVE_TOL
from .dataset import read_csv, unique_active_sets, write_csv
from .errors import AttemptBudgetExhausted, FingerprintMismatch, NoConvergence, OpfLearnError
from .netio import bundled_case, load_model
from .pipeline import RunConfig, create_dataset, typical_dataset
from .powerflow import setpoint_residual
from .relax import DEFAULT_PROJ_TOL

logger = logging.getLogger("opflearn")


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------

def _case_path(case: str) -> Path:
    p = Path(case)
    if p.exists():
        return p
    try:
        return bundled_case(case)
    except FileNotFoundError:
        raise UsageError(f"case file {case!r} not found") from None


def _seed(args) -> int:
    if args.seed is None:
        # auto-generated seeds still go to the manifest
        args.seed = int(np.random.SeedSequence().entropy % 2**32)
    return args.seed


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _options(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def write_manifest(path: Path, args, outputs, extra=None):
    doc = {
        "command": args.command,
        "options": _options(args),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "walk_kernel": poly.KERNEL,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": {str(p.name): _sha256(p) for p in outputs if p.exists()},
    }
    doc.update(extra or {})
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def _write_json(path: Path, doc) -> Path:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _max_load_mode(text: str):
    if text == "solve":
        return "solve", None
    if text.startswith("nominal:"):
        try:
            kappa = float(text.split(":", 1)[1])
        except ValueError:
            kappa = float("nan")
        if kappa > 0:
            return "nominal", kappa
    raise argparse.ArgumentTypeError("expected 'solve' or 'nominal:<kappa>' with kappa > 0")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _fraction(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def _write_certificates(path: Path, stats, dim: int):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attempt", "offset"] + [f"x_hat_{i}" for i in range(dim)]
                   + [f"x_star_{i}" for i in range(dim)] + [f"normal_{i}" for i in range(dim)])
        for c in stats.certificates:
            w.writerow([c.attempt, "%.17g" % c.offset] + ["%.17g" % v for v in
                                                          np.concatenate([c.x_hat, c.x_star, c.normal])])
    return path


def _finish_dataset(args, out: Path, ds, stats, extra_files=()):
    files = write_csv(ds, out)
    files.append(_write_json(out / "stats.json", stats.summary()))
    files.extend(extra_files)
    write_manifest(out / "manifest.json", args, files,
                   {"phase_times": {k: round(v, 3) for k, v in stats.phase_times.items()}})
    return files


# -- subcommands --------------------------------------------------------------

def cmd_generate(args):
    model = load_model(_case_path(args.case))
    mode, kappa = args.max_load_mode
    cfg = RunConfig(n_samples=args.n, seed=_seed(args), max_load_mode=mode, kappa=kappa or 2.0,
                    proj_tol=args.proj_tol, active_tol=args.active_tol, max_attempts=args.max_attempts,
                    thin=args.thin, burn_in=args.burn_in, workers=args.workers)
    out = Path(args.out)
    try:
        ds, stats = create_dataset(model, cfg)
    except AttemptBudgetExhausted as e:
        if e.dataset is not None:
            _finish_dataset(args, out, e.dataset, e.stats)
        raise
    out.mkdir(parents=True, exist_ok=True)
    cert = _write_certificates(out / "certificates.csv", stats, 2 * model.n_load)
    _finish_dataset(args, out, ds, stats, [cert])
    print(json.dumps({"records": len(ds), **stats.summary()}, sort_keys=True))


def cmd_baseline(args):
    model = load_model(_case_path(args.case))
    out = Path(args.out)
    try:
        ds, stats = typical_dataset(model, args.n, width=args.width, seed=_seed(args),
                                    max_attempts=args.max_attempts, literal_p0=args.literal_p0,
                                    workers=args.workers, active_tol=args.active_tol)
    except AttemptBudgetExhausted as e:
        if e.dataset is not None:
            _finish_dataset(args, out, e.dataset, e.stats)
        raise
    _finish_dataset(args, out, ds, stats)
    print(json.dumps({"records": len(ds), **stats.summary()}, sort_keys=True))


def cmd_analyze(args):
    ds = read_csv(args.data)
    count, curve = unique_active_sets(ds, args.active_tol)
    out = Path(args.out) if args.out else Path(args.data) / "growth.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["records", "unique_active_sets"])
        for i, k in enumerate(curve):
            w.writerow([i + 1, k])
    write_manifest(out.with_suffix(".manifest.json"), args, [out])
    print(json.dumps({"records": len(ds), "unique_active_sets": count}, sort_keys=True))


def _train_config(args) -> mlbench.TrainConfig:
    return mlbench.TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed)


def _dataset_name(ds, path) -> str:
    return str(ds.metadata.get("method") or Path(path).name)


def cmd_train(args):
    ds = read_csv(args.data)
    name = args.name or _dataset_name(ds, args.data)
    cfg = _train_config(args)
    train_set, _ = mlbench.split(ds, args.train_fraction, args.split_seed)
    targets = mlbench.TARGETS if args.target == "both" else (mlbench._target(args.target),)
    out = Path(args.out)
    files = []
    for t in targets:
        model, norm = mlbench.train(train_set, t, cfg)
        meta = {"train_name": name, "target": t, "fingerprint": ds.fingerprint,
                "train_fraction": args.train_fraction, "split_seed": args.split_seed,
                "train_config": asdict(cfg), "n_train": len(train_set)}
        files.append(mlbench.save_checkpoint(out / f"{name}_{t.lower()}.json", model, norm, meta))
        logger.info("%s %s: final loss %.3e", name, t, model.loss_history[-1])
    write_manifest(out / f"{name}.manifest.json", args, files)
    print(json.dumps({"models": [str(p) for p in files]}))


def _named_paths(items):
    out = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"expected NAME=PATH, got {item!r}")
        out[name] = path
    return out


def cmd_eval(args):
    datasets = {name: read_csv(p) for name, p in _named_paths(args.data).items()}
    mlbench.check_same_network(datasets)
    models, fractions = {}, set()
    for p in args.models:
        model, norm, meta = mlbench.load_checkpoint(p)
        if meta.get("fingerprint") and meta["fingerprint"] != next(iter(datasets.values())).fingerprint:
            raise FingerprintMismatch(f"model {p} was trained on another network")
        models[(meta.get("train_name"), meta.get("target"))] = (model, norm)
        fractions.add((meta.get("train_fraction", 0.8), meta.get("split_seed", 0)))
    if len(fractions) != 1:
        raise UsageError("models were trained with different splits")
    missing = [(n, t) for n in datasets for t in mlbench.TARGETS if (n, t) not in models]
    if missing:
        raise UsageError(f"no model for {missing}")
    frac, split_seed = fractions.pop()
    report = mlbench.cross_experiment(models, datasets, train_fraction=frac, split_seed=split_seed)
    report.metadata["train_config"] = meta.get("train_config")
    out = report.write_csv(args.out)
    write_manifest(Path(args.out).with_suffix(".manifest.json"), args, [out, out.with_suffix(".json")])
    for r in report.rows:
        print(f"{r['target']:3s} train={r['train']:10s} test={r['test']:10s} "
              f"mse={r['mse']:.3e} max_err={r['max_sample_error']:.3e}")


def cmd_pf_check(args):
    model = load_model(_case_path(args.case))
    ds = read_csv(args.data)
    if ds.fingerprint and ds.fingerprint != model.fingerprint:
        raise FingerprintMismatch(f"dataset {ds.fingerprint} does not belong to {model.fingerprint}")
    G = model.n_gen
    out = Path(args.out) if args.out else Path(args.data) / "pf_check.csv"
    worst, bad = 0.0, []
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "residual", "status"])
        for i, rec in enumerate(ds.records):
            try:
                _, res = setpoint_residual(model, rec.x, rec.y[:G], rec.y[G:])
                status = "ok" if res <= args.tol else "residual"
            except NoConvergence:
                res, status = float("inf"), "no-convergence"
            worst = max(worst, res)
            if status != "ok":
                bad.append(i)
            w.writerow([i, "%.6e" % res, status])
    write_manifest(out.with_suffix(".manifest.json"), args, [out])
    print(json.dumps({"records": len(ds), "failed": len(bad), "max_residual": worst}, sort_keys=True))
    if bad:
        raise NoConvergence(f"{len(bad)} of {len(ds)} records fail the power-flow check (first {bad[0]})")


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opflearn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common_gen(sp):
        sp.add_argument("--case", required=True, help="MATPOWER file or bundled name (case5, case14)")
        sp.add_argument("--n", type=_nonneg_int, required=True, help="number of AC-feasible records")
        sp.add_argument("--seed", type=_nonneg_int, default=None)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--max-attempts", type=_nonneg_int, default=None)
        sp.add_argument("--active-tol", type=_positive_float, default=DEFAULT_ACTIVE_TOL)
        sp.add_argument("--workers", type=_positive_int, default=1)

    g = sub.add_parser("generate", help="polytope-sampled dataset with infeasibility certificates")
    common_gen(g)
    g.add_argument("--max-load-mode", type=_max_load_mode, default=("solve", None),
                   help="'solve' (relaxed maximum loads) or 'nominal:<kappa>'")
    g.add_argument("--proj-tol", type=_positive_float, default=DEFAULT_PROJ_TOL)
    g.add_argument("--thin", type=_positive_int, default=None)
    g.add_argument("--burn-in", type=_nonneg_int, default=None)
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("baseline", help="uniform loads around the nominal profile")
    common_gen(b)
    b.add_argument("--width", type=_fraction, default=0.2)
    b.add_argument("--literal-p0", action="store_true", help="use active nominal load for reactive bounds too")
    b.set_defaults(func=cmd_baseline)

    a = sub.add_parser("analyze", help="unique active sets and their growth curve")
    a.add_argument("--data", required=True)
    a.add_argument("--out", default=None, help="growth-curve CSV (default DATA/growth.csv)")
    a.add_argument("--active-tol", type=_positive_float, default=None)
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("train", help="train benchmark MLPs on one dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--target", choices=["Pg", "Vg", "pg", "vg", "both"], default="both")
    t.add_argument("--name", default=None, help="dataset name (default: its method)")
    t.add_argument("--train-fraction", type=_fraction, default=0.8)
    t.add_argument("--split-seed", type=_nonneg_int, default=0)
    t.add_argument("--lr", type=_positive_float, default=mlbench.TrainConfig.lr)
    t.add_argument("--batch-size", type=_positive_int, default=mlbench.TrainConfig.batch_size)
    t.add_argument("--epochs", type=_positive_int, default=mlbench.TrainConfig.epochs)
    t.add_argument("--seed", type=_nonneg_int, default=mlbench.TrainConfig.seed)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="test every model on every dataset's held-out split")
    e.add_argument("--models", nargs="+", required=True, help="checkpoint files")
    e.add_argument("--data", nargs="+", required=True, metavar="NAME=DIR")
    e.add_argument("--out", required=True, help="report CSV")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("pf-check", help="recover voltages from each record and check its set-points")
    c.add_argument("--data", required=True)
    c.add_argument("--case", required=True)
    c.add_argument("--tol", type=_positive_float, default=1e-6)
    c.add_argument("--out", default=None, help="per-record CSV (default DATA/pf_check.csv)")
    c.set_defaults(func=cmd_pf_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"error: usage: {e}", file=sys.stderr)
        return 2
    except OpfLearnError as e:
        print(f"error: {e.category}: {' '.join(str(e).split())}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: io: {' '.join(str(e).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
