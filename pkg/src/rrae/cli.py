"""Command-line front end: ``rrae {generate,train,eval,spectrum,interp-set,report}``.

Every command works inside one output directory::

    OUT/config.yaml        validated config snapshot
    OUT/data/              train.csv, test.csv, dataset.json
    OUT/model.npz          trained parameters + finalized basis
    OUT/train_log.csv      batch, stage, lr, loss, wall_ms
    OUT/eval.csv, spectrum.csv, interp_set.csv, *.svg
    OUT/manifest.json      config, version, seeds, host, sha256 of every file

Exit codes: 0 success, 2 invalid config/arguments, 3 training diverged,
4 checkpoint version mismatch, 5 missing input artifacts.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__, data, evaluate, models, plotting
from .config import dump_config, load_config
from .train import TrainingDivergedError, train_best

log = logging.getLogger("rrae")

EXIT_CONFIG, EXIT_DIVERGED, EXIT_VERSION, EXIT_MISSING = 2, 3, 4, 5
# files whose bytes legitimately change between identical runs (wall-clock content)
VOLATILE = ("manifest.json", "train_log.csv")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# manifest


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def inventory(out):
    out = Path(out)
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"
                   and not p.name.endswith(".tmp"))
    return {p.relative_to(out).as_posix(): sha256(p) for p in files}


def host_info(threads):
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
        "threads": threads,
    }


def write_manifest(out, record):
    """Append ``record`` to the run history and rewrite the manifest atomically."""
    out = Path(out)
    path = out / "manifest.json"
    history = []
    if path.exists():
        try:
            history = json.loads(path.read_text()).get("history", [])
        except (json.JSONDecodeError, AttributeError):
            history = []
    history.append(record)
    manifest = {
        "version": __version__,
        "history": history,
        "volatile": [v for v in VOLATILE if v != "manifest.json"],
        "outputs": inventory(out),
    }
    tmp = path.with_name("manifest.json.tmp")
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    tmp.replace(path)
    return path


# ---------------------------------------------------------------------------
# helpers


def resolve_config(args):
    """Return (config, output dir).

    --config wins; otherwise the snapshot already in the output directory;
    otherwise built-in defaults.  --seed overrides the training seed.
    """
    overrides = {"train.seed": args.seed} if args.seed is not None else {}
    cfg = load_config(args.config, overrides)
    out = Path(args.out) if args.out is not None else Path(cfg.output)
    if args.config is None and (out / "config.yaml").exists():
        cfg = load_config(out / "config.yaml", overrides)
    return cfg, out


def need(path, what):
    if not Path(path).exists():
        raise CliError(f"missing {what}: {path} (run the earlier command first)", EXIT_MISSING)
    return path


def load_model(out):
    path = need(out / "model.npz", "checkpoint")
    try:
        state, norm, fac = models.load_checkpoint(path)
    except models.VersionMismatchError as exc:
        raise CliError(f"refusing {path}: {exc}", EXIT_VERSION) from exc
    return state, norm, fac


def load_data(out):
    return data.load_dataset(need(out / "data", "dataset"))


def write_matrix(path, header, X):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.asarray(X):
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# commands; each returns (message, seeds dict)


def cmd_generate(cfg, out, args):
    ds = data.make_dataset(cfg.data_config())
    data.save_dataset(ds, out / "data")
    msg = (f"wrote {ds.X.shape[1]} train / {ds.X_test.shape[1]} test columns "
           f"of length {ds.T} to {out / 'data'}")
    return msg, {"data": list(ds.params.seeds)}


def cmd_train(cfg, out, args):
    ds = load_data(out)
    if ds.T != cfg.data.T:
        raise CliError(f"dataset has T={ds.T} but config says T={cfg.data.T}", EXIT_CONFIG)
    tcfg = cfg.train_config()
    tcfg.checkpoint_dir = str(out / "checkpoints")
    try:
        state, tlog, fac, errors = train_best(ds, tcfg)
    except TrainingDivergedError as exc:
        if exc.last_good is not None:
            models.save_checkpoint(out / "diverged.npz", exc.last_good, ds.norm)
        if exc.log is not None:
            exc.log.to_csv(out / "train_log.csv")
        raise CliError(f"{exc}; last finite state kept in {out / 'diverged.npz'}",
                       EXIT_DIVERGED) from exc
    state.meta["restart_errors"] = errors
    models.save_checkpoint(out / "model.npz", state, ds.norm, fac)
    tlog.to_csv(out / "train_log.csv")
    best = errors.index(min(errors))
    msg = (f"final train error: {errors[best]!r} % (global) | "
           f"time per 100 batches: {tlog.per_100_batches():.3f} s | "
           f"{tlog.n_batches} batches, seed {tcfg.seed + best}")
    seeds = {"train": [tcfg.seed + r for r in range(tcfg.restarts)], "selected": tcfg.seed + best}
    return msg, seeds


def cmd_eval(cfg, out, args):
    state, _, fac = load_model(out)
    ds = load_data(out)
    rep = evaluate.evaluate(state, fac, ds, cfg.eval.tau, cfg.eval.error_metric)
    rep.to_csv(out / "eval.csv")
    pred = evaluate.predict(state, fac, ds, ds.params.test)
    plotting.predictions_figure(ds.t, ds.X_test, pred, out / "predictions.svg")
    plotting.coefficients_figure(ds.params.train, fac.A, out / "coefficients.svg")
    msg = (f"train error {rep.train_error!r} % | test error {rep.test_error!r} % "
           f"({rep.metric}) | rank {rep.rank}")
    return msg, {}


def cmd_spectrum(cfg, out, args):
    state, _, fac = load_model(out)
    ds = load_data(out)
    Y = models.encode(state, ds.Xn).value
    Z = models.decoder_input(state, Y)
    Z = getattr(Z, "value", Z)
    sv = evaluate.spectrum(Z)
    with open(out / "spectrum.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "sigma_over_sigma1"])
        for i, v in enumerate(sv, start=1):
            w.writerow([i, repr(float(v))])
    plotting.spectrum_figure(sv, out / "spectrum.svg", cfg.eval.tau)
    rank = evaluate.numerical_rank(Z, cfg.eval.tau)
    return f"numerical rank {rank} (tau={cfg.eval.tau:g}); {len(sv)} singular values", {}


def cmd_interp_set(cfg, out, args):
    state, norm, fac = load_model(out)
    pairs = args.pairs if args.pairs is not None else cfg.eval.pairs
    steps = args.steps if args.steps is not None else cfg.eval.steps
    seed = args.seed if args.seed is not None else cfg.eval.seed
    cols, chosen = evaluate.interpolation_set(state, fac, norm, pairs, steps, seed)
    _, wb = evaluate.interpolation_weights(steps)
    header = [f"{a}-{b}@{w:.6f}" for a, b in chosen for w in wb]
    write_matrix(out / "interp_set.csv", header, cols)
    return f"wrote {cols.shape[1]} generated columns to {out / 'interp_set.csv'}", {"interp": seed}


def cmd_report(cfg, out, args):
    rows = []
    for run in args.runs:
        run = Path(run)
        summ = evaluate.read_summary(need(run / "eval.csv", "eval output"))
        snap = load_config(need(run / "config.yaml", "config snapshot"))
        timing = float("nan")
        if (run / "train_log.csv").exists():
            with open(run / "train_log.csv", newline="") as fh:
                ms = [float(r["wall_ms"]) for r in csv.DictReader(fh)]
            if len(ms) >= 110:
                timing = sum(ms[10:110]) / 1000
        rows.append({
            "run": run.name, "family": snap.family, "variant": snap.model.variant,
            "train_error": summ["train_error"], "test_error": summ["test_error"],
            "metric": summ.get("metric", ""), "rank": int(summ["rank"]),
            "seconds_per_100_batches": timing,
        })
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    plotting.report_figure([r["run"] for r in rows], [r["train_error"] for r in rows],
                           [r["test_error"] for r in rows], out / "report.svg")
    return f"compared {len(rows)} runs in {out / 'report.csv'}", {}


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "spectrum": cmd_spectrum,
    "interp-set": cmd_interp_set,
    "report": cmd_report,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config")
    common.add_argument("--out", type=Path, help="output directory (default: config 'output')")
    common.add_argument("--seed", type=int, help="override the training / sampling seed")
    common.add_argument("--dry-run", action="store_true", help="validate and exit without writing")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    parser = argparse.ArgumentParser(prog="rrae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rrae {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "interp-set":
            p.add_argument("--pairs", type=int)
            p.add_argument("--steps", type=int)
        if name == "report":
            p.add_argument("runs", nargs="+", help="run directories holding eval.csv")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("RRAE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except CliError as exc:
        print(f"rrae {args.command}: error: {exc}", file=sys.stderr)
        return exc.code


def run(args):
    if args.threads < 1:
        raise CliError("--threads must be >= 1", EXIT_CONFIG)
    try:
        cfg, out = resolve_config(args)
    except (ValueError, OSError, yaml.YAMLError) as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_CONFIG) from exc
    if args.dry_run:
        print(f"config OK ({cfg.family}/{cfg.model.variant}); dry run, nothing written")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    if args.command in ("generate", "train"):
        dump_config(cfg, out / "config.yaml")
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    with threadpool_limits(limits=args.threads):
        try:
            msg, seeds = COMMANDS[args.command](cfg, out, args)
        except models.ConfigurationError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from exc
    write_manifest(out, {
        "command": args.command,
        "config": cfg.model_dump(mode="json"),
        "seeds": seeds,
        "started": started,
        "wall_clock_s": round(time.perf_counter() - t0, 3),
        "host": host_info(args.threads),
    })
    print(msg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
