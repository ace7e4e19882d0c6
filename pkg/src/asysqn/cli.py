"""Command-line harness: ``asysqn gen|run|bench|diag``.

Exit codes: 0 success, 2 usage or input error, 3 divergence.

Options may also come from ``--config FILE`` holding ``key = value`` lines
(keys are the long option names, dashes or underscores); command-line flags
win over the file, which wins over built-in defaults.  ``ASYSQN_OUTPUT_DIR``
sets where outputs go when ``-o`` is omitted.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from .data import Dataset, gen_sim1, gen_sim2, read_libsvm, row_normalize, write_libsvm
from .diagnostics import estimate_mu_l, theory_report
from .engine import (ALGOS, DivergenceError, RunConfig, RunTrace, compute_reference_optimum,
                     grid_search_eta, run)
from .model import LossModel

OUTPUT_DIR_ENV = "ASYSQN_OUTPUT_DIR"
TRACE_COLUMNS = ["algo", "threads", "epoch", "datapasses", "wall_ms", "objective", "gap",
                 "grad_norm", "max_staleness"]
BENCH_COLUMNS = ["threads", "wall_ms", "speedup"]

log = logging.getLogger("asysqn")


class UsageError(Exception):
    pass


def _fmt(v: float) -> str:
    return repr(float(v))


def _output_path(arg: str | None, default_name: str) -> Path | None:
    if arg:
        return Path(arg)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env) / default_name
    return None


def _open_out(path: Path | None):
    if path is None:
        return sys.stdout
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


def read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


# -- data + model helpers --------------------------------------------------


def load_dataset(args) -> Dataset:
    try:
        data = read_libsvm(args.data, d=getattr(args, "dim", None), labels=args.labels)
    except OSError as exc:
        raise UsageError(f"cannot read {args.data}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise UsageError(f"{args.data}: {exc}") from None
    if getattr(args, "normalize", False):
        data = row_normalize(data)
    if data.is_sparse and data.d <= 1000 and data.rows.nnz > 0.25 * data.n * data.d:
        data = Dataset(data.rows.toarray(), data.labels)
    return data


def _fstar_key(data: Dataset, model: LossModel) -> str:
    return f"{data.content_hash()}:{model.kind.value}:{model.lam!r}"


def reference_value(args, data: Dataset, model: LossModel) -> float:
    """``f*`` from the cache beside the dataset, computing it on a miss."""
    cache = Path(str(args.data) + ".fstar.json")
    key = _fstar_key(data, model)
    if args.fstar == "cache" and cache.exists():
        try:
            entries = json.loads(cache.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            entries = {}
        if key in entries:
            return float(entries[key])
    else:
        entries = {}
    f_star = compute_reference_optimum(model, data)[0]
    if args.fstar == "cache":
        entries[key] = f_star
        try:
            cache.write_text(json.dumps(entries, indent=1, sort_keys=True), encoding="utf-8")
        except OSError as exc:
            log.warning("could not write f* cache %s: %s", cache, exc)
    return f_star


def config_from_args(args, **overrides) -> RunConfig:
    cfg = RunConfig(
        eta=args.eta if args.eta is not None else 0.0,
        b=args.b, b_h=args.bh, M=args.M, L=args.L, P=args.P, epochs=args.epochs,
        snapshot_period=args.m, y_option=args.y_option, x_k_mode=args.xk_mode,
        warm_start_epochs=args.warm_start, seed=args.seed, target_gap=args.target_gap,
        max_datapasses=args.max_datapasses, init=args.init, decay=args.decay)
    cfg = dataclasses.replace(cfg, **overrides)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def pick_eta(algo: str, cfg: RunConfig, model, data, f_star) -> float:
    if cfg.eta > 0:
        return cfg.eta
    eta, _ = grid_search_eta(algo, cfg, model, data, f_star)
    print(f"grid-searched eta = {eta!r}", file=sys.stderr)
    return eta


def write_trace_csv(out, traces: list[RunTrace], header: dict[str, object]) -> None:
    for k, v in header.items():
        out.write(f"# {k} = {v}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for tr in traces:
        for r in tr.records:
            w.writerow([tr.algo, tr.threads, r.epoch, _fmt(r.datapasses), f"{r.wall_ms:.3f}",
                        _fmt(r.objective), _fmt(r.gap), _fmt(r.grad_norm), r.max_staleness])


# -- subcommands -----------------------------------------------------------


def cmd_gen(args) -> int:
    try:
        if args.generator == "sim1":
            data = gen_sim1(args.n, args.a, args.b, seed=args.seed)
            name = f"sim1_n{args.n}_a{args.a:g}_b{args.b:g}_s{args.seed}.svm"
        else:
            data = gen_sim2(args.n, args.d, args.cond, seed=args.seed)
            name = f"sim2_n{args.n}_d{args.d}_c{args.cond:g}_s{args.seed}.svm"
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    path = _output_path(args.output, name) or Path(name)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        write_libsvm(data, fh)
    mu, l = estimate_mu_l(LossModel.from_name("ls"), data)
    print(f"wrote {path}")
    print(f"n = {data.n}")
    print(f"d = {data.d}")
    print(f"condition number = {l / mu if mu > 0 else math.inf:.6g}")
    return 0


def _run_header(algo: str, cfg: RunConfig, data: Dataset, model: LossModel, f_star: float,
                data_path) -> dict[str, object]:
    header: dict[str, object] = {"asysqn": __version__, "algo": algo, "data": data_path,
                                 "data_hash": data.content_hash(), "n": data.n, "d": data.d,
                                 "model": model.kind.value, "lambda": repr(model.lam)}
    header.update({f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)})
    header["f_star"] = repr(f_star)
    return header


def cmd_run(args) -> int:
    data = load_dataset(args)
    model = LossModel.from_name(args.model, args.lam)
    f_star = reference_value(args, data, model)
    cfg = config_from_args(args)
    cfg = dataclasses.replace(cfg, eta=pick_eta(args.algo, cfg, model, data, f_star))
    trace = run(args.algo, cfg, model, data, f_star=f_star)
    path = _output_path(args.output, f"trace_{args.algo}_P{cfg.P}.csv")
    out = _open_out(path)
    try:
        write_trace_csv(out, [trace], _run_header(args.algo, cfg, data, model, f_star, args.data))
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def parse_sweep(text: str) -> list[int]:
    try:
        sweep = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad thread list {text!r}") from None
    if not sweep or min(sweep) < 1:
        raise UsageError("thread list must be nonempty positive integers")
    if 1 not in sweep:
        raise UsageError("thread list must include 1 (the speedup baseline)")
    return sweep


def bench_rows(args, data: Dataset, model: LossModel, f_star: float,
               sweep: list[int]) -> list[tuple[int, float | None]]:
    """Wall time to target gap for each thread count (``None`` = did not finish).

    Work per epoch is held fixed: at ``P`` threads each worker runs
    ``max(1, L // P)`` iterations.
    """
    base = config_from_args(args, P=1, target_gap=args.target_gap)
    eta = pick_eta(args.algo, dataclasses.replace(base, target_gap=None), model, data, f_star)
    results = []
    for P in sweep:
        cfg = dataclasses.replace(base, eta=eta, P=P, L=max(1, args.L // P),
                                  snapshot_period=base.snapshot_period)
        try:
            tr = run(args.algo, cfg, model, data, f_star=f_star)
        except DivergenceError:
            results.append((P, None))
            continue
        results.append((P, tr.final.wall_ms if tr.reached(args.target_gap) else None))
    return results


def cmd_bench(args) -> int:
    sweep = parse_sweep(args.threads)
    data = load_dataset(args)
    model = LossModel.from_name(args.model, args.lam)
    f_star = reference_value(args, data, model)
    rows = bench_rows(args, data, model, f_star, sweep)
    base = dict(rows).get(1)
    path = _output_path(args.output, f"bench_{args.algo}.csv")
    out = _open_out(path)
    try:
        out.write(f"# algo = {args.algo}\n# data = {args.data}\n# target_gap = {args.target_gap}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for P, wall in rows:
            if wall is None:
                w.writerow([P, "DNF", "DNF"])
            elif P == 1:
                w.writerow([P, f"{wall:.3f}", "1.0"])
            else:
                speed = base / wall if base is not None else math.nan
                w.writerow([P, f"{wall:.3f}", f"{speed:.4f}"])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_diag(args) -> int:
    data = load_dataset(args)
    model = LossModel.from_name(args.model, args.lam)
    if not model.smooth:
        print("diagnostics unavailable for nonsmooth loss", file=sys.stderr)
        return 2
    print(theory_report(model, data, M=args.M, m=args.m, tau=args.tau, eta=args.eta), end="")
    return 0


# -- parser ----------------------------------------------------------------


def _add_data_args(p):
    p.add_argument("--data", required=True, help="LibSVM-format dataset file")
    p.add_argument("--model", default="ls", choices=["ls", "logistic", "hinge"])
    p.add_argument("--lam", type=float, default=None,
                   help="L2 weight (default 0 for ls, 1e-3 otherwise)")
    p.add_argument("--labels", choices=["zero-neg", "parity"], default=None,
                   help="binarise labels: 0 -> -1, or even/odd digit classes")
    p.add_argument("--dim", type=int, default=None, help="override feature dimension")
    p.add_argument("--normalize", action="store_true", help="scale rows to unit norm")


def _add_run_args(p, epochs_default=50):
    p.add_argument("--algo", default="asysqn", choices=list(ALGOS))
    p.add_argument("--b", type=int, default=10, help="gradient minibatch size")
    p.add_argument("--bh", type=int, default=None, help="Hessian subsample size (default 10 b)")
    p.add_argument("--M", type=int, default=10, help="L-BFGS memory")
    p.add_argument("--L", type=int, default=50, help="iterations per worker per epoch")
    p.add_argument("--P", type=int, default=1, help="worker threads")
    p.add_argument("--eta", type=float, default=None, help="step size (grid-searched if omitted)")
    p.add_argument("--epochs", type=int, default=epochs_default)
    p.add_argument("--m", type=int, default=None, help="anchor refresh period in epochs")
    p.add_argument("--y-option", choices=["I", "II"], default=None)
    p.add_argument("--xk-mode", choices=["average", "latest"], default="average")
    p.add_argument("--warm-start", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-gap", type=float, default=None)
    p.add_argument("--max-datapasses", type=float, default=None)
    p.add_argument("--init", choices=["zeros", "random"], default="zeros")
    p.add_argument("--decay", type=float, default=0.0)
    p.add_argument("--fstar", choices=["compute", "cache"], default="cache")
    p.add_argument("-o", "--output", default=None)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="asysqn", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs: dict[str, argparse.ArgumentParser] = {}

    gen = sub.add_parser("gen", help="write a synthetic dataset in LibSVM format")
    gsub = gen.add_subparsers(dest="generator", required=True)
    g1 = gsub.add_parser("sim1", help="two uniform features, y = a z1 + b z2 + noise")
    g1.add_argument("--n", type=int, required=True)
    g1.add_argument("--a", type=float, default=1.0)
    g1.add_argument("--b", type=float, default=1.0)
    g2 = gsub.add_parser("sim2", help="d features with geometric column scaling")
    g2.add_argument("--n", type=int, required=True)
    g2.add_argument("--d", type=int, default=20)
    g2.add_argument("--cond", type=float, default=1e3)
    for g in (g1, g2):
        g.add_argument("--seed", type=int, default=0)
        g.add_argument("-o", "--output", default=None)
        g.add_argument("--config", default=None)
    subs["gen sim1"], subs["gen sim2"] = g1, g2

    p_run = sub.add_parser("run", help="run one optimiser and write its epoch trace as CSV")
    _add_data_args(p_run)
    _add_run_args(p_run)
    p_run.add_argument("--config", default=None)
    subs["run"] = p_run

    p_bench = sub.add_parser("bench", help="wall-clock speedup sweep over thread counts")
    _add_data_args(p_bench)
    _add_run_args(p_bench, epochs_default=200)
    p_bench.set_defaults(target_gap=1e-10)
    p_bench.add_argument("--threads", default="1,2,4,8", help="comma-separated thread counts")
    p_bench.add_argument("--config", default=None)
    subs["bench"] = p_bench

    p_diag = sub.add_parser("diag", help="print theoretical constants and bounds")
    _add_data_args(p_diag)
    p_diag.add_argument("--M", type=int, default=10)
    p_diag.add_argument("--m", type=int, default=100, help="epoch length")
    p_diag.add_argument("--tau", type=int, default=1, help="delay bound")
    p_diag.add_argument("--eta", type=float, default=None)
    p_diag.add_argument("--config", default=None)
    subs["diag"] = p_diag
    return parser, subs


def parse_args(argv=None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        key = "gen " + args.generator if args.command == "gen" else args.command
        sp = subs[key]
        try:
            values = read_config_file(args.config)
        except OSError as exc:
            parser.error(f"cannot read config {args.config}: {exc.strerror}")
        except UsageError as exc:
            parser.error(str(exc))
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        for action in sp._actions:
            if action.dest in values and action.nargs == 0:
                values[action.dest] = values[action.dest].lower() in ("1", "true", "yes", "on")
        sp.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "bench": cmd_bench, "diag": cmd_diag}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors, --help, --version
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"asysqn: error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"asysqn: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
