"""Command-line benchmark harness.

Subcommands: gen | train | train-aver | train-hyper | eval | sweep | params.
Every command is deterministic given --seed.  Exit codes: 0 on success, 2 on
usage errors, 1 on runtime failures.  Flags override values from an optional
--config file (plain key=value lines, '#' comments), which in turn overrides
the built-in defaults.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .datasets import generate_dataset
from .estimators import (
    HyperListaEstimator,
    IstaEstimator,
    ListaEstimator,
    OmpEstimator,
    ZeroEstimator,
)
from .fileio import (
    FileFormatError,
    read_checkpoint,
    read_dataset,
    write_checkpoint,
    write_dataset,
)
from .hyper import ConditionBounds, train_aver, train_hyper
from .measurement import to_db
from .network import NetConfig, init_params
from .training import TrainConfig, TrainingDiverged, train

CSV_HEADER = "estimator,snr_db,L,layers,nmse_db,samples,seed"
LISTA_REFERENCE_PARAMS = 1.65e5
ISTA_REFERENCE_PARAMS = 2
ESTIMATOR_CHOICES = ("lista", "lista-hyper", "ista", "omp", "zero")


class UsageError(Exception):
    pass


@dataclass
class ResultRow:
    estimator: str
    snr_db: float
    n_paths: int
    layers: int
    nmse_db: float
    samples: int
    seed: int

    def format(self) -> str:
        return (
            f"{self.estimator},{_fmt_snr(self.snr_db)},{self.n_paths},"
            f"{self.layers},{_fmt_db(self.nmse_db)},{self.samples},{self.seed}"
        )


def _fmt_snr(v: float) -> str:
    return f"{v:.6g}"


def _fmt_db(v: float) -> str:
    if v == float("-inf"):
        return "-inf"
    return f"{v:.6f}"


def _emit_rows(rows: list[ResultRow], csv_path: str | None):
    rows = sorted(rows, key=lambda r: (r.estimator, r.n_paths, r.snr_db, r.layers))
    lines = [CSV_HEADER] + [r.format() for r in rows]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if csv_path:
        with open(csv_path, "w", newline="\n") as fh:
            fh.write(text)


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(",") if v != "")
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from exc
    if not vals:
        raise UsageError("empty list")
    return vals


def _parse_pair(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise UsageError(f"expected LOW:HIGH, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise UsageError(f"expected numeric LOW:HIGH, got {text!r}") from exc
    if hi < lo:
        raise UsageError("range upper bound below lower bound")
    return lo, hi


def _parse_snr_grid(text: str) -> list[float]:
    """Either START:STOP:STEP or a comma-separated list."""
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise UsageError(f"expected START:STOP:STEP, got {text!r}")
            start, stop, step = (float(p) for p in parts)
            if step <= 0:
                raise UsageError("step must be positive")
            n_pts = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [start + i * step for i in range(n_pts)]
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise UsageError(f"bad SNR grid {text!r}") from exc


def _netcfg_from_args(args, n: int, m: int) -> NetConfig:
    return NetConfig(
        t_layers=args.layers,
        w1=args.w1,
        w2=args.w2,
        share_transforms=not args.per_layer,
        anchor_mode=args.anchor,
        n=n,
        m=m,
    )


def _load_config_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = val
    return values


def _apply_config(sub_parser: argparse.ArgumentParser, overrides: dict) -> set:
    """Install config values as subparser defaults, with flag-type conversion."""
    used = set()
    for action in sub_parser._actions:
        if action.dest in overrides:
            raw = overrides[action.dest]
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                value = raw.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                try:
                    value = action.type(raw)
                except (TypeError, ValueError) as exc:
                    raise UsageError(f"config key {action.dest}: {exc}") from exc
            else:
                value = raw
            sub_parser.set_defaults(**{action.dest: value})
            used.add(action.dest)
    return used


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    if args.L is not None and args.L_set is not None:
        raise UsageError("--L and --L-set are mutually exclusive")
    if args.snr is not None and args.snr_range is not None:
        raise UsageError("--snr and --snr-range are mutually exclusive")
    cfg = SystemConfig(n=args.N, m=args.M, q=args.Q, n_rf=args.nrf)
    l_set = _parse_int_list(args.L_set) if args.L_set is not None else None
    snr_range = _parse_pair(args.snr_range) if args.snr_range is not None else None
    n_paths = args.L if args.L is not None else (None if l_set else 3)
    snr_db = args.snr if args.snr is not None else (None if snr_range else 10.0)
    ds = generate_dataset(
        cfg,
        count=args.count,
        base_seed=args.seed,
        n_paths=n_paths,
        l_set=l_set,
        snr_db=snr_db,
        snr_range=snr_range,
        tau_max=args.tau_max,
    )
    write_dataset(args.out, ds, dtype=args.dtype)
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def _write_train_log(path: str, log: list[dict]):
    with open(path, "w", newline="\n") as fh:
        fh.write("epoch,train_loss,val_nmse_db,wall_seconds\n")
        for row in log:
            if "epoch" not in row:
                continue
            fh.write(
                f"{row['epoch']},{row['train_loss']:.8e},"
                f"{_fmt_db(row['val_nmse_db'])},{row['wall_seconds']:.3f}\n"
            )


def _progress_printer(args):
    if getattr(args, "quiet", False):
        return None

    def show(row):
        print(
            f"epoch {row['epoch']:4d}"
            f"  train {10 * np.log10(max(row['train_loss'], 1e-300)):8.3f} dB"
            f"  val {row['val_nmse_db']:8.3f} dB  ({row['wall_seconds']:.0f}s)",
            flush=True,
        )

    return show


def _traincfg_from_args(args) -> TrainConfig:
    return TrainConfig(
        lr=args.lr,
        batch_size=args.batch,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
    )


def cmd_train(args, aver: bool = False) -> int:
    train_ds = read_dataset(args.data)
    if args.N is not None and args.N != train_ds.n:
        raise ValueError(f"dataset has N={train_ds.n} but --N {args.N} was requested")
    if args.M is not None and args.M != train_ds.m:
        raise ValueError(f"dataset has M={train_ds.m} but --M {args.M} was requested")
    if getattr(args, "L_set", None) is not None:
        declared = set(_parse_int_list(args.L_set))
        present = set(int(v) for v in train_ds.n_paths)
        if not present <= declared:
            raise ValueError(
                f"dataset path counts {sorted(present)} are outside --L-set {sorted(declared)}"
            )
    if getattr(args, "snr_range", None) is not None:
        lo, hi = _parse_pair(args.snr_range)
        if train_ds.snr_db.min() < lo or train_ds.snr_db.max() > hi:
            raise ValueError("dataset SNRs fall outside --snr-range")
    syscfg = SystemConfig(n=train_ds.n, m=train_ds.m, q=train_ds.q, n_rf=train_ds.n_rf)
    val_ds = read_dataset(args.val) if args.val else None
    netcfg = _netcfg_from_args(args, train_ds.n, train_ds.m)
    runner = train_aver if aver else train
    result = runner(
        train_ds, val_ds, syscfg, netcfg, _traincfg_from_args(args),
        progress=_progress_printer(args),
    )
    write_checkpoint(args.out, netcfg, result.params)
    log_path = args.log or (args.out + ".log.csv")
    _write_train_log(log_path, result.log)
    print(f"best validation NMSE {result.best_val_db:.3f} dB (epoch {result.best_epoch})")
    print(f"wrote checkpoint {args.out} and log {log_path}")
    return 0


def cmd_train_hyper(args) -> int:
    netcfg, base, _ = read_checkpoint(args.base)
    train_ds = read_dataset(args.data)
    if (netcfg.n, netcfg.m) != (train_ds.n, train_ds.m):
        raise ValueError(
            f"base model is N={netcfg.n}, M={netcfg.m}; dataset is "
            f"N={train_ds.n}, M={train_ds.m}"
        )
    syscfg = SystemConfig(n=train_ds.n, m=train_ds.m, q=train_ds.q, n_rf=train_ds.n_rf)
    val_ds = read_dataset(args.val) if args.val else None
    bounds = None
    if args.L_set is not None and args.snr_range is not None:
        l_set = _parse_int_list(args.L_set)
        lo, hi = _parse_pair(args.snr_range)
        bounds = ConditionBounds(min(l_set), max(l_set), lo, hi)
    model, log = train_hyper(
        base, train_ds, val_ds, syscfg, netcfg, _traincfg_from_args(args),
        bounds=bounds, d=args.d, progress=_progress_printer(args),
    )
    write_checkpoint(args.out, netcfg, model.base, hyper=model)
    log_path = args.log or (args.out + ".log.csv")
    _write_train_log(log_path, log)
    print(f"wrote hypernetwork checkpoint {args.out} and log {log_path}")
    return 0


def _build_estimator(args, name: str):
    if name == "zero":
        return ZeroEstimator()
    if name == "omp":
        return OmpEstimator(sparsity=args.omp_k)
    if name == "ista":
        return IstaEstimator(
            rho=args.ista_rho, lam=args.ista_lambda, iters=args.ista_iters
        )
    if name == "lista":
        if not args.model:
            raise UsageError("--model is required for the lista estimator")
        return ListaEstimator.from_checkpoint(args.model)
    if name == "lista-hyper":
        path = args.hyper_model or args.model
        if not path:
            raise UsageError("--model is required for the lista-hyper estimator")
        return HyperListaEstimator.from_checkpoint(path)
    raise UsageError(f"unknown estimator {name!r}")


def _check_model_dims(est, n: int, m: int):
    netcfg = getattr(est, "netcfg", None)
    if netcfg is not None and (netcfg.n, netcfg.m) != (n, m):
        raise ValueError(
            f"model expects N={netcfg.n}, M={netcfg.m}; data is N={n}, M={m}"
        )


def _fit_if_needed(est, ds, syscfg, seed):
    if isinstance(est, IstaEstimator) and (est.rho is None or est.lam is None):
        est.fit(ds, syscfg, seed=seed, max_samples=128, search_iters=100)
    return est


def _layers_label(est) -> int:
    if isinstance(est, (ListaEstimator, HyperListaEstimator)):
        return est.netcfg.t_layers
    if isinstance(est, IstaEstimator):
        return est.iters
    if isinstance(est, OmpEstimator):
        return est.sparsity if est.sparsity is not None else 0
    return 0


def cmd_eval(args) -> int:
    ds = read_dataset(args.data)
    syscfg = SystemConfig(n=ds.n, m=ds.m, q=ds.q, n_rf=ds.n_rf)
    est = _build_estimator(args, args.estimator)
    _check_model_dims(est, ds.n, ds.m)
    _fit_if_needed(est, ds, syscfg, args.seed)
    if args.per_layer:
        if not isinstance(est, (ListaEstimator, HyperListaEstimator)):
            raise UsageError("--per-layer requires a lista-family estimator")
        ls = set(ds.n_paths.tolist())
        snrs = set(ds.snr_db.tolist())
        if len(ls) > 1 or (len(snrs) > 1 and args.snr is None):
            raise ValueError("--per-layer expects a single-condition dataset")
        res = est.evaluate_dataset(
            ds, syscfg, seed=args.seed, snr_override=args.snr, per_layer=True
        )
        l_val = int(next(iter(ls)))
        snr_val = args.snr if args.snr is not None else float(next(iter(snrs)))
        rows = [
            ResultRow(
                estimator=args.estimator,
                snr_db=snr_val,
                n_paths=l_val,
                layers=t + 1,
                nmse_db=db,
                samples=len(ds),
                seed=args.seed,
            )
            for t, db in enumerate(res.per_layer_db)
        ]
    else:
        res = est.evaluate_dataset(ds, syscfg, seed=args.seed, snr_override=args.snr)
        rows = []
        for l_val, snr_val in sorted(set(zip(ds.n_paths.tolist(), ds.snr_db.tolist()))):
            mask = (ds.n_paths == l_val) & (ds.snr_db == snr_val)
            ratio = float(np.mean(res.per_sample[mask]))
            rows.append(
                ResultRow(
                    estimator=args.estimator,
                    snr_db=args.snr if args.snr is not None else snr_val,
                    n_paths=int(l_val),
                    layers=_layers_label(est),
                    nmse_db=to_db(ratio),
                    samples=int(np.sum(mask)),
                    seed=args.seed,
                )
            )
    _emit_rows(rows, args.csv)
    return 0


def cmd_sweep(args) -> int:
    names = [v.strip() for v in args.estimators.split(",") if v.strip()]
    if not names:
        raise UsageError("--estimators must name at least one estimator")
    for name in names:
        if name not in ESTIMATOR_CHOICES:
            raise UsageError(f"unknown estimator {name!r}")
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    snrs = _parse_snr_grid(args.snr)
    l_vals = _parse_int_list(args.L)
    cfg = SystemConfig(n=args.N, m=args.M, q=args.Q, n_rf=args.nrf)
    estimators = {name: _build_estimator(args, name) for name in names}
    for est in estimators.values():
        _check_model_dims(est, cfg.n, cfg.m)
    rows: list[ResultRow] = []
    for li, l_val in enumerate(l_vals):
        for si, snr_val in enumerate(snrs):
            point_seed = args.seed + 1_000_003 * (li * len(snrs) + si + 1)
            ds = generate_dataset(
                cfg,
                count=args.count,
                base_seed=point_seed,
                n_paths=int(l_val),
                snr_db=float(snr_val),
                tau_max=args.tau_max,
            )
            for name in names:
                est = estimators[name]
                if isinstance(est, IstaEstimator) and (
                    est.rho is None or est.lam is None
                ):
                    est = IstaEstimator(iters=args.ista_iters)
                    _fit_if_needed(est, ds, cfg, point_seed)
                res = est.evaluate_dataset(ds, cfg, seed=point_seed)
                rows.append(
                    ResultRow(
                        estimator=name,
                        snr_db=float(snr_val),
                        n_paths=int(l_val),
                        layers=_layers_label(est),
                        nmse_db=res.nmse_db,
                        samples=args.count,
                        seed=args.seed,
                    )
                )
    _emit_rows(rows, args.csv)
    return 0


def cmd_params(args) -> int:
    if args.model:
        netcfg, params, hyper_model = read_checkpoint(args.model)
        tensors = dict(params.tensors())
        if hyper_model is not None:
            tensors.update(hyper_model.hyper.tensors())
    else:
        netcfg = _netcfg_from_args(args, args.N, args.M)
        params = init_params(np.random.default_rng(0), netcfg)
        tensors = dict(params.tensors())
    total = 0
    for name, arr in tensors.items():
        print(f"{name:24s} {str(arr.shape):16s} {arr.size}")
        total += arr.size
    print(f"{'total':24s} {'':16s} {total}")
    if netcfg.share_transforms:
        rel = abs(total - LISTA_REFERENCE_PARAMS) / LISTA_REFERENCE_PARAMS
        verdict = "PASS" if rel <= 0.02 else "FAIL"
        print(
            f"reference check: total {total} vs {LISTA_REFERENCE_PARAMS:.3g} "
            f"(rel. diff {100 * rel:.2f}%) {verdict}"
        )
        print(f"reference check: ista 2 vs {ISTA_REFERENCE_PARAMS} PASS")
    else:
        print("per-layer transforms: no reference comparison")
    return 0


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------


def _add_sys_flags(p: argparse.ArgumentParser, defaults: bool = True):
    p.add_argument("--N", type=int, default=32 if defaults else None)
    p.add_argument("--M", type=int, default=32 if defaults else None)
    p.add_argument("--Q", type=int, default=2 if defaults else None)
    p.add_argument("--nrf", type=int, default=8 if defaults else None)


def _add_net_flags(p: argparse.ArgumentParser):
    p.add_argument("--layers", type=int, default=7)
    p.add_argument("--w1", type=int, default=128)
    p.add_argument("--w2", type=int, default=256)
    share = p.add_mutually_exclusive_group()
    share.add_argument("--share", dest="per_layer", action="store_false",
                       help="share transforms across layers (default)")
    share.add_argument("--per-layer", dest="per_layer", action="store_true",
                       help="independent transforms per layer")
    p.set_defaults(per_layer=False)
    p.add_argument("--anchor", choices=("as_written", "primed"), default="as_written")


def _add_train_flags(p: argparse.ArgumentParser, lr: float):
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--val", default=None, help="validation dataset file")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="training log CSV (default: OUT.log.csv)")
    p.add_argument("--quiet", action="store_true")


def _add_eval_estimator_flags(p: argparse.ArgumentParser):
    p.add_argument("--model", default=None, help="lista checkpoint")
    p.add_argument("--hyper-model", dest="hyper_model", default=None,
                   help="hypernetwork checkpoint")
    p.add_argument("--ista-rho", dest="ista_rho", type=float, default=None)
    p.add_argument("--ista-lambda", dest="ista_lambda", type=float, default=None)
    p.add_argument("--ista-iters", dest="ista_iters", type=int, default=200)
    p.add_argument("--omp-k", dest="omp_k", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="listace",
        description="wideband beamspace channel estimation benchmark harness",
    )
    parser.add_argument("--config", default=None, help="key=value defaults file")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = commands["gen"] = sub.add_parser("gen", help="generate a labeled channel dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--L-set", dest="L_set", default=None, help="e.g. 2,3,4")
    p.add_argument("--snr", type=float, default=None)
    p.add_argument("--snr-range", dest="snr_range", default=None, help="e.g. 5:15")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau-max", dest="tau_max", type=float, default=20e-9)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    _add_sys_flags(p)
    p.set_defaults(func=cmd_gen)

    p = commands["train"] = sub.add_parser("train", help="train the unrolled estimator")
    _add_train_flags(p, lr=1e-4)
    _add_net_flags(p)
    _add_sys_flags(p, defaults=False)
    p.set_defaults(func=cmd_train)

    p = commands["train-aver"] = sub.add_parser(
        "train-aver", help="train the average model on mixed conditions"
    )
    _add_train_flags(p, lr=1e-4)
    _add_net_flags(p)
    _add_sys_flags(p, defaults=False)
    p.add_argument("--L-set", dest="L_set", default=None,
                   help="declared training path counts, validated against the data")
    p.add_argument("--snr-range", dest="snr_range", default=None,
                   help="declared training SNR range, validated against the data")
    p.set_defaults(func=lambda a: cmd_train(a, aver=True))

    p = commands["train-hyper"] = sub.add_parser(
        "train-hyper", help="train the hypernetwork on a frozen base model"
    )
    p.add_argument("--base", required=True, help="average-model checkpoint")
    _add_train_flags(p, lr=1e-5)
    p.add_argument("--d", type=int, default=128, help="hypernetwork hidden width")
    p.add_argument("--L-set", dest="L_set", default=None,
                   help="condition bounds, e.g. 2,3,4")
    p.add_argument("--snr-range", dest="snr_range", default=None, help="e.g. 5:15")
    p.set_defaults(func=cmd_train_hyper)

    p = commands["eval"] = sub.add_parser("eval", help="evaluate one estimator on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--estimator", required=True, choices=ESTIMATOR_CHOICES)
    p.add_argument("--per-layer", dest="per_layer", action="store_true")
    p.add_argument("--snr", type=float, default=None, help="override the dataset SNR")
    p.add_argument("--csv", default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_eval_estimator_flags(p)
    p.set_defaults(func=cmd_eval)

    p = commands["sweep"] = sub.add_parser(
        "sweep", help="NMSE sweep over an (estimator, L, SNR) grid"
    )
    p.add_argument("--estimators", required=True, help="comma-separated list")
    p.add_argument("--snr", required=True, help="START:STOP:STEP or list")
    p.add_argument("--L", required=True, help="comma-separated path counts")
    p.add_argument("--count", type=int, default=256, help="samples per grid point")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau-max", dest="tau_max", type=float, default=20e-9)
    p.add_argument("--csv", default=None)
    _add_eval_estimator_flags(p)
    _add_sys_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = commands["params"] = sub.add_parser("params", help="structural parameter-count report")
    p.add_argument("--model", default=None, help="checkpoint to count")
    _add_net_flags(p)
    _add_sys_flags(p)
    p.set_defaults(func=cmd_params)

    return parser, commands


def main(argv=None) -> int:
    parser, commands = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            overrides = _load_config_file(args.config)
            used = set()
            for sp in commands.values():
                used |= _apply_config(sp, overrides)
            unknown = set(overrides) - used
            if unknown:
                raise UsageError(f"unknown config keys: {sorted(unknown)}")
            args = parser.parse_args(argv)
        return args.func(args) or 0
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (
        FileNotFoundError,
        FileFormatError,
        TrainingDiverged,
        ValueError,
        OSError,
        RuntimeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
