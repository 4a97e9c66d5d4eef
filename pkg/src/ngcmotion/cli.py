"""Command-line interface.

Subcommands: gen-data, train, eval, predict, gradcheck, ablate.  Exit
codes are a stable contract: 0 success, 1 usage/validation error, 2
runtime/data error.  Flags override an optional key=value config file,
which overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# config file keys -> parser; shared between train and ablate
_CONFIG_KEYS = {
    "lambda": float,
    "epochs": int,
    "seed": int,
    "tau": int,
    "horizon": int,
    "batch-size": int,
    "lr": float,
    "lr-decay": float,
    "lr-decay-every": int,
    "tf-decay": float,
    "huber-beta": float,
    "penalty-weight": float,
    "crf-alpha": float,
    "val-fraction": float,
    "graph-mode": str,
    "shared-qk": lambda s: s.lower() in ("1", "true", "yes"),
}


def _read_config_file(path):
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from None
    for no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{no}: unknown config key {key!r}")
        try:
            values[key] = _CONFIG_KEYS[key](val)
        except ValueError:
            raise UsageError(f"{path}:{no}: bad value {val!r} for {key}") from None
    return values


def _merged(args, defaults):
    """Flag > config file > defaults, per key."""
    file_vals = _read_config_file(args.config) if getattr(args, "config", None) else {}
    out = dict(defaults)
    out.update(file_vals)
    for key in defaults:
        flag = key.replace("-", "_")
        val = getattr(args, flag, None)
        if val is not None:
            out[key] = val
    return out


_TRAIN_DEFAULTS = {
    "lambda": 0.4,
    "epochs": 100,
    "seed": 0,
    "tau": 10,
    "horizon": 10,
    "batch-size": 16,
    "lr": 1e-3,
    "lr-decay": 0.1,
    "lr-decay-every": 10,
    "tf-decay": 0.995,
    "huber-beta": 1.0,
    "penalty-weight": 0.1,
    "crf-alpha": 1e-4,
    "val-fraction": 0.25,
    "graph-mode": "skeleton",
    "shared-qk": False,
}


def _train_config(vals):
    from .training import TrainConfig

    try:
        return TrainConfig(
            lam=vals["lambda"],
            huber_beta=vals["huber-beta"],
            penalty_weight=vals["penalty-weight"],
            lr=vals["lr"],
            lr_decay=vals["lr-decay"],
            lr_decay_every=vals["lr-decay-every"],
            batch_size=vals["batch-size"],
            epochs=vals["epochs"],
            tf_decay=vals["tf-decay"],
            crf_alpha=vals["crf-alpha"],
            seed=vals["seed"],
            val_fraction=vals["val-fraction"],
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def _load_data(path):
    from .data import DatasetFormatError, load_dataset

    try:
        return load_dataset(path)
    except FileNotFoundError:
        raise DataError(f"dataset file not found: {path}") from None
    except DatasetFormatError as e:
        raise DataError(f"{path}: {e}") from None


def _add_train_flags(sub):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--lambda", dest="lambda_", type=float, default=None,
                     help="prediction/recognition trade-off in [0,1]")
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--tau", type=int, default=None, help="observed frames")
    sub.add_argument("--horizon", type=int, default=None, help="predicted frames")
    sub.add_argument("--batch-size", type=int, default=None)
    sub.add_argument("--lr", type=float, default=None)
    sub.add_argument("--lr-decay", type=float, default=None)
    sub.add_argument("--lr-decay-every", type=int, default=None)
    sub.add_argument("--tf-decay", type=float, default=None)
    sub.add_argument("--huber-beta", type=float, default=None)
    sub.add_argument("--penalty-weight", type=float, default=None)
    sub.add_argument("--crf-alpha", type=float, default=None)
    sub.add_argument("--val-fraction", type=float, default=None)
    sub.add_argument("--graph-mode", choices=("skeleton", "full"), default=None)
    sub.add_argument("--shared-qk", action="store_true", default=None)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    from .data import generate_synthetic, save_dataset

    try:
        ds = generate_synthetic(
            classes=args.classes,
            per_class=args.per_class,
            n_joints=args.joints,
            frames=args.frames,
            fps=args.fps,
            seed=args.seed,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None
    try:
        save_dataset(args.out, ds)
    except OSError as e:
        raise DataError(f"cannot write {args.out}: {e}") from None
    print(f"wrote {len(ds)} sequences ({args.classes} classes x {args.per_class}) to {args.out}")
    print(f"labels: {', '.join(ds.label_set)}")
    return 0


_FIELD_TO_KEY = {
    "lam": "lambda",
    "huber_beta": "huber-beta",
    "penalty_weight": "penalty-weight",
    "lr": "lr",
    "lr_decay": "lr-decay",
    "lr_decay_every": "lr-decay-every",
    "batch_size": "batch-size",
    "epochs": "epochs",
    "tf_decay": "tf-decay",
    "crf_alpha": "crf-alpha",
    "seed": "seed",
    "val_fraction": "val-fraction",
}


def cmd_train(args):
    from .training import make_model_config, train

    defaults = dict(_TRAIN_DEFAULTS)
    if args.resume:
        # inherit the run's configuration; explicit flags still win
        from .checkpoint import read_checkpoint

        try:
            stored = read_checkpoint(args.resume).config.get("train", {})
        except FileNotFoundError:
            raise DataError(f"checkpoint not found: {args.resume}") from None
        for fieldname, key in _FIELD_TO_KEY.items():
            if fieldname in stored:
                defaults[key] = stored[fieldname]
    vals = _merged(args, defaults)
    # argparse stores --lambda as lambda_
    if args.lambda_ is not None:
        vals["lambda"] = args.lambda_
    cfg = _train_config(vals)
    ds = _load_data(args.data)
    min_frames = vals["tau"] + vals["horizon"]
    for i, seq in enumerate(ds.sequences):
        if seq.n_frames < min_frames:
            raise DataError(
                f"sequence {i} has {seq.n_frames} frames; tau+horizon={min_frames} required"
            )
    metrics_path = args.metrics or (args.out + ".metrics.csv")
    if args.resume:
        result = train(ds, cfg, out_path=args.out, metrics_path=metrics_path,
                       resume=args.resume, quiet=args.quiet)
    else:
        model_cfg = make_model_config(
            ds, vals["tau"], vals["horizon"],
            graph_mode=vals["graph-mode"],
            shared_qk=bool(vals["shared-qk"]),
            variant=args.variant,
        )
        result = train(ds, cfg, model_cfg, out_path=args.out,
                       metrics_path=metrics_path, quiet=args.quiet)
    rep = result.final_report
    print(f"checkpoint: {args.out}  (best epoch {result.best_epoch})")
    print(f"metrics: {metrics_path}")
    for h, ms, m, z in zip(rep.horizons, rep.horizon_ms, rep.model_mae, rep.zerov_mae):
        print(f"val MAE @ {ms} ms (frame {h}): model={m:.6f} zerov={z:.6f}")
    print(f"val accuracy: {rep.acc:.4f}")
    return 0


def cmd_eval(args):
    from .data import format_confusion
    from .training import evaluate

    ds = _load_data(args.data)
    if len(ds) == 0:
        raise DataError("dataset is empty")
    model, loaded = _load_checkpoint(args.model)
    if tuple(model.config.edges) != tuple(ds.topology.edges) or \
            model.config.n_joints != ds.topology.n_joints:
        raise DataError("checkpoint topology does not match dataset topology")
    horizons = _parse_horizons(args.horizons) if args.horizons else None
    try:
        rep = evaluate(model, ds, horizons)
    except ValueError as e:
        raise DataError(str(e)) from None
    note = "# MAE in native coordinate units (mean absolute per-coordinate error)"
    lines = [note, "horizon_ms,model_mae,zerov_mae"]
    for ms, m, z in zip(rep.horizon_ms, rep.model_mae, rep.zerov_mae):
        lines.append(f"{ms},{m!r},{z!r}")
    csv_text = "\n".join(lines) + "\n"
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    print(csv_text, end="")
    print(f"accuracy: {rep.acc:.4f}")
    print(format_confusion(rep.confusion, rep.labels))
    return 0


def _load_checkpoint(path):
    from .checkpoint import CheckpointError
    from .training import load_model

    try:
        return load_model(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    except CheckpointError as e:
        raise DataError(f"{path}: {e}") from None


def _parse_horizons(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad --horizons list: {text!r}") from None


def cmd_predict(args):
    from .data import Dataset, PoseSequence, save_dataset

    ds = _load_data(args.input)
    model, _ = _load_checkpoint(args.model)
    cfgm = model.config
    if cfgm.n_joints != ds.topology.n_joints:
        raise DataError("checkpoint topology does not match input topology")
    horizon = args.frames
    if horizon < 1:
        raise UsageError("--frames must be >= 1")
    outputs = []
    for i, seq in enumerate(ds.sequences):
        if seq.n_frames < cfgm.tau:
            raise DataError(f"sequence {i} shorter than tau={cfgm.tau}")
        x_prev = seq.frames[: cfgm.tau][:, None]  # (tau, 1, N, 3)
        pred = model.predict_future(x_prev, horizon)[:, 0]
        outputs.append(PoseSequence(pred, fps=ds.fps, label=seq.label))
    out_ds = Dataset(
        topology=ds.topology, sequences=outputs, label_set=ds.label_set, fps=ds.fps
    )
    save_dataset(args.out, out_ds)
    print(f"wrote {len(outputs)} predicted sequences ({horizon} frames each) to {args.out}")
    if args.dump_csv:
        with open(args.dump_csv, "w", encoding="utf-8") as fh:
            fh.write("sequence,frame,joint,x,y,z\n")
            for s, seq in enumerate(outputs):
                for t in range(seq.n_frames):
                    for j in range(seq.n_joints):
                        x, y, z = seq.frames[t, j]
                        fh.write(f"{s},{t},{j},{x!r},{y!r},{z!r}\n")
        print(f"pose dump: {args.dump_csv}")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_gradcheck

    entries, elapsed = run_gradcheck(seed=args.seed, tol=args.tol)
    for e in entries:
        print(e.line())
    failed = [e for e in entries if not e.passed]
    print(f"{len(entries) - len(failed)}/{len(entries)} checks passed in {elapsed:.1f}s "
          f"(tol={args.tol:g})")
    return 0 if not failed else 1


def cmd_ablate(args):
    from .training import evaluate, make_model_config, train

    vals = _merged(args, _TRAIN_DEFAULTS)
    if args.lambda_ is not None:
        vals["lambda"] = args.lambda_
    ds = _load_data(args.data)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in ("full", "no-ngc", "no-bilstm"):
            raise UsageError(f"unknown variant {v!r}")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise UsageError("--seeds must list at least one seed")

    long_h = vals["horizon"]

    def run_one(variant, seed):
        cfg = _train_config({**vals, "seed": seed})
        model_cfg = make_model_config(
            ds, vals["tau"], vals["horizon"],
            graph_mode=vals["graph-mode"],
            shared_qk=bool(vals["shared-qk"]),
            variant=variant,
        )
        result = train(ds, cfg, model_cfg, quiet=True)
        rep = result.final_report
        mae_long = rep.model_mae[rep.horizons.index(long_h)] if long_h in rep.horizons \
            else rep.model_mae[-1]
        return rep.acc, mae_long

    results = {}
    if args.parallel:
        # one thread per variant; each owns its model replica
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=len(variants)) as pool:
            futures = {
                variant: pool.submit(lambda v=variant: [run_one(v, s) for s in seeds])
                for variant in variants
            }
            for variant, fut in futures.items():
                results[variant] = fut.result()
    else:
        for variant in variants:
            results[variant] = [run_one(variant, s) for s in seeds]

    rows = []
    for variant in variants:
        accs = [a for a, _ in results[variant]]
        maes = [m for _, m in results[variant]]
        for seed, (acc, m) in zip(seeds, results[variant]):
            rows.append((variant, seed, acc, m))
        rows.append((variant, "mean", float(np.mean(accs)), float(np.mean(maes))))

    lines = ["variant,seed,accuracy,long_horizon_mae"]
    for variant, seed, acc, m in rows:
        lines.append(f"{variant},{seed},{acc!r},{m!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    means = {v: (a, m) for v, s, a, m in rows if s == "mean"}
    if "full" in means:
        for v, (a, m) in means.items():
            if v == "full":
                continue
            trend = "<=" if means["full"][1] <= m else ">"
            print(f"# directional: full MAE {means['full'][1]:.4f} {trend} {v} MAE {m:.4f} "
                  f"(expected <=, reported not asserted)")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ngcmotion",
        description="Joint skeleton motion prediction and action recognition.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic SKEL1 dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, required=True)
    g.add_argument("--per-class", type=int, required=True)
    g.add_argument("--joints", type=int, default=17)
    g.add_argument("--frames", type=int, default=60)
    g.add_argument("--fps", type=float, default=25.0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a SKEL1 dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="metrics CSV path (default: <out>.metrics.csv)")
    t.add_argument("--resume", help="continue from a final checkpoint")
    t.add_argument("--variant", choices=("full", "no-ngc", "no-bilstm"), default="full")
    t.add_argument("--quiet", action="store_true")
    _add_train_flags(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint against a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--horizons", help="comma-separated 1-based frame offsets")
    e.add_argument("--report", help="write the CSV report here")
    e.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="predict future frames for each input sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--dump-csv", help="also write a flat pose CSV")
    p.set_defaults(fn=cmd_predict)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(fn=cmd_gradcheck)

    a = sub.add_parser("ablate", help="train and compare model variants")
    a.add_argument("--data", required=True)
    a.add_argument("--seeds", required=True, help="comma-separated seed list")
    a.add_argument("--variants", default="full,no-ngc,no-bilstm")
    a.add_argument("--out", help="write the comparison CSV here")
    a.add_argument("--parallel", action="store_true", help="one thread per variant")
    _add_train_flags(a)
    a.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; remap to the documented code 1
        return 0 if e.code in (0, None) else 1
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime faults surface as exit 2 with a message
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
