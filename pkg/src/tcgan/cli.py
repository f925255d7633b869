"""Command line entry point: ``tcgan <command> [options]``.

Options can also come from a ``key=value`` file given with ``--config``
(one pair per line, ``#`` starts a comment, keys use the long option name
with dashes or underscores); command-line flags win over the file. Relative
output paths are resolved against ``$TCGAN_OUTPUT_ROOT`` when it is set.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint, data as data_mod
from .data import Dataset
from .downstream import KMeans, LinearClassifier, SupervisedTCGAN
from .encoder import Encoder, write_representations
from .estimator import TCGAN
from .experiments import recognition_experiment, summarize
from .gan import Discriminator, GanConfig, TrainingDiverged
from .metrics import EvalReport, accuracy, mmd, nmi, nnd, weighted_f1, write_rows

logger = logging.getLogger("tcgan")

OUTPUT_ROOT_ENV = "TCGAN_OUTPUT_ROOT"
EXIT_DIVERGED = 3
INFER_COUNT = 10_000


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _out_path(p) -> Path:
    path = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _snapshot(args, anchor: Path) -> None:
    """Write the resolved options next to ``anchor``."""
    values = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "func"}
    target = anchor / "config.json" if anchor.is_dir() else anchor.with_name(anchor.name + ".config.json")
    target.write_text(json.dumps(values, indent=2, sort_keys=True) + "\n")


def _write_report(path, report: EvalReport) -> None:
    path = _out_path(path)
    path.with_suffix(".json").write_text(report.to_json() + "\n")
    path.with_suffix(".csv").write_text(report.to_csv())


def _load_dataset(args) -> Dataset:
    if getattr(args, "preset", None) == "multiclass4":
        return data_mod.multiclass4(seed=args.data_seed)
    if not args.data:
        raise CliError("--data is required")
    ds = data_mod.load_ucr(args.data, args.test, args.delimiter, renormalize=args.renormalize)
    if args.dims > 1:
        total = ds.series.shape[1]
        if total % args.dims:
            raise CliError(f"row length {total} is not divisible by --dims {args.dims}")
        ds.series = ds.series.reshape(len(ds), total // args.dims, args.dims)
    return ds


def _add_data_args(p, test=True):
    p.add_argument("--data", help="UCR-format file (label-first rows); the train split")
    if test:
        p.add_argument("--test", help="UCR-format test split")
    p.add_argument("--delimiter", choices=["comma", "tab"], default=None, help="default: detect")
    p.add_argument("--dims", type=int, default=1, help="variables per time step (rows are time-major)")
    p.add_argument("--renormalize", action="store_true", help="z-normalise every series after loading")


def _add_gan_args(p):
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--delta", type=float, default=0.75)
    p.add_argument("--n-z", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.0002)
    p.add_argument("--beta1", type=float, default=0.5)
    p.add_argument("--beta2", type=float, default=0.9)
    p.add_argument("--widths", default="32,64,128,256", help="four discriminator conv widths")
    p.add_argument("--kernel", type=int, default=10)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")


def _gan_params(args) -> dict:
    return dict(n_z=args.n_z, delta=args.delta, alpha=args.lr, beta1=args.beta1, beta2=args.beta2,
                channel_widths=tuple(_int_list(args.widths)), kernel_w=args.kernel, stride=args.stride,
                dtype=args.dtype)


def _load_gan(path) -> TCGAN:
    if not path or not Path(path).exists():
        raise CliError(f"checkpoint {path!r} not found")
    return TCGAN.load(path)


def _write_series(path: Path, x: np.ndarray) -> None:
    data_mod.write_series_csv(x, path)


def _split_out(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}_{tag}{path.suffix}")


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> None:
    out = _out_path(args.out)
    if args.preset == "multiclass4":
        per_class = args.count if args.count is not None else 100
        ds = data_mod.multiclass4(seed=args.seed, train_per_class=per_class, test_per_class=per_class)
        data_mod.write_ucr(ds, _split_out(out, "TRAIN"), split="train")
        data_mod.write_ucr(ds, _split_out(out, "TEST"), split="test")
    else:
        try:
            shape = data_mod.SINES_PRESETS[args.preset]
        except KeyError:
            raise CliError(f"unknown preset {args.preset!r}") from None
        count = args.count if args.count is not None else data_mod.PRESET_COUNT
        ds = data_mod.synth_sines(count, seed=args.seed, **shape)
        _write_series(out, ds.series)
    _snapshot(args, out)
    logger.info("wrote %s", out)


def cmd_train_gan(args) -> None:
    ds = _load_dataset(args)
    if len(ds) < args.batch:
        raise CliError(f"dataset has {len(ds)} series, fewer than the batch size {args.batch}")
    est = TCGAN(batch_size=args.batch, epochs=args.epochs, seed=args.seed, **_gan_params(args))
    est.fit(ds.series)
    ckpt = _out_path(args.out_ckpt)
    est.save(ckpt)
    hist = est.history_
    # keep per-epoch training time with the weights for eval-gen
    meta, params, buffers = checkpoint.load_checkpoint(ckpt)
    meta["extra"]["seconds_per_epoch"] = float(np.mean(hist.epoch_seconds)) if hist.epoch_seconds else 0.0
    meta["extra"]["n_train"] = len(ds)
    checkpoint.save_checkpoint(ckpt, params, buffers, meta["kind"], meta["config"], meta["extra"])
    if args.log:
        hist.write_csv(_out_path(args.log))
    _snapshot(args, ckpt)


def cmd_sample(args) -> None:
    est = _load_gan(args.ckpt)
    count = args.count
    if count is None:
        if args.data:
            count = len(_load_dataset(args))
        else:
            count = INFER_COUNT
    x = est.sample(count, seed=args.seed)
    out = _out_path(args.out)
    _write_series(out, x)
    _snapshot(args, out)


def _encoder_for(args, ds: Dataset) -> Encoder:
    if args.random_init:
        cfg = GanConfig(n=ds.n, d=ds.d, seed=args.seed)
        return Encoder(Discriminator(cfg, np.random.default_rng(args.seed)))
    est = _load_gan(args.ckpt)
    if est.config_.n != ds.n or est.config_.d != ds.d:
        raise CliError(f"encoder expects series [{est.config_.n}, {est.config_.d}], data has [{ds.n}, {ds.d}]")
    return est.encoder_


def cmd_encode(args) -> None:
    ds = _load_dataset(args)
    enc = _encoder_for(args, ds)
    reps = enc.encode(ds.series)
    out = _out_path(args.out)
    ids = [f"{tag}-{i}" for i, tag in enumerate(ds.split)]
    write_representations(out, reps, ds.labels, ids)
    _snapshot(args, out)


def _write_predictions(path: Path, ids, truth, pred) -> None:
    with open(path, "w") as fh:
        fh.write("id,truth,pred\n")
        for i, t, p in zip(ids, truth, pred):
            fh.write(f"{i},{t},{p}\n")


def cmd_train_clf(args) -> None:
    ds = _load_dataset(args)
    if args.label_fraction < 1.0:
        ds = data_mod.subsample_labels(ds, args.label_fraction, seed=args.seed)
    train = ds.subset("train").labeled()
    test = ds.subset("test")
    if len(test) == 0:
        raise CliError("train-clf needs a --test split to score")
    classes = list(range(ds.n_classes))
    started = time.perf_counter()
    if args.mode == "sm-tcgan":
        enc = _encoder_for(args, ds)
        clf = LinearClassifier(args.loss, epochs=args.epochs, lr=args.lr, batch_size=args.batch,
                               classes=classes, seed=args.seed)
        clf.fit(enc.encode(train.series), train.labels)
        pred = clf.predict(enc.encode(test.series))
        if args.out_model:
            checkpoint.save_classifier(_out_path(args.out_model), clf)
    else:
        sup = SupervisedTCGAN(epochs=args.epochs, lr=args.lr, batch_size=args.batch,
                              train=args.mode == "tcgan-d", seed=args.seed)
        sup.fit(train.series, train.labels)
        pred = sup.predict(test.series)
        if args.out_model:
            net = sup.network_
            checkpoint.save_checkpoint(
                _out_path(args.out_model), {k: p.data for k, p in net.parameters().items()}, net.buffers(),
                "supervised_tcgan", net.cfg.to_dict(), {"classes": np.asarray(sup.classes_).tolist()},
            )
    elapsed = time.perf_counter() - started
    report = EvalReport(ds.name, args.seed,
                        {"accuracy": accuracy(pred, test.labels), "weighted_f1": weighted_f1(pred, test.labels)},
                        {"train_predict_s": elapsed}, {"mode": args.mode})
    if args.pred:
        path = _out_path(args.pred)
        _write_predictions(path, [f"test-{i}" for i in range(len(test))], test.labels, pred)
    if args.report:
        _write_report(args.report, report)
        _snapshot(args, _out_path(args.report))
    print(report.to_json())


def cmd_cluster(args) -> None:
    ds = _load_dataset(args)
    x = _encoder_for(args, ds).encode(ds.series) if (args.ckpt or args.random_init) else ds.series.reshape(len(ds), -1)
    k = args.k or ds.n_classes
    model = KMeans(k, n_init=args.n_init, seed=args.seed).fit(x)
    metrics = {"inertia": model.inertia_}
    if ds.labels is not None and ds.n_classes > 1:
        metrics["nmi"] = nmi(ds.labels, model.labels_)
    report = EvalReport(ds.name, args.seed, metrics, {}, {"features": "tcgan" if args.ckpt else "raw"})
    if args.out:
        path = _out_path(args.out)
        with open(path, "w") as fh:
            fh.write("id,cluster,truth\n")
            for i, (c, t) in enumerate(zip(model.labels_, ds.labels)):
                fh.write(f"{ds.split[i]}-{i},{c},{t}\n")
    if args.report:
        _write_report(args.report, report)
        _snapshot(args, _out_path(args.report))
    print(report.to_json())


def cmd_eval_gen(args) -> None:
    est = _load_gan(args.ckpt)
    real = _load_dataset(args).series
    count = args.count or len(real)
    fake = est.sample(count, seed=args.seed)
    started = time.perf_counter()
    est.sample(INFER_COUNT, seed=args.seed)
    infer = time.perf_counter() - started
    meta, _, _ = checkpoint.load_checkpoint(args.ckpt)
    report = EvalReport(
        Path(args.data).stem, args.seed,
        {"MMD": mmd(real, fake, args.bandwidth), "NND": nnd(real, fake)},
        {"InferTime": infer, "TrainTime": meta["extra"].get("seconds_per_epoch", float("nan"))},
    )
    if args.report:
        _write_report(args.report, report)
        _snapshot(args, _out_path(args.report))
    print(report.to_json())


def _read_predictions(path):
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"truth", "pred"} <= set(rows[0]):
        raise CliError(f"{path}: expected columns id,truth,pred")
    return np.array([r["truth"] for r in rows]), np.array([r["pred"] for r in rows])


def cmd_eval_rec(args) -> None:
    truth, pred = _read_predictions(args.pred)
    report = EvalReport(Path(args.pred).stem, None, {
        "accuracy": accuracy(pred, truth), "weighted_f1": weighted_f1(pred, truth), "nmi": nmi(truth, pred),
    })
    if args.report:
        _write_report(args.report, report)
        _snapshot(args, _out_path(args.report))
    print(report.to_json())


def cmd_pipeline(args) -> None:
    out = _out_path(Path(args.out) / "summary.csv").parent
    fractions = _float_list(args.fractions)
    runs, timings = [], []
    for seed in _int_list(args.seeds):
        if args.preset == "multiclass4":
            ds = data_mod.multiclass4(seed=seed if args.data_seed is None else args.data_seed)
        else:
            ds = _load_dataset(args)
        result = recognition_experiment(
            ds, seed, gan_epochs=args.gan_epochs, gan_batch=args.batch, clf_epochs=args.clf_epochs,
            fractions=fractions, baselines=not args.no_baselines, **_gan_params(args),
        )
        metrics = {k: v for k, v in result.items() if not k.startswith("time_")}
        timings.append({"seed": seed, **{k: v for k, v in result.items() if k.startswith("time_")}})
        report = EvalReport(ds.name, seed, metrics)
        (out / f"seed_{seed}.json").write_text(report.to_json() + "\n")
        runs.append(report.row())
        logger.info("seed %d: %s", seed, metrics)
    with open(out / "runs.csv", "w") as fh:
        write_rows(fh, runs)
    numeric = [{k: v for k, v in r.items() if k not in ("schema_version", "dataset", "seed")} for r in runs]
    summary = summarize(numeric)
    summary_row = {"dataset": runs[0]["dataset"], "seeds": args.seeds, "n_seeds": len(runs), **summary}
    with open(out / "summary.csv", "w") as fh:
        write_rows(fh, [summary_row])
    (out / "summary.json").write_text(json.dumps(summary_row, indent=2, sort_keys=True) + "\n")
    with open(out / "timings.csv", "w") as fh:
        write_rows(fh, timings)
    _snapshot(args, out)
    print(json.dumps(summary_row, indent=2, sort_keys=True))


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcgan", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file with option defaults")
    parser.add_argument("--threads", type=int, default=1, help="BLAS threads (1 gives reproducible runs)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset in UCR text format")
    p.add_argument("--preset", required=True, choices=["sines-d1l100", "sines-d5l24", "multiclass4"])
    p.add_argument("--count", type=int, help="series count (multiclass4: per class and split)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-gan", help="adversarial pretraining on unlabeled train+test series")
    _add_data_args(p)
    _add_gan_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--log", help="per-batch training log CSV")
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("sample", help="generate series from a trained generator")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--count", type=int, help="default: size of --data, else 10000")
    _add_data_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("encode", help="write representation vectors as CSV")
    p.add_argument("--ckpt")
    p.add_argument("--random-init", action="store_true", help="use an untrained discriminator")
    _add_data_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train-clf", help="train a classifier and score it on the test split")
    p.add_argument("--mode", choices=["sm-tcgan", "tcgan-d", "tcgan-d-r"], default="sm-tcgan")
    p.add_argument("--ckpt", help="TCGAN checkpoint (sm-tcgan)")
    p.add_argument("--random-init", action="store_true", help="sm-tcgan on an untrained encoder")
    _add_data_args(p)
    p.add_argument("--loss", choices=["softmax", "hinge"], default="softmax")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.0002)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--label-fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-model")
    p.add_argument("--pred", help="predictions CSV (id,truth,pred)")
    p.add_argument("--report")
    p.set_defaults(func=cmd_train_clf)

    p = sub.add_parser("cluster", help="k-means on encodings (or raw series without --ckpt)")
    p.add_argument("--ckpt")
    p.add_argument("--random-init", action="store_true")
    _add_data_args(p)
    p.add_argument("--k", type=int, help="default: number of classes")
    p.add_argument("--n-init", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="assignments CSV")
    p.add_argument("--report")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval-gen", help="MMD, NND and timings of a generator")
    p.add_argument("--ckpt", required=True)
    _add_data_args(p)
    p.add_argument("--count", type=int, help="generated set size; default: size of --data")
    p.add_argument("--bandwidth", type=float, help="RBF sigma; default: median heuristic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval_gen)

    p = sub.add_parser("eval-rec", help="accuracy, weighted F1 and NMI of a predictions file")
    p.add_argument("--pred", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval_rec)

    p = sub.add_parser("pipeline", help="pretrain, encode, classify and cluster over several seeds")
    p.add_argument("--preset", choices=["multiclass4"])
    p.add_argument("--data-seed", type=int, help="fixed dataset seed (default: each run's seed)")
    _add_data_args(p)
    _add_gan_args(p)
    p.set_defaults(epochs=None)
    p.add_argument("--gan-epochs", type=int, default=30)
    p.add_argument("--clf-epochs", type=int, default=100)
    p.add_argument("--fractions", default="1.0")
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--no-baselines", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)
    parser._subparsers_map = sub.choices  # type: ignore[attr-defined]
    return parser


def _read_config(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = value
    return values


def _apply_config(parser, argv) -> argparse.Namespace:
    """Parse ``argv`` with values from ``--config`` as defaults (flags still win)."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        values = _read_config(known.config)
        subparsers = parser._subparsers_map.values()  # type: ignore[attr-defined]
        for key in values:
            if not any(key in {a.dest for a in sub._actions} for sub in subparsers):
                raise CliError(f"unknown option {key!r} in {known.config}")
        for sub in subparsers:
            defaults = {}
            for action in sub._actions:
                if action.dest not in values:
                    continue
                raw = values[action.dest]
                if action.nargs == 0:
                    defaults[action.dest] = raw.lower() in ("1", "true", "yes", "on")
                else:
                    defaults[action.dest] = action.type(raw) if action.type else raw
                action.required = False
            sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CliError, FileNotFoundError, checkpoint.CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
