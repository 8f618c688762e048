# -*- coding: utf-8 -*-
"""
Progressive dilated UNet segmentation engine.  Default are in parentheses.

Commands: phantom (generate a dataset), train, eval, predict, rf (receptive
field report of a model) and grid (gridding pattern of a dilation schedule).
Options may also come from a `key = value` file given with --config; flags on
the command line override the file.
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from progDilUNet.arch import NetSpec, read_netspec
from progDilUNet.checkpoint import load_checkpoint, restore_model
from progDilUNet.exceptions import ConfigError, ProgDilUNetError, ShapeError
from progDilUNet.loader import (
    load_image,
    open_split,
    save_tensor,
    write_dataset,
    write_pgm,
)
from progDilUNet.metrics import compare, summary
from progDilUNet.phantom import PhantomConfig, generate, split
from progDilUNet.pduConstantes import (
    CKPT_SUFFIX,
    EXIT_OK,
    EXIT_RUNTIME,
    IMG_SUFFIX,
    LBL_SUFFIX,
    MODEL_NAMES,
    PROB_SUFFIX,
)
from progDilUNet.rfield import ACCOUNTINGS, gridding_map, network_rf, rf_summary, schedule
from progDilUNet.settings import (
    BASE_WIDTH_DFT,
    BATCH_SIZE_DFT,
    CHECKPOINT_DIR_DFT,
    DATASET_DFT,
    EPOCHS_DFT,
    EVAL_CLASSES_DFT,
    FLOAT_FMT,
    LOGLEVEL_DFT,
    LR_DFT,
    LR_FACTOR_DFT,
    MODEL_DFT,
    NETSPEC_DFT,
    PATIENCE_DFT,
    PHANTOM_SIZE_DFT,
    PREFETCH_DFT,
    SEED_DFT,
    SPLIT_NAMES,
    SPLIT_RATIOS_DFT,
    WORKERS_DFT,
)
from progDilUNet.trainer import (
    RunConfig,
    evaluate_split,
    predict_proba,
    time_inference,
    train,
)
from progDilUNet.utils import fmt_mean_std, get_recent_file, read_kv

logger = logging.getLogger()


# #### argument types ####
def positive_int(raw) -> int:
    v = int(raw)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {raw}")
    return v


def positive_float(raw) -> float:
    v = float(raw)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a number > 0, got {raw}")
    return v


def num_list(raw, conv=int) -> list:
    """Comma separated text or a list, converted item by item."""
    items = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
    try:
        return [conv(r) for r in items if str(r).strip()]
    except ValueError:
        raise ConfigError(f"expected comma separated numbers, got {raw!r}") from None


# #### commands ####
def cmd_phantom(args) -> int:
    kv = read_kv(args.phantomConfig) if args.phantomConfig else {}
    kv.update(seed=args.seed, size=args.size)
    if args.detached:
        kv["tumor_attached"] = False
    cfg = PhantomConfig.from_kv(kv)
    samples = generate(cfg, args.count, workers=args.workers)
    counts = num_list(args.splitCounts) if args.splitCounts else None
    parts = split([s.id for s in samples], num_list(args.ratios, float), args.seed, counts)
    split_of = {sid: name for name, part in zip(SPLIT_NAMES, parts) for sid in part}
    folder = write_dataset(args.out, samples, split_of, preview=args.preview)
    (folder / "phantom.cfg").write_text(cfg.to_text())
    print(" ".join(f"{name}={len(part)}" for name, part in zip(SPLIT_NAMES, parts)))
    return EXIT_OK


def _net_spec(args) -> Optional[NetSpec]:
    return read_netspec(args.net_spec) if args.net_spec else None


def _run_config(args) -> RunConfig:
    net = dict(model=args.model, base_width=args.base_width)
    spec = _net_spec(args)
    if spec is not None:
        net = dict(model=spec.name, base_width=spec.base_width, classes=spec.classes,
                   depth=spec.depth, input_size=spec.input_size)
        logger.info(f"Network from {args.net_spec}: {net}")
    return RunConfig(
        **net,
        dataset=args.dataset,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        checkpoint_dir=args.checkpoint_dir,
        eval_classes=tuple(num_list(args.eval_classes)),
        patience=args.patience,
        lr_factor=args.lr_factor,
        prefetch=args.prefetch,
        resume=args.resume,
    )


def cmd_train(args) -> int:
    cfg = _run_config(args)
    res = train(cfg)
    best = "undefined" if res.best_dsc is None else FLOAT_FMT.format(res.best_dsc)
    print(f"trained {cfg.model} for {res.epochs_run} epochs, best val DSC {best}")
    print(f"log: {cfg.log_file}  best: {cfg.best_file}  last: {cfg.last_file}")
    return EXIT_OK


def _open_model(fname: str):
    """Model of a checkpoint file, or of the newest .dlck of a directory."""
    path = Path(fname)
    if path.is_dir():
        path = get_recent_file(path, "*" + CKPT_SUFFIX)
        logger.info(f"Using checkpoint {path}")
    return restore_model(load_checkpoint(path))


def _fmt_p(p) -> str:
    return "undefined" if p is None else FLOAT_FMT.format(p)


def cmd_eval(args) -> int:
    ds = open_split(args.dataset, args.split)
    classes = num_list(args.eval_classes)
    if args.truthAsPrediction:
        model = None
    elif args.checkpoint is None:
        raise ConfigError("eval needs a checkpoint unless --truthAsPrediction is set")
    else:
        model = _open_model(args.checkpoint)

    report = evaluate_split(model, ds, classes, args.batch_size)
    if args.perSample:
        print(report.to_string(index=False, na_rep="undefined", float_format=FLOAT_FMT.format))
    print(summary(report).to_string(index=False))
    if args.out:
        report.to_csv(args.out, index=False)
        logger.info(f"Per-sample metrics written to {args.out}")

    if model is not None and not args.noTiming:
        times = time_inference(model, ds)
        print(f"inference: {fmt_mean_std(times, '{:.2f}')} ms per slice ({len(times)} slices)")

    if args.compare:
        other = _open_model(args.compare)
        report_b = evaluate_split(other, ds, classes, args.batch_size)
        cmp = compare(report, report_b)
        cmp["p_value"] = cmp["p_value"].map(_fmt_p)
        print(f"one-tailed Wilcoxon, {args.checkpoint} better than {args.compare}:")
        print(cmp.to_string(index=False))
    return EXIT_OK


def _prefix(image: Path, out: Optional[str]) -> Path:
    if out:
        return Path(out)
    stem = image.name[: -len(IMG_SUFFIX)] if image.name.endswith(IMG_SUFFIX) else image.stem
    return image.with_name(f"{stem}_pred")


def cmd_predict(args) -> int:
    model = _open_model(args.checkpoint)
    image = Path(args.image)
    data = load_image(image).data
    spec = _net_spec(args)
    if spec is not None:
        if replace(spec, input_size=model.spec.input_size) != model.spec:
            raise ConfigError(f"{args.checkpoint} does not hold the network of {args.net_spec}")
        if data.shape[2:] != (spec.input_size, spec.input_size):
            raise ShapeError(f"{image} is {data.shape[2:]}, {args.net_spec} expects {spec.input_size} px")
    probs = predict_proba(model, data)
    labels = probs.argmax(axis=1).astype(np.uint8)
    prefix = _prefix(image, args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    save_tensor(f"{prefix}{LBL_SUFFIX}", labels[:, None])
    for c in range(probs.shape[1]):
        save_tensor(f"{prefix}{PROB_SUFFIX.format(cls=c)}", probs[:, c:c + 1].astype(np.float32))
    write_pgm(f"{prefix}_lbl.pgm", labels[0], labels=True)
    print(f"wrote {prefix}{LBL_SUFFIX} and {probs.shape[1]} probability maps")
    return EXIT_OK


def cmd_rf(args) -> int:
    spec = _net_spec(args) or NetSpec(name=args.model, base_width=1, input_size=args.size)
    if args.accounting:
        print(network_rf(spec, args.accounting).to_text())
    else:
        print(rf_summary(spec))
    return EXIT_OK


def cmd_grid(args) -> int:
    layers = schedule(args.dilations, args.kernel)
    m = gridding_map(layers)
    for row in m:
        print("".join("#" if v else "." for v in row))
    n, total = int(m.sum()), m.size
    print(f"dilations {tuple(args.dilations)}: {n} of {total} positions contribute ({n / total:.4f})")
    return EXIT_OK


# #### parser ####
def _add_common(p) -> None:
    p.add_argument("--logLevel", "-L", help="set the log level", default=LOGLEVEL_DFT)
    p.add_argument("--config", "-C", help="key = value file providing option defaults")


def _add_netspec(p) -> None:
    p.add_argument("--netSpec", "-N", dest="net_spec", default=NETSPEC_DFT,
                   help="network spec file (name, base_width, classes, input_size, depth),"
                        " overrides the model flags")


def _add_dataset(p, split_default=None) -> None:
    p.add_argument("--dataset", "-d", help="dataset directory", default=DATASET_DFT)
    p.add_argument("--batchSize", "-b", dest="batch_size", type=positive_int, default=BATCH_SIZE_DFT,
                   help="images per mini-batch")
    p.add_argument("--evalClasses", dest="eval_classes", default=",".join(map(str, EVAL_CLASSES_DFT)),
                   help="comma separated class codes to score")
    if split_default:
        p.add_argument("--split", "-s", choices=SPLIT_NAMES, default=split_default)


def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="prog_dil_unet", description=__doc__, formatter_class=fmt)
    subs = parser.add_subparsers(dest="command", required=True)
    cmds = {}

    p = subs.add_parser("phantom", help="generate a phantom dataset", formatter_class=fmt)
    p.add_argument("--out", "-o", help="dataset directory to write", default=DATASET_DFT)
    p.add_argument("--count", "-n", type=positive_int, help="number of samples", default=60)
    p.add_argument("--seed", type=int, default=SEED_DFT)
    p.add_argument("--size", type=positive_int, help="image side in px", default=PHANTOM_SIZE_DFT)
    p.add_argument("--workers", "-w", type=positive_int, default=WORKERS_DFT)
    p.add_argument("--ratios", default=",".join(map(str, SPLIT_RATIOS_DFT)),
                   help="train,val,test ratios scaled to --count")
    p.add_argument("--splitCounts", help="explicit train,val,test counts, overrides --ratios")
    p.add_argument("--phantomConfig", help="key = value file of phantom generator knobs")
    p.add_argument("--detached", action="store_true", help="tumors float in the lumen")
    p.add_argument("--preview", action="store_true", help="also write PGM previews")
    p.set_defaults(func=cmd_phantom)
    cmds["phantom"] = p

    p = subs.add_parser("train", help="train a model", formatter_class=fmt)
    p.add_argument("--model", "-m", choices=MODEL_NAMES, default=MODEL_DFT)
    _add_dataset(p)
    p.add_argument("--epochs", "-e", type=int, default=EPOCHS_DFT)
    p.add_argument("--lr", type=positive_float, help="initial learning rate", default=LR_DFT)
    p.add_argument("--seed", type=int, default=SEED_DFT)
    p.add_argument("--checkpointDir", "-c", dest="checkpoint_dir", default=CHECKPOINT_DIR_DFT)
    p.add_argument("--baseWidth", dest="base_width", type=positive_int, default=BASE_WIDTH_DFT)
    p.add_argument("--patience", type=positive_int, default=PATIENCE_DFT,
                   help="stagnant validation epochs before the lr is reduced")
    p.add_argument("--lrFactor", dest="lr_factor", type=positive_float, default=LR_FACTOR_DFT)
    p.add_argument("--prefetch", type=positive_int, default=PREFETCH_DFT,
                   help="mini-batches loaded ahead by the feeder thread")
    p.add_argument("--resume", "-r", help="checkpoint to resume from")
    _add_netspec(p)
    p.set_defaults(func=cmd_train)
    cmds["train"] = p

    p = subs.add_parser("eval", help="score a checkpoint on a split", formatter_class=fmt)
    p.add_argument("checkpoint", nargs="?", help="checkpoint file or directory")
    _add_dataset(p, split_default="test")
    p.add_argument("--compare", help="second checkpoint, Wilcoxon test of checkpoint better than it")
    p.add_argument("--truthAsPrediction", action="store_true", help="score the labels against themselves")
    p.add_argument("--perSample", action="store_true", help="print the per-sample rows")
    p.add_argument("--out", "-o", help="csv file for the per-sample rows")
    p.add_argument("--noTiming", action="store_true", help="skip the inference timing")
    p.set_defaults(func=cmd_eval)
    cmds["eval"] = p

    p = subs.add_parser("predict", help="segment one image file", formatter_class=fmt)
    p.add_argument("checkpoint", help="checkpoint file or directory")
    p.add_argument("image", help="tensor container holding a (1, 1, H, W) image")
    p.add_argument("--out", "-o", help="output prefix (<image>_pred)")
    _add_netspec(p)
    p.set_defaults(func=cmd_predict)
    cmds["predict"] = p

    p = subs.add_parser("rf", help="receptive field report", formatter_class=fmt)
    p.add_argument("model", nargs="?", choices=MODEL_NAMES, default=MODEL_DFT)
    _add_netspec(p)
    p.add_argument("--accounting", "-a", choices=ACCOUNTINGS, help="only this accounting")
    p.add_argument("--size", type=positive_int, default=PHANTOM_SIZE_DFT, help="input side in px")
    p.set_defaults(func=cmd_rf)
    cmds["rf"] = p

    p = subs.add_parser("grid", help="gridding pattern of a dilation schedule", formatter_class=fmt)
    p.add_argument("dilations", type=positive_int, nargs="+")
    p.add_argument("--kernel", "-k", type=positive_int, default=3)
    p.set_defaults(func=cmd_grid)
    cmds["grid"] = p

    for p in cmds.values():
        _add_common(p)
    return parser, cmds


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse argv, file values from --config become the subcommand defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", "-C")
    known, _ = pre.parse_known_args(argv)
    parser, cmds = build_parser()
    if known.config:
        kv = read_kv(known.config)
        for p in cmds.values():
            dests = {a.dest for a in p._actions}
            p.set_defaults(**{k: v for k, v in kv.items() if k in dests})
        every = {a.dest for p in cmds.values() for a in p._actions}
        unknown = set(kv) - every
        if unknown:
            raise ConfigError(f"{known.config}: unknown keys {sorted(unknown)}")
    return parser.parse_args(argv)


def main_prg(argv: Optional[List[str]] = None) -> int:
    """Run the main programme, return the exit code."""
    try:
        args = parse_args(argv)
    except ConfigError as e:
        logging.basicConfig()
        logger.error(f"{e}")
        return EXIT_RUNTIME

    logging.basicConfig(format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logger.setLevel(args.logLevel)
    try:
        return args.func(args)
    except (ProgDilUNetError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main_prg())
