"""Command-line entry point: ``ocrm {train,fit-svdd,score,eval,ablate}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training diverged.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import container, data, evaluate, pipeline, svdd

log = logging.getLogger("ocrm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
MODEL_FILE = "model.ocrm"
LOSS_FILE = "losses.csv"
SCORES_FILE = "scores.csv"


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


# flag name -> RunConfig key
FLAG_KEYS = {"class_": "positive_class", "arm": "arm", "trials": "trials", "seed": "seed",
             "epochs": "epochs", "k": "k", "c": "c", "out": "out", "n_train": "n_train"}


def _resolve(args):
    overrides = {key: getattr(args, flag, None) for flag, key in FLAG_KEYS.items()}
    try:
        return cfgmod.resolve(args.config, overrides)
    except cfgmod.ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc


def _protocol(rc):
    return evaluate.Protocol(train=rc.train_config(), dataset=rc.dataset, root=rc.data_dir,
                             positive_class=rc.positive_class, n_train=rc.n_train or None)


def _load_data(rc):
    try:
        return evaluate.load_protocol_data(_protocol(rc))
    except (OSError, data.FormatError, data.EmptyDatasetError, data.ClassAbsentError) as exc:
        raise CliError(f"data error: {exc}", EXIT_DATA) from exc


def _model_path(args, rc):
    return Path(args.model) if getattr(args, "model", None) else Path(rc.out) / MODEL_FILE


def _load_model(path):
    if not path.exists():
        raise CliError(f"model file not found: {path}", EXIT_DATA)
    try:
        return container.load_model(path)
    except container.ContainerError as exc:
        raise CliError(f"{path}: {exc}", EXIT_DATA) from exc


# ------------------------------------------------------------- commands

def cmd_train(rc, args):
    x_train, _, _ = _load_data(rc)
    out = Path(rc.out)
    cfgmod.write_resolved(rc, out)
    model = pipeline.train(x_train, rc.train_config())
    container.save_model(out / MODEL_FILE, model)
    (out / LOSS_FILE).write_text(model.history_csv())
    print(f"wrote {out / MODEL_FILE} and {out / LOSS_FILE}")


def cmd_fit_svdd(rc, args):
    path = _model_path(args, rc)
    det = _load_model(path)
    cfg = det.model.config
    if not pipeline.uses_svdd(cfg.arm):
        raise CliError(f"arm {cfg.arm!r} scores by reconstruction error and has no SVDD stage", EXIT_CONFIG)
    x_train, _, _ = _load_data(rc)
    cfgmod.write_resolved(rc, path.parent)
    try:
        sv = pipeline.fit_svdd_stage(det.model, x_train)
    except svdd.SvddError as exc:
        raise CliError(f"SVDD fit failed: {exc}", EXIT_DATA) from exc
    container.save_model(path, det.model, sv)
    print(f"SVDD stage ({len(sv.alphas)} support vectors, r2={sv.r2:.6g}) written to {path}")


def read_images(path, channels):
    """Images to score: a uint8 ``.npy`` array (``[N,C,H,W]``, ``[N,H,W]``,
    ``[C,H,W]`` or ``[H,W]``), a single image file, or a directory of images."""
    p = Path(path)
    if not p.exists():
        raise CliError(f"input not found: {p}", EXIT_DATA)
    try:
        if p.is_dir():
            arr = data.load_image_dir(p).images
        elif p.suffix == ".npy":
            arr = np.load(p)
            if arr.ndim == 2:
                arr = arr[None, None]
            elif arr.ndim == 3:
                # [N,H,W] for grayscale stacks, otherwise a single [C,H,W] image
                arr = arr[:, None] if channels == 1 and arr.shape[0] != 1 else arr[None]
            if arr.ndim != 4:
                raise CliError(f"{p}: expected an array of rank 2 to 4, got {arr.ndim}", EXIT_DATA)
        else:
            arr = data.decode_image(p)[None]
    except data.FormatError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    if arr.shape[1] != channels:
        raise CliError(f"{p}: model expects {channels}-channel images, got {arr.shape[1]}", EXIT_DATA)
    return data.preprocess(arr)


def cmd_score(rc, args):
    if not args.input:
        raise CliError("score needs --input", EXIT_CONFIG)
    det = _load_model(_model_path(args, rc))
    x = read_images(args.input, det.model.config.channels)
    try:
        scores = pipeline.score_images(det, x)
    except pipeline.MissingStageError as exc:
        raise CliError(f"{exc}; run fit-svdd first", EXIT_CONFIG) from exc
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_resolved(rc, out)
    lines = ["sample_index,score"] + [f"{i},{float(s)!r}" for i, s in enumerate(scores)]
    (out / SCORES_FILE).write_text("\n".join(lines) + "\n")
    print(f"wrote {len(scores)} scores to {out / SCORES_FILE}")


def _report(rc, report, stem):
    out = Path(rc.out)
    suffix = "csv" if rc.report_format == "csv" else "md"
    path = evaluate.emit_report(report, out / f"{stem}.{suffix}", rc.report_format)
    print(evaluate.report_markdown(report), end="")
    print(f"wrote {path}")


def cmd_eval(rc, args):
    prepared = _load_data(rc)
    cfgmod.write_resolved(rc, rc.out)
    proto = _protocol(rc)
    proto.scores_dir = str(Path(rc.out) / "scores")
    _report(rc, evaluate.run_trials(proto, rc.trials, prepared), "report")


def cmd_ablate(rc, args):
    prepared = _load_data(rc)
    cfgmod.write_resolved(rc, rc.out)
    proto = _protocol(rc)
    proto.scores_dir = str(Path(rc.out) / "scores")
    _report(rc, evaluate.run_ablation(proto, rc.trials, prepared), "ablation")


COMMANDS = {"train": cmd_train, "fit-svdd": cmd_fit_svdd, "score": cmd_score,
            "eval": cmd_eval, "ablate": cmd_ablate}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("--class", dest="class_", type=int, help="in-class label")
    common.add_argument("--arm", choices=pipeline.ARMS)
    common.add_argument("--trials", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--c", type=float)
    common.add_argument("--out", help="output directory")
    common.add_argument("--n-train", dest="n_train", type=int, help="use the first N in-class training images")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="ocrm", description="One-class recognition with adversarially shaped augmented features.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="stage one: train the networks")
    fit = sub.add_parser("fit-svdd", parents=[common], help="stage two: fit the SVDD on training features")
    fit.add_argument("--model", help=f"model container (default OUT/{MODEL_FILE})")
    score = sub.add_parser("score", parents=[common], help="score images with a trained model")
    score.add_argument("--model", help=f"model container (default OUT/{MODEL_FILE})")
    score.add_argument("--input", help=".npy array, image file or image directory")
    sub.add_parser("eval", parents=[common], help="repeated-trial protocol for one class")
    sub.add_parser("ablate", parents=[common], help="all five ablation arms for one class")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = _resolve(args)
        COMMANDS[args.command](rc, args)
    except CliError as exc:
        print(f"ocrm: {exc}", file=sys.stderr)
        return exc.code
    except pipeline.TrainingDivergenceError as exc:
        print(f"ocrm: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
