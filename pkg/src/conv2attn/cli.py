"""Command-line surface: convert, verify, analyze, train.

Every run prints exactly one JSON summary line to stdout whose last key is
"ok"; progress text goes to stderr and is silenced by --quiet. Exit codes:
0 success, 1 verification/criterion failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import construction, model_io, rank_analysis, training
from .construction import BOUNDARY_MODES, BOUNDARY_PHANTOM, conv_to_mhsa, evaluate_converted
from .convolution import ConvKernel, conv2d, random_kernel
from .errors import ArchiveError, CapacityError, DimensionError, InvalidArgumentError, NumericError
from .patches import Image

CONFIG_VERSION = 1

_USAGE_ERRORS = (
    InvalidArgumentError,
    DimensionError,
    CapacityError,
    ArchiveError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
    NotADirectoryError,
    json.JSONDecodeError,
)

_DTYPES = {"f32": np.float32, "f64": np.float64}


class _CliParser(argparse.ArgumentParser):
    """Argument parser that keeps the one-JSON-line-per-run contract."""

    def error(self, message):
        print(json.dumps({"error": message, "ok": False}))
        self.print_usage(sys.stderr)
        raise SystemExit(2)


def _emit(summary: dict, ok: bool) -> None:
    summary = dict(summary)
    summary.pop("ok", None)
    summary["ok"] = ok
    print(json.dumps(summary))


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text, file=sys.stderr)


def _load_as(path: str, expected_type, what: str):
    model = model_io.load(path)
    if not isinstance(model, expected_type):
        raise InvalidArgumentError(
            f"{path} holds a {type(model).__name__}, expected {what}"
        )
    return model


def cmd_head_count(args) -> int:
    n_h = construction.head_count(args.kernel, args.patch)
    radius = construction.ring_radius(args.kernel, args.patch)
    _say(args, f"kernel {args.kernel} with patch {args.patch}: {n_h} heads (radius {radius})")
    _emit({"command": "head-count", "K": args.kernel, "P": args.patch,
           "R": radius, "N_H": n_h}, ok=True)
    return 0


def cmd_convert(args) -> int:
    kernel = _load_as(args.in_path, ConvKernel, "a convolution kernel")
    if args.dtype is not None and _DTYPES[args.dtype] != kernel.dtype:
        kernel = ConvKernel(weights=kernel.weights.astype(_DTYPES[args.dtype]))
    model = conv_to_mhsa(
        kernel, args.patch, bias_scale=args.bias_scale, boundary=args.boundary
    )
    model_io.save(model, args.out_path)
    _say(args, f"wrote {args.out_path}: {model.n_heads} heads, boundary {model.boundary}")
    _emit(
        {
            "command": "convert",
            "in": args.in_path,
            "out": args.out_path,
            "K": model.kernel_size,
            "P": model.patch,
            "N_H": model.n_heads,
            "M": model.bias_scale,
            "boundary": model.boundary,
            "dtype": "f32" if model.weights.dtype == np.float32 else "f64",
        },
        ok=True,
    )
    return 0


def _interior_pixel_mask(height: int, width: int, patch: int, radius: int) -> np.ndarray:
    """True for pixels of patches at grid distance >= radius from every edge."""
    gh, gw = height // patch, width // patch
    mask = np.zeros((height, width), dtype=bool)
    if gh > 2 * radius and gw > 2 * radius:
        mask[radius * patch : (gh - radius) * patch, radius * patch : (gw - radius) * patch] = True
    return mask


def cmd_verify(args) -> int:
    kernel = _load_as(args.conv, ConvKernel, "a convolution kernel")
    model = _load_as(args.mhsa, construction.ConvertedModel, "a converted attention model")
    if (model.kernel_size, model.channels_in, model.channels_out) != (
        kernel.size,
        kernel.channels_in,
        kernel.channels_out,
    ):
        raise InvalidArgumentError(
            "converted model and kernel disagree on kernel size or channel counts"
        )
    if args.trials < 1:
        raise InvalidArgumentError(f"trials must be >= 1, got {args.trials}")
    dtype = _DTYPES[args.dtype] if args.dtype else kernel.dtype
    if kernel.dtype != dtype:
        kernel = ConvKernel(weights=kernel.weights.astype(dtype))

    rng = np.random.default_rng(args.seed)
    interior = None
    if args.interior_only:
        interior = _interior_pixel_mask(
            args.height, args.width, model.patch, model.offsets.radius
        )
    max_diff = 0.0
    for trial in range(args.trials):
        img = Image(
            data=rng.normal(size=(args.height, args.width, kernel.channels_in)).astype(dtype)
        )
        want = conv2d(img, kernel).data
        got = evaluate_converted(model, img).data
        diff = np.abs(want - got)
        if interior is not None:
            diff = diff[interior] if interior.any() else np.zeros(1)
        max_diff = max(max_diff, float(diff.max()))
        _say(args, f"trial {trial}: running max abs diff {max_diff:.3e}")
    ok = max_diff <= args.tol
    _emit(
        {
            "command": "verify",
            "trials": args.trials,
            "height": args.height,
            "width": args.width,
            "interiorOnly": bool(args.interior_only),
            "tol": args.tol,
            "maxAbsDiff": max_diff,
        },
        ok=ok,
    )
    return 0 if ok else 1


def cmd_rank_bound(args) -> int:
    if args.trials < 1:
        raise InvalidArgumentError(f"trials must be >= 1, got {args.trials}")
    dtype = _DTYPES[args.dtype] if args.dtype else np.float64
    rng = np.random.default_rng(args.seed)
    ranks, residuals, sigmas, gaps = [], [], [], []
    for _ in range(args.trials):
        if args.setting == "pixel":
            if args.dim is None:
                raise InvalidArgumentError("pixel setting requires --dim")
            kernel = random_kernel(args.kernel, args.dim, 1, rng, dtype=dtype)
            report = rank_analysis.verify_lower_bound("pixel", kernel, args.heads)
        else:
            if args.patch is None:
                raise InvalidArgumentError("patch setting requires --patch")
            # all-nonzero entries, bounded away from zero
            w = rng.uniform(0.5, 1.5, size=(args.kernel, args.kernel, 1, 1))
            w *= rng.choice([-1.0, 1.0], size=w.shape)
            kernel = ConvKernel(weights=w.astype(dtype))
            report = rank_analysis.verify_lower_bound(
                "patch", kernel, args.heads, patch=args.patch
            )
        ranks.append(report.rank)
        residuals.append(report.residual)
        sigmas.append(report.sigma1)
        gaps.append(report.certified_gap)
    fraction = float(np.mean(gaps))
    _say(
        args,
        f"{args.setting} setting, {args.trials} kernels: rank range "
        f"[{min(ranks)}, {max(ranks)}], certified gap fraction {fraction:.3f}",
    )
    summary = {
        "command": "rank-bound",
        "setting": args.setting,
        "K": args.kernel,
        "heads": args.heads,
        "trials": args.trials,
        "rankMin": int(min(ranks)),
        "rankMax": int(max(ranks)),
        "residualMin": float(min(residuals)),
        "residualMean": float(np.mean(residuals)),
        "sigma1Mean": float(np.mean(sigmas)),
        "certifiedGapFraction": fraction,
    }
    if args.setting == "pixel":
        summary["dim"] = args.dim
    else:
        summary["P"] = args.patch
    _emit(summary, ok=True)
    return 0


def _phase_config(block: dict, default_seed: int, name: str) -> training.TrainConfig:
    try:
        return training.TrainConfig(
            epochs=int(block["epochs"]),
            learning_rate=float(block["learningRate"]),
            momentum=float(block.get("momentum", 0.9)),
            batch_size=int(block["batchSize"]),
            seed=int(block.get("seed", default_seed)),
            trainable=frozenset(block["trainable"]),
        )
    except KeyError as exc:
        raise InvalidArgumentError(f"config section {name!r} is missing field {exc}") from exc


def _metrics_jsonl(path: Path, metrics: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in metrics:
            fh.write(json.dumps(entry) + "\n")


def cmd_train(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise InvalidArgumentError("config must be a JSON object")
    if cfg.get("configVersion") != CONFIG_VERSION:
        raise InvalidArgumentError(
            f"unsupported configVersion {cfg.get('configVersion')!r}, expected {CONFIG_VERSION}"
        )
    try:
        seed = int(cfg.get("seed", args.seed))
        out_dir = Path(cfg["outDir"])
        ds = cfg["dataset"]
        model_cfg = cfg["model"]
        dataset_cfg = training.DatasetConfig(
            seed=int(ds.get("seed", seed)),
            samples=int(ds["samples"]),
            height=int(ds["height"]),
            width=int(ds["width"]),
            channels=int(ds["channels"]),
            num_classes=int(ds["numClasses"]),
        )
        phase1 = _phase_config(cfg["phase1"], seed + 1, "phase1")
        phase2 = _phase_config(cfg["phase2"], seed + 2, "phase2")
        kernel_size = int(model_cfg["kernelSize"])
        feature_channels = int(model_cfg["featureChannels"])
        patch = int(model_cfg["patch"])
        bias_scale = float(model_cfg.get("biasScale", construction.DEFAULT_BIAS_SCALE))
        boundary = str(model_cfg.get("boundary", BOUNDARY_PHANTOM))
        init_seed = int(model_cfg.get("initSeed", seed + 3))
        init_scale = float(model_cfg.get("initScale", 0.3))
    except KeyError as exc:
        raise InvalidArgumentError(f"config is missing field {exc}") from exc

    _say(args, f"phase 1: {phase1.epochs} epochs over {dataset_cfg.samples} samples")
    report = training.run_two_phase(
        phase1,
        phase2,
        dataset_cfg,
        kernel_size=kernel_size,
        feature_channels=feature_channels,
        patch=patch,
        bias_scale=bias_scale,
        boundary=boundary,
        init_seed=init_seed,
        init_scale=init_scale,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    _metrics_jsonl(out_dir / "phase1_metrics.jsonl", report.phase1_metrics)
    _metrics_jsonl(out_dir / "phase2_metrics.jsonl", report.phase2_metrics)
    model_io.save(report.conv_model, out_dir / "conv_classifier.c2a")
    model_io.save(report.attn_model, out_dir / "attn_classifier.c2a")
    check = report.transfer_check
    report_json = {
        "transferCheck": {
            "maxLogitDiff": check.max_logit_diff,
            "valLossDiff": check.val_loss_diff,
            "ok": check.ok,
        },
        "phase1Final": report.phase1_metrics[-1],
        "phase2Final": report.phase2_metrics[-1],
    }
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report_json, fh, indent=2)
        fh.write("\n")
    _say(
        args,
        f"phase 1 final val acc {report.phase1_metrics[-1]['valAcc']:.3f}, "
        f"phase 2 final val acc {report.phase2_metrics[-1]['valAcc']:.3f}, "
        f"transfer max logit diff {check.max_logit_diff:.2e}",
    )
    _emit(
        {
            "command": "train",
            "outDir": str(out_dir),
            "phase1FinalValLoss": report.phase1_metrics[-1]["valLoss"],
            "phase1FinalValAcc": report.phase1_metrics[-1]["valAcc"],
            "phase2FinalValLoss": report.phase2_metrics[-1]["valLoss"],
            "phase2FinalValAcc": report.phase2_metrics[-1]["valAcc"],
            "transferMaxLogitDiff": check.max_logit_diff,
        },
        ok=check.ok,
    )
    return 0 if check.ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = _CliParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument(
        "--dtype", choices=sorted(_DTYPES), default=None, help="element type for new tensors"
    )
    common.add_argument("--quiet", action="store_true", help="suppress progress text")

    parser = _CliParser(prog="conv2attn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_CliParser)

    p = sub.add_parser("head-count", parents=[common],
                       help="heads needed to express a kernel at a patch size")
    p.add_argument("--kernel", type=int, required=True, help="odd kernel size K")
    p.add_argument("--patch", type=int, required=True, help="patch resolution P")
    p.set_defaults(func=cmd_head_count)

    p = sub.add_parser("convert", parents=[common],
                       help="convert a saved kernel into an attention model")
    p.add_argument("--in", dest="in_path", required=True, help="input kernel archive")
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--out", dest="out_path", required=True, help="output model archive")
    p.add_argument("--bias-scale", type=float, default=construction.DEFAULT_BIAS_SCALE)
    p.add_argument("--boundary", choices=BOUNDARY_MODES, default=BOUNDARY_PHANTOM)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("verify", parents=[common],
                       help="check a converted model against its kernel on random images")
    p.add_argument("--conv", required=True, help="kernel archive")
    p.add_argument("--mhsa", required=True, help="converted model archive")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--tol", type=float, required=True)
    p.add_argument("--interior-only", action="store_true",
                   help="compare only patches away from the grid boundary")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("rank-bound", parents=[common],
                       help="measure low-rank residuals certifying head lower bounds")
    p.add_argument("--setting", choices=("pixel", "patch"), required=True)
    p.add_argument("--kernel", type=int, required=True)
    p.add_argument("--dim", type=int, default=None, help="channel count (pixel setting)")
    p.add_argument("--patch", type=int, default=None, help="patch resolution (patch setting)")
    p.add_argument("--heads", type=int, required=True)
    p.add_argument("--trials", type=int, default=50)
    p.set_defaults(func=cmd_rank_bound)

    p = sub.add_parser("train", parents=[common],
                       help="run the two-phase training pipeline from a JSON config")
    p.add_argument("--config", required=True, help="JSON config file")
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        _emit({"error": str(exc)}, ok=False)
        return 2
    except NumericError as exc:
        _emit({"error": str(exc)}, ok=False)
        return 1


if __name__ == "__main__":
    sys.exit(main())
