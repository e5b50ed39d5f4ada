# src/cli.py
"""
DesignerGAN command line.

    python -m src.cli train --data DIR/manifest.csv --out runs/desk [--config configs/desk.cfg] [--resume CKPT|auto]
    python -m src.cli infer --checkpoint runs/desk/model_final.dgan --input street.png --out out/ [--seed 0] [--native] [--gradcam-layer -1]
    python -m src.cli evaluate --checkpoint CKPT --data DIR/manifest.csv [--split test] [--generated model] [--pdf] [--gradcam-layer -1]
    python -m src.cli synth-data --out data/synth --n 90 --resolution 64 --seed 0
    python -m src.cli gradcheck

Exit codes: 0 success, 2 config, 3 data, 4 input contract, 5 numeric failure.
"""
import argparse
import os
import sys
from typing import List, Optional

from src.autodiff.gradcheck import run_primitive_suite
from src.config import TrainConfig, desk_preset, full_preset, load_config, load_settings
from src.data.dataset import load_dataset, load_manifest
from src.data.synthetic import synth_generate
from src.errors import DesignerGanError, NumericError
from src.evaluation.metrics import GENERATED_SOURCES, evaluate_samples
from src.evaluation.report import ReportRenderer, append_to_metrics_log, write_text_report
from src.networks.checkpoint import load_checkpoint
from src.training.orchestrator import TrainingOrchestrator, assemble_pipeline
from src.training.trainer import latest_checkpoint
from src.utils.image_utils import load_image
from src.utils.logging_utils import set_level

PRESETS = {
    "desk": lambda: desk_preset(),
    "full_1024": lambda: full_preset(1024),
    "full_1536": lambda: full_preset(1536),
}


def _print_resolved(title: str, config: Optional[TrainConfig] = None, seed: int = None, **extra):
    print(f"=== {title} ===")
    if config is not None:
        print(config.to_lines(), end="")
    for k, v in extra.items():
        print(f"{k}={v}")
    if seed is not None:
        print(f"resolved_seed={seed}")


def _bundle_config(bundle) -> Optional[TrainConfig]:
    raw = bundle.metadata.get("config")
    return TrainConfig(**raw) if raw else None


# -------------------------
# Commands
# -------------------------
def cmd_train(args) -> int:
    config = load_config(args.config) if args.config else PRESETS[args.preset]()
    resume = args.resume
    if resume == "auto":
        resume = latest_checkpoint(args.out)
    _print_resolved("train", config, config.seed, data=args.data, out=args.out, resume=resume or "-")
    state = TrainingOrchestrator(config, load_settings(), progress=args.progress).run(
        args.data, args.out, resume=resume, resplit=args.resplit)
    print(f"final_checkpoint={state.final_checkpoint}")
    for k, v in state.training_summary.items():
        print(f"{k}={v}")
    return 0


def cmd_infer(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    pipeline = assemble_pipeline(bundle)
    _print_resolved("infer", _bundle_config(bundle), args.seed, checkpoint=args.checkpoint, input=args.input,
                    resolution="native" if args.native else pipeline.resolution,
                    gradcam_layer=pipeline.gradcam_layer if args.gradcam_layer is None else args.gradcam_layer)
    image = load_image(args.input, None if args.native else pipeline.resolution)
    result = pipeline.infer(image, seed=args.seed, gradcam_layer=args.gradcam_layer)
    paths = pipeline.write_artifacts(result, image, args.out)
    print(f"policy={result.policy_id} ({result.policy_name}) p={result.probs[result.policy_id - 1]:.4f}")
    for name, path in paths.items():
        print(f"wrote {path}")
    return 0


def cmd_evaluate(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    config = _bundle_config(bundle)
    resolution = config.resolution if config else 64
    layer = args.gradcam_layer if args.gradcam_layer is not None else (config.gradcam_layer if config else -1)
    settings = load_settings()
    _print_resolved("evaluate", config, args.seed, checkpoint=args.checkpoint, data=args.data,
                    split=args.split, generated=args.generated, gradcam_layer=layer)
    dataset = load_dataset(load_manifest(args.data), resolution, settings.threads)
    samples = dataset.split(args.split)
    report = evaluate_samples(bundle, samples, args.generated, args.split, args.seed, settings.threads,
                              with_attention=not args.no_attention, gradcam_layer=layer)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    path = write_text_report(report, os.path.join(out_dir, f"eval_{args.split}_{args.generated}.tsv"),
                             header=[f"checkpoint={args.checkpoint}", f"seed={args.seed}"])
    for line in report.to_lines():
        print(line)
    log = append_to_metrics_log(report, os.path.join(out_dir, "metrics.tsv"),
                                f"split={args.split} generated={args.generated} checkpoint={args.checkpoint}")
    print(f"wrote {path}")
    print(f"appended to {log}")
    if args.pdf:
        pdf = ReportRenderer().render_to_file(report, os.path.join(out_dir, "eval_report.pdf"), args.checkpoint)
        print(f"wrote {pdf}")
    return 0


def cmd_synth_data(args) -> int:
    _print_resolved("synth-data", None, args.seed, out=args.out, n=args.n, resolution=args.resolution)
    manifest = synth_generate(args.n, args.resolution, args.seed, args.out)
    for line in manifest.reference_report():
        print(line)
    print(f"wrote {os.path.join(args.out, 'manifest.csv')} and roi.csv")
    return 0


def cmd_gradcheck(args) -> int:
    _print_resolved("gradcheck", None, args.seed, points=args.points, networks=not args.no_networks)
    reports = run_primitive_suite(seed=args.seed, n_points=args.points, include_networks=not args.no_networks)
    for r in reports:
        print(r.line())
        for d in r.details:
            print(f"    {d}")
    failed = [r.name for r in reports if not r.passed]
    if failed:
        raise NumericError(f"{len(failed)} gradient checks failed: {', '.join(failed)}")
    print(f"all {len(reports)} gradient checks passed")
    return 0


# -------------------------
# Parser
# -------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="designergan", description="Urban intervention cGAN at desk scale")
    parser.add_argument("--log-level", default=None, help="override DGAN_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="GAN phase then classifier phase")
    p.add_argument("--config", help="key=value config file (default: --preset)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--data", required=True, help="manifest.csv")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", help="checkpoint to resume from, or 'auto' for the latest in --out")
    p.add_argument("--resplit", action="store_true", help="re-split the manifest with split_ratios and seed")
    p.add_argument("--progress", action="store_true", help="show per-epoch progress bars")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="policy, attention map and generated image for one input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="noise seed for the generator")
    p.add_argument("--native", action="store_true", help="keep the input resolution instead of resizing")
    p.add_argument("--gradcam-layer", type=int, default=None,
                   help="classifier block for Grad-CAM (default: the checkpoint's gradcam_layer)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="FID, ROI-FID, policy MSE, CE and accuracy on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--generated", choices=GENERATED_SOURCES, default="model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default: checkpoint directory)")
    p.add_argument("--pdf", action="store_true", help="also render eval_report.pdf")
    p.add_argument("--no-attention", action="store_true", help="skip the Grad-CAM ROI hit rate")
    p.add_argument("--gradcam-layer", type=int, default=None,
                   help="classifier block for the ROI hit rate (default: the checkpoint's gradcam_layer)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth-data", help="write a synthetic paired corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=90)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and network")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--no-networks", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: List[str] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_settings()
    set_level(args.log_level or settings.log_level)
    try:
        return args.func(args)
    except DesignerGanError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
