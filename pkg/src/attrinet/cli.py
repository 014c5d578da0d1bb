"""Command-line interface: dataset generation, contamination, training,
evaluation and explanation export.

One subcommand per pipeline stage.  ``train`` accepts a JSON config file whose
keys mirror ``TrainConfig``; explicit flags win over config values, and the
effective merged config is echoed into the output directory.  Exit codes:
0 success, 2 usage/validation, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataset as ds
from . import explain as explain_mod
from . import guidance as guid_mod
from . import metrics as metrics_mod
from . import trainer as trainer_mod
from .checkpoint import load_checkpoint
from .classifier import ThresholdTable
from .errors import AttriNetError, DataError, NumericalError
from .losses import LossWeights

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

ABLATIONS = {
    "cls": ("adv", "reg", "ctr", "guid"),
    "cls_adv": ("reg", "ctr", "guid"),
    "cls_adv_reg": ("ctr", "guid"),
    "cls_adv_reg_ctr": ("guid",),
    "all": (),
}


def _parse_box(text: str) -> tuple[int, int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 4:
        raise ValueError(f"expected x,y,w,h — got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _echo_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_make_synthetic(args) -> int:
    out = ds.make_synthetic(
        out_dir=args.out,
        num_samples=args.n,
        num_classes=args.classes,
        size=args.size,
        rng_seed=args.seed,
        annotated_fraction=args.annotated_fraction,
    )
    _echo_config(
        Path(args.out),
        {
            "command": "make-synthetic",
            "n": args.n,
            "classes": args.classes,
            "size": args.size,
            "seed": args.seed,
            "annotated_fraction": args.annotated_fraction,
        },
    )
    print(f"wrote synthetic dataset to {out}")
    return EXIT_OK


def cmd_contaminate(args) -> int:
    spec = ds.ContaminationSpec(
        target_class=getattr(args, "class"),
        fraction=args.fraction,
        tag_text=args.text,
        tag_region=_parse_box(args.region) if args.region else None,
        pixel_value=args.value,
    )
    out = ds.contaminate(args.dataset, spec, args.seed, args.out)
    _echo_config(
        Path(args.out),
        {
            "command": "contaminate",
            "dataset": str(args.dataset),
            "class": spec.target_class,
            "fraction": spec.fraction,
            "text": spec.tag_text,
            "region": list(spec.tag_region) if spec.tag_region else None,
            "value": spec.pixel_value,
            "seed": args.seed,
        },
    )
    n = len(ds.read_injection_log(out / "injection_log.jsonl"))
    print(f"wrote contaminated dataset to {out} ({n} images tagged)")
    return EXIT_OK


def _train_config_from_args(args, num_classes: int, image_size: int) -> trainer_mod.TrainConfig:
    data: dict = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
    overrides = {
        "generator_steps": args.steps,
        "batch_size": args.batch_size,
        "checkpoint_every": args.checkpoint_every,
        "seed": args.seed,
        "scale": args.scale,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if args.guidance is not None:
        mode = args.guidance
        freq = data.get("guidance", {}).get("oversample_annotated_freq", 0.1)
        if mode == "avoidance":
            data["guidance"] = {"mode": "fixed", "oversample_annotated_freq": freq}
        else:
            data["guidance"] = {"mode": mode, "oversample_annotated_freq": freq}
    cfg = trainer_mod.TrainConfig.from_dict(data)
    if args.ablation:
        zeroed = ABLATIONS[args.ablation]
        lw = {
            f: (0.0 if f in zeroed else getattr(cfg.loss_weights, f))
            for f in ("adv", "cls", "reg", "ctr", "guid", "l1_neg", "l1_pos")
        }
        cfg.loss_weights = LossWeights(**lw)
    if args.guidance == "avoidance":
        if not args.avoid_log:
            raise ValueError("--guidance avoidance requires --avoid-log")
        cfg.guidance = guid_mod.avoidance_policy_from_log(
            ds.read_injection_log(args.avoid_log),
            image_size,
            num_classes,
            center_box=_parse_box(args.avoid_center) if args.avoid_center else None,
            oversample_annotated_freq=cfg.guidance.oversample_annotated_freq,
        )
    return cfg


def cmd_train(args) -> int:
    dataset = ds.ManifestDataset(args.dataset)
    cfg = _train_config_from_args(args, dataset.num_classes, dataset.image_size)
    val = ds.ManifestDataset(args.val) if args.val else None
    out_dir = Path(args.out)
    echo = cfg.to_dict()
    echo.update(
        {
            "command": "train",
            "dataset": str(args.dataset),
            "val": str(args.val) if args.val else None,
            "guidance_flag": args.guidance,
            "avoid_log": str(args.avoid_log) if args.avoid_log else None,
            "ablation": args.ablation,
        }
    )
    _echo_config(out_dir, echo)
    result = trainer_mod.train(
        dataset, cfg, out_dir, val_dataset=val, resume_from=args.resume
    )
    print(f"final checkpoint: {result.final_checkpoint}")
    if result.best_checkpoint:
        print(f"best checkpoint:  {result.best_checkpoint} (val AUC {result.best_auc:.4f})")
    print(f"loss log:         {result.loss_log}")
    return EXIT_OK


def cmd_eval(args) -> int:
    loaded = load_checkpoint(args.checkpoint)
    dataset = ds.ManifestDataset(args.dataset)
    thresholds = None
    if args.thresholds:
        thresholds = ThresholdTable.from_json(args.thresholds, loaded.bundle.class_names)
    injection = ds.read_injection_log(args.injection_log) if args.injection_log else None
    which = (
        ("auc", "class_sensitivity", "disease_sensitivity")
        if args.metrics == "all"
        else tuple(args.metrics.split(","))
    )
    out_dir = Path(args.out)
    _echo_config(
        out_dir,
        {
            "command": "eval",
            "checkpoint": str(args.checkpoint),
            "dataset": str(args.dataset),
            "metrics": args.metrics,
            "thresholds": str(args.thresholds) if args.thresholds else None,
            "injection_log": str(args.injection_log) if args.injection_log else None,
            "magnitude": args.magnitude,
            "seed": args.seed,
        },
    )
    results = metrics_mod.report(
        loaded.bundle,
        dataset,
        out_dir,
        thresholds=thresholds,
        injection_log=injection,
        which=which,
        magnitude=args.magnitude,
        rng_seed=args.seed,
    )
    for metric, per_class in results.items():
        if isinstance(per_class, dict) and "mean" in per_class:
            print(f"{metric}: mean={per_class['mean']:.4f}")
    return EXIT_OK


def cmd_explain(args) -> int:
    loaded = load_checkpoint(args.checkpoint)
    bundle = loaded.bundle
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(
        out_dir,
        {
            "command": "explain",
            "checkpoint": str(args.checkpoint),
            "dataset": str(args.dataset) if args.dataset else None,
            "ids": args.ids,
            "global": args.global_,
            "flip_sign": args.flip_sign,
        },
    )
    if args.global_:
        paths = explain_mod.save_global_panels(explain_mod.global_explain(bundle), out_dir)
        print(f"wrote {len(paths)} global explanation files to {out_dir}")
    if args.ids:
        if not args.dataset:
            raise ValueError("--ids requires --dataset")
        dataset = ds.ManifestDataset(args.dataset)
        index_by_id = {r.id: i for i, r in enumerate(dataset.records)}
        for sample_id in args.ids.split(","):
            if sample_id not in index_by_id:
                raise DataError(f"unknown sample id {sample_id!r}")
            i = index_by_id[sample_id]
            batch = dataset.batch([i])
            for c, name in enumerate(bundle.class_names):
                exp = explain_mod.local_explain(bundle, batch.pixels, c)
                explain_mod.export_local_explanation(
                    exp, batch.pixels[0, 0].numpy(), out_dir, sample_id, name, args.flip_sign
                )
        print(f"wrote local explanations to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attrinet",
        description="Counterfactual attribution classifier: data, training, evaluation, explanations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--annotated-fraction", type=float, default=1.0)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("contaminate", help="stamp a spurious tag onto one class's positives")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--class", type=int, required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--text", default="CXR-ROOM1")
    p.add_argument("--region", default=None, help="x,y,w,h tag box (default: top-left)")
    p.add_argument("--value", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_contaminate)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--config", default=None, help="JSON file with TrainConfig fields")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scale", choices=["desk", "full"], default=None)
    p.add_argument(
        "--guidance", choices=["none", "full", "mixed", "avoidance"], default=None
    )
    p.add_argument("--avoid-log", default=None, help="injection log for avoidance guidance")
    p.add_argument("--avoid-center", default=None, help="x,y,w,h box the model may use")
    p.add_argument("--ablation", choices=sorted(ABLATIONS), default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute metric tables for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default="all")
    p.add_argument("--thresholds", default=None)
    p.add_argument("--injection-log", default=None)
    p.add_argument("--magnitude", choices=["abs", "positive"], default="abs")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="export local and global explanations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--ids", default=None, help="comma-separated sample ids")
    p.add_argument("--global", dest="global_", action="store_true")
    p.add_argument("--flip-sign", action="store_true", help="render-only sign flip")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv: list[str] | None = None) -> int:
    trainer_mod.apply_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, AttriNetError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
