"""Alternating training loop: critic, generator, classifier heads, class centers.

Classes are visited round-robin.  Per visited class the critic takes several
update steps (with extra boost steps early on and periodically), the generator
takes one step on the weighted total objective, the current class's head takes
several steps, and the class centers take one SGD step.

Every random draw is derived statelessly from (seed, step, stream, k), so a
resumed run continues bit-for-bit where it stopped.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .classifier import calibrate_thresholds, default_pool_factor
from .dataset import ManifestDataset
from .errors import NaNLoss
from .guidance import GuidanceMask, GuidancePolicy, build_pseudo_binary, select_mask
from .losses import (
    GeneratorLossTerms,
    LossWeights,
    adversarial_loss,
    center_loss,
    classification_loss,
    critic_loss,
    guidance_loss,
    reg_loss,
    total_generator_loss,
    update_centers,
)
from .metrics import auc
from .model import ModelBundle, build_model, predict_dataset

LOG_TERMS = ("critic", "gp", "adv", "cls", "reg", "ctr", "guid", "total")


def apply_thread_env() -> None:
    """Honor ATTRINET_THREADS: 0 means fully serial (single torch thread)."""
    raw = os.environ.get("ATTRINET_THREADS")
    if raw is None:
        return
    n = int(raw)
    torch.set_num_threads(max(1, n))


@dataclass
class TrainConfig:
    generator_steps: int = 2000
    batch_size: int = 4
    lr_adam: float = 1e-4
    adam_betas: tuple[float, float] = (0.5, 0.999)
    lr_centers: float = 0.1
    critic_steps_per_gen: int = 5
    critic_boost_every: int = 100
    critic_boost_steps: int = 100
    critic_boost_initial: int = 25
    critic_boost_additive: bool = True
    classifier_steps_per_gen: int = 5
    checkpoint_every: int = 250
    scale: str = "desk"
    pool_factor: int | None = None
    gp_coeff: float = 10.0
    class_order: str = "cyclic"  # or "shuffled"
    guidance: GuidancePolicy = field(default_factory=GuidancePolicy)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        for name in (
            "generator_steps",
            "batch_size",
            "critic_steps_per_gen",
            "critic_boost_every",
            "critic_boost_steps",
            "critic_boost_initial",
            "classifier_steps_per_gen",
            "checkpoint_every",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.class_order not in ("cyclic", "shuffled"):
            raise ValueError(f"unknown class_order {self.class_order!r}")

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["adam_betas"] = list(self.adam_betas)
        # fixed masks are arrays; they are persisted in checkpoints instead
        data["guidance"] = {
            "mode": self.guidance.mode,
            "oversample_annotated_freq": self.guidance.oversample_annotated_freq,
        }
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "adam_betas" in kwargs:
            kwargs["adam_betas"] = tuple(kwargs["adam_betas"])
        if isinstance(kwargs.get("guidance"), dict):
            kwargs["guidance"] = GuidancePolicy(**kwargs["guidance"])
        if isinstance(kwargs.get("loss_weights"), dict):
            kwargs["loss_weights"] = LossWeights.from_dict(kwargs["loss_weights"])
        return cls(**kwargs)


def schedule(gen_step: int, cfg: TrainConfig) -> tuple[int, int]:
    """Critic and classifier update counts for one generator step (1-based)."""
    if gen_step < 1:
        raise ValueError("gen_step is 1-based")
    boosted = gen_step <= cfg.critic_boost_initial or gen_step % cfg.critic_boost_every == 0
    critic_updates = cfg.critic_steps_per_gen
    if boosted:
        if cfg.critic_boost_additive:
            critic_updates += cfg.critic_boost_steps
        else:
            critic_updates = cfg.critic_boost_steps
    return critic_updates, cfg.classifier_steps_per_gen


@dataclass
class TrainResult:
    out_dir: Path
    checkpoints: list[Path]
    final_checkpoint: Path
    loss_log: Path
    timing_log: Path
    best_checkpoint: Path | None = None
    best_auc: float | None = None
    thresholds_path: Path | None = None
    wall_time_s: float = 0.0


def _class_for_step(step: int, num_classes: int, cfg: TrainConfig) -> int:
    pos = (step - 1) % num_classes
    if cfg.class_order == "cyclic":
        return pos
    epoch = (step - 1) // num_classes
    perm = np.random.default_rng((cfg.seed, 30, epoch)).permutation(num_classes)
    return int(perm[pos])


def _finite_or_raise(step: int, values: dict[str, float], out_dir: Path, saver) -> None:
    for term, v in values.items():
        if not math.isfinite(v):
            dump = out_dir / "nan_dump.json"
            dump.write_text(json.dumps({"step": step, "term": term, "value": repr(v)}))
            saver(out_dir / "checkpoints" / "ckpt_nan.npz", step)
            raise NaNLoss(step, term, v)


def _build_pseudo_masks(dataset: ManifestDataset) -> dict[int, GuidanceMask]:
    loader = dataset.record_mask_loader()
    masks: dict[int, GuidanceMask] = {}
    for c in range(dataset.num_classes):
        annotated = [r for r in dataset.records if r.has_annotation(c)]
        if annotated:
            masks[c] = build_pseudo_binary(
                annotated, c, dataset.image_size, dataset.image_size, mask_loader=loader
            )
    return masks


def train(
    dataset: ManifestDataset,
    cfg: TrainConfig,
    out_dir: Path | str,
    val_dataset: ManifestDataset | None = None,
    resume_from: Path | str | None = None,
) -> TrainResult:
    """Run the full training loop; returns paths to checkpoints and logs."""
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()

    num_classes = dataset.num_classes
    size = dataset.image_size
    pool = cfg.pool_factor or default_pool_factor(size)
    policy = cfg.guidance
    weights = cfg.loss_weights

    start_step = 0
    if resume_from is not None:
        loaded = ckpt_io.load_checkpoint(resume_from)
        bundle = loaded.bundle
        start_step = loaded.step
        if loaded.fixed_masks():
            policy = GuidancePolicy(
                mode=policy.mode,
                oversample_annotated_freq=policy.oversample_annotated_freq,
                fixed_masks=loaded.fixed_masks(),
            )
    else:
        bundle = build_model(
            dataset.class_names, size, scale=cfg.scale, pool_factor=pool, init_seed=cfg.seed
        )
    gen, critic, heads, centers = bundle.generator, bundle.critic, bundle.heads, bundle.centers

    opt_gen = torch.optim.Adam(gen.parameters(), lr=cfg.lr_adam, betas=cfg.adam_betas)
    opt_critic = torch.optim.Adam(critic.parameters(), lr=cfg.lr_adam, betas=cfg.adam_betas)
    opt_heads = torch.optim.Adam(heads.parameters(), lr=cfg.lr_adam, betas=cfg.adam_betas)
    named = {
        "gen": list(gen.named_parameters()),
        "critic": list(critic.named_parameters()),
        "heads": list(heads.named_parameters()),
    }
    opts = {"gen": opt_gen, "critic": opt_critic, "heads": opt_heads}
    if resume_from is not None:
        for group, opt in opts.items():
            ckpt_io.restore_optimizer_state(opt, named[group], loaded.arrays, f"opt/{group}")

    task_codes = [bundle.task_code(c) for c in range(num_classes)]
    mask_loader = dataset.record_mask_loader()
    pseudo_masks = _build_pseudo_masks(dataset) if policy.mode == "mixed" else {}
    mask_cache: dict[tuple[str, int], torch.Tensor | None] = {}

    def item_mask(record, c: int) -> torch.Tensor | None:
        key = (record.id, c)
        if key not in mask_cache:
            gm = select_mask(record, c, policy, pseudo_masks, size, size, mask_loader)
            mask_cache[key] = None if gm is None else torch.from_numpy(gm.values)
        return mask_cache[key]

    def save_ckpt(path: Path, step: int) -> Path:
        opt_arrays: dict[str, np.ndarray] = {}
        for group, opt in opts.items():
            opt_arrays.update(
                ckpt_io.optimizer_state_arrays(opt, named[group], f"opt/{group}")
            )
        return ckpt_io.save_checkpoint(
            path,
            bundle,
            step=step,
            train_config=cfg.to_dict(),
            opt_arrays=opt_arrays,
            fixed_masks=policy.fixed_masks if policy.mode == "fixed" else None,
        )

    loss_rows: list[tuple[int, int, str, float]] = []
    timing_rows: list[tuple[int, float]] = []
    val_rows: list[tuple[int, float]] = []
    checkpoints: list[Path] = []
    oversample = (
        policy.oversample_annotated_freq
        if policy.mode == "mixed" and policy.oversample_annotated_freq > 0
        else None
    )

    for step in range(start_step + 1, cfg.generator_steps + 1):
        t_step = time.perf_counter()
        c = _class_for_step(step, num_classes, cfg)
        t_c = task_codes[c]
        n_critic, n_clf = schedule(step, cfg)

        # --- critic updates (fresh batches each, per usual Wasserstein practice)
        critic_losses, gp_values = [], []
        for k in range(n_critic):
            pos, neg = dataset.sample_pair(c, cfg.batch_size, (cfg.seed, step, 10, k))
            with torch.no_grad():
                fake = pos.pixels + gen(pos.pixels, t_c)
            real = neg.pixels
            eps_rng = np.random.default_rng((cfg.seed, step, 11, k))
            eps = torch.from_numpy(eps_rng.random(real.shape[0])).to(real.dtype).view(-1, 1, 1, 1)
            interp = (eps * real + (1.0 - eps) * fake).requires_grad_(True)
            scores = critic(torch.cat([real, fake, interp]), t_c)
            b = real.shape[0]
            s_real, s_fake, s_interp = scores[:b], scores[b : 2 * b], scores[2 * b :]
            grads = torch.autograd.grad(s_interp.sum(), interp, create_graph=True)[0]
            gp = ((grads.flatten(1).norm(2, dim=1) - 1.0) ** 2).mean()
            d_loss = critic_loss(s_real, s_fake, gp, cfg.gp_coeff)
            _finite_or_raise(
                step,
                {"critic": float(d_loss.detach()), "gp": float(gp.detach())},
                out_dir,
                save_ckpt,
            )
            opt_critic.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_critic.step()
            critic_losses.append(float(d_loss.detach()))
            gp_values.append(float(gp.detach()))

        # --- one generator update
        pos, neg = dataset.sample_pair(
            c, cfg.batch_size, (cfg.seed, step, 20), oversample_annotated_freq=oversample
        )
        x = torch.cat([pos.pixels, neg.pixels])
        maps = gen(x, t_c)
        b = len(pos)
        maps_pos, maps_neg = maps[:b], maps[b:]
        adv = adversarial_loss(critic(pos.pixels + maps_pos, t_c))
        targets = torch.cat([torch.ones(b), torch.zeros(len(neg))])
        cls = classification_loss(heads.logits(maps, c), targets)
        reg = reg_loss(maps_neg, maps_pos, weights.l1_neg, weights.l1_pos)
        ctr = center_loss(maps_neg, 0, centers[c]) + center_loss(maps_pos, 1, centers[c])
        guid = None
        if policy.enabled:
            records = [dataset.records[i] for i in pos.indices + neg.indices]
            item_masks = [item_mask(r, c) for r in records]
            valid = [i for i, m in enumerate(item_masks) if m is not None]
            if valid:
                guid = guidance_loss(
                    maps[valid], torch.stack([item_masks[i] for i in valid])
                )
            else:
                guid = torch.zeros(())
        terms = GeneratorLossTerms(adv=adv, cls=cls, reg=reg, ctr=ctr, guid=guid)
        total = total_generator_loss(terms, weights)
        step_values = {
            "adv": float(adv.detach()),
            "cls": float(cls.detach()),
            "reg": float(reg.detach()),
            "ctr": float(ctr.detach()),
            "total": float(total.detach()),
        }
        if guid is not None:
            step_values["guid"] = float(guid.detach())
        _finite_or_raise(step, step_values, out_dir, save_ckpt)
        opt_gen.zero_grad(set_to_none=True)
        total.backward()
        opt_gen.step()

        # --- classifier updates on the same maps; only head c receives gradients
        maps_detached = maps.detach()
        for _ in range(n_clf):
            clf_loss = classification_loss(heads.logits(maps_detached, c), targets)
            opt_heads.zero_grad(set_to_none=True)
            clf_loss.backward()
            opt_heads.step()

        # --- center update (separate plain-SGD optimizer)
        update_centers(centers[c], maps_neg.detach(), 0, cfg.lr_centers)
        update_centers(centers[c], maps_pos.detach(), 1, cfg.lr_centers)

        step_values["critic"] = float(np.mean(critic_losses))
        step_values["gp"] = float(np.mean(gp_values))
        for term in LOG_TERMS:
            if term in step_values:
                loss_rows.append((step, c, term, step_values[term]))
        timing_rows.append((step, time.perf_counter() - t_step))

        if step % cfg.checkpoint_every == 0 or step == cfg.generator_steps:
            path = save_ckpt(out_dir / "checkpoints" / f"ckpt_step_{step:06d}.npz", step)
            checkpoints.append(path)
            if val_dataset is not None:
                val_rows.append((step, _mean_val_auc(bundle, val_dataset)))

    loss_log = out_dir / "loss_log.csv"
    with open(loss_log, "w") as fh:
        fh.write("step,class,term,value\n")
        for step, c, term, value in loss_rows:
            fh.write(f"{step},{c},{term},{value:.10g}\n")
    timing_log = out_dir / "timing.csv"
    with open(timing_log, "w") as fh:
        fh.write("step,seconds\n")
        for step, seconds in timing_rows:
            fh.write(f"{step},{seconds:.6f}\n")

    result = TrainResult(
        out_dir=out_dir,
        checkpoints=checkpoints,
        final_checkpoint=checkpoints[-1],
        loss_log=loss_log,
        timing_log=timing_log,
        wall_time_s=time.perf_counter() - t_start,
    )

    if val_dataset is not None:
        with open(out_dir / "val_log.csv", "w") as fh:
            fh.write("step,mean_auc\n")
            for step, v in val_rows:
                fh.write(f"{step},{v:.10g}\n")
        best_path, aucs = select_best(checkpoints, val_dataset)
        result.best_checkpoint = best_path
        result.best_auc = max(aucs)
        best = ckpt_io.load_checkpoint(best_path)
        probs, labels = predict_dataset(best.bundle, val_dataset)
        table = calibrate_thresholds(probs, labels, dataset.class_names)
        result.thresholds_path = out_dir / "thresholds.json"
        table.to_json(result.thresholds_path)

    summary = {
        "generator_steps": cfg.generator_steps,
        "seed": cfg.seed,
        "wall_time_s": result.wall_time_s,
        "final_checkpoint": str(result.final_checkpoint),
        "best_checkpoint": str(result.best_checkpoint) if result.best_checkpoint else None,
        "best_auc": result.best_auc,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return result


def _mean_val_auc(bundle: ModelBundle, val_dataset: ManifestDataset) -> float:
    probs, labels = predict_dataset(bundle, val_dataset)
    values = []
    for c in range(labels.shape[1]):
        if labels[:, c].min() != labels[:, c].max():
            values.append(auc(probs[:, c], labels[:, c]))
    return float(np.mean(values)) if values else 0.5


def select_best(
    checkpoint_paths: list[Path | str], val_dataset: ManifestDataset
) -> tuple[Path, list[float]]:
    """Checkpoint with the highest mean validation AUC; earliest step wins ties."""
    if not checkpoint_paths:
        raise ValueError("no checkpoints to select from")
    aucs = []
    for path in checkpoint_paths:
        loaded = ckpt_io.load_checkpoint(path)
        aucs.append(_mean_val_auc(loaded.bundle, val_dataset))
    return Path(checkpoint_paths[int(np.argmax(aucs))]), aucs
