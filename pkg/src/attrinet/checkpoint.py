"""Checkpoint persistence: one npz archive of named arrays plus a JSON header.

Layout of archive keys:

    header                      JSON string: shapes, class names, step, config
    generator/<param>           generator parameters
    critic/<param>              critic parameters
    heads/class_<c>             logistic regression weight grids
    centers/class_<c>_neg|pos   class centers
    guidance/fixed_mask_<c>     fixed guidance masks (only when used)
    opt/<group>/<param>/<key>   optimizer moments and step counters
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .guidance import GuidanceMask
from .model import ModelBundle, build_model

OptStates = dict[str, dict[str, dict[str, np.ndarray]]]


def _named_arrays(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}/{name}": p.detach().numpy().copy()
        for name, p in module.named_parameters()
    }


def optimizer_state_arrays(
    optimizer: torch.optim.Optimizer, named_params: list[tuple[str, torch.nn.Parameter]], prefix: str
) -> dict[str, np.ndarray]:
    """Flatten Adam state (step, exp_avg, exp_avg_sq) into named arrays."""
    out: dict[str, np.ndarray] = {}
    for name, p in named_params:
        state = optimizer.state.get(p)
        if not state:
            continue
        for key in ("step", "exp_avg", "exp_avg_sq"):
            val = state[key]
            arr = val.detach().numpy().copy() if torch.is_tensor(val) else np.asarray(val)
            out[f"{prefix}/{name}/{key}"] = arr
    return out


def restore_optimizer_state(
    optimizer: torch.optim.Optimizer,
    named_params: list[tuple[str, torch.nn.Parameter]],
    arrays: dict[str, np.ndarray],
    prefix: str,
) -> None:
    for name, p in named_params:
        step_key = f"{prefix}/{name}/step"
        if step_key not in arrays:
            continue
        optimizer.state[p] = {
            "step": torch.as_tensor(arrays[step_key].copy()),
            "exp_avg": torch.from_numpy(arrays[f"{prefix}/{name}/exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"{prefix}/{name}/exp_avg_sq"].copy()),
        }


def save_checkpoint(
    path: Path | str,
    bundle: ModelBundle,
    step: int = 0,
    train_config: dict | None = None,
    opt_arrays: dict[str, np.ndarray] | None = None,
    fixed_masks: dict[int, GuidanceMask] | None = None,
) -> Path:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    arrays.update(_named_arrays(bundle.generator, "generator"))
    arrays.update(_named_arrays(bundle.critic, "critic"))
    for c in range(bundle.num_classes):
        arrays[f"heads/class_{c}"] = bundle.heads.weights[c].detach().numpy().copy()
        arrays[f"centers/class_{c}_neg"] = bundle.centers[c].neg.numpy().copy()
        arrays[f"centers/class_{c}_pos"] = bundle.centers[c].pos.numpy().copy()
    for c, mask in (fixed_masks or {}).items():
        arrays[f"guidance/fixed_mask_{c}"] = mask.values
        arrays[f"guidance/fixed_mask_{c}_kind"] = np.array(mask.kind)
    if opt_arrays:
        arrays.update(opt_arrays)
    header = {
        "class_names": bundle.class_names,
        "num_classes": bundle.num_classes,
        "image_size": bundle.image_size,
        "scale": bundle.scale,
        "pool_factor": bundle.pool_factor,
        "channels": list(bundle.generator.channels),
        "step": int(step),
        "train_config": train_config,
    }
    arrays["header"] = np.array(json.dumps(header))
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)
    return path


class LoadedCheckpoint:
    """A checkpoint pulled back into memory: bundle plus raw auxiliary arrays."""

    def __init__(self, bundle: ModelBundle, header: dict, arrays: dict[str, np.ndarray]):
        self.bundle = bundle
        self.header = header
        self.arrays = arrays

    @property
    def step(self) -> int:
        return int(self.header["step"])

    @property
    def train_config(self) -> dict | None:
        return self.header.get("train_config")

    def fixed_masks(self) -> dict[int, GuidanceMask]:
        out = {}
        for key in self.arrays:
            if key.startswith("guidance/fixed_mask_") and not key.endswith("_kind"):
                c = int(key.rsplit("_", 1)[1])
                kind = str(self.arrays[f"{key}_kind"][()])
                out[c] = GuidanceMask(self.arrays[key], c, kind)
        return out


def load_checkpoint(path: Path | str) -> LoadedCheckpoint:
    with np.load(Path(path), allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    header = json.loads(str(arrays.pop("header")[()]))
    bundle = build_model(
        class_names=list(header["class_names"]),
        image_size=int(header["image_size"]),
        scale=str(header["scale"]),
        pool_factor=int(header["pool_factor"]),
    )
    with torch.no_grad():
        for name, p in bundle.generator.named_parameters():
            p.copy_(torch.from_numpy(arrays[f"generator/{name}"]))
        for name, p in bundle.critic.named_parameters():
            p.copy_(torch.from_numpy(arrays[f"critic/{name}"]))
        for c in range(bundle.num_classes):
            bundle.heads.weights[c].copy_(torch.from_numpy(arrays[f"heads/class_{c}"]))
            bundle.centers[c].neg = torch.from_numpy(arrays[f"centers/class_{c}_neg"].copy())
            bundle.centers[c].pos = torch.from_numpy(arrays[f"centers/class_{c}_pos"].copy())
    return LoadedCheckpoint(bundle, header, arrays)
