"""Checkpoint files: named parameter arrays + optimizer + RNG + stage tag.

A checkpoint is one named-array container (see arrayio) holding:

    meta/json                    uint8 json blob: stage, step, config hash,
                                 model config, precision, extras
    model/<parameter name>       every parameter and buffer of the bundle
    optim/<parameter name>/<k>   AdamW state entries for trained parameters
    rng/torch                    torch global RNG state bytes

Stage tags are one of {pretrain, calib, finetune} and enforce pipeline order.
Round-trips are bit-exact, which makes resumed runs reproduce uninterrupted
ones exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from . import arrayio
from .errors import ContractError, PipelineOrderError
from .model import ModelBundle, ModelConfig, build_bundle

FORMAT_VERSION = 1
STAGE_TAGS = ("pretrain", "calib", "finetune")

_PRECISIONS = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class Checkpoint:
    stage: str
    step: int
    config_hash: str
    precision: str
    model_config: ModelConfig
    arrays: dict[str, np.ndarray]
    extra: dict

    @property
    def dtype(self) -> torch.dtype:
        return _PRECISIONS[self.precision]

    def build_bundle(self, seed: int = 0) -> ModelBundle:
        """Reconstruct the model bundle with weights loaded from this checkpoint."""
        bundle = build_bundle(self.model_config, seed=seed, dtype=self.dtype)
        tensors = dict(bundle.named_parameters())
        tensors.update(dict(bundle.named_buffers()))
        for name, tensor in tensors.items():
            key = f"model/{name}"
            if key not in self.arrays:
                raise ContractError(f"checkpoint is missing tensor {name}")
            stored = torch.from_numpy(self.arrays[key].copy())
            if stored.shape != tensor.shape:
                raise ContractError(f"checkpoint tensor {name} has shape {tuple(stored.shape)}, expected {tuple(tensor.shape)}")
            with torch.no_grad():
                tensor.copy_(stored)
        return bundle

    def restore_optimizer(self, optimizer: torch.optim.Optimizer, named_params: dict[str, torch.nn.Parameter]) -> None:
        """Load AdamW moment/step state saved under parameter names."""
        for name, param in named_params.items():
            prefix = f"optim/{name}/"
            entries = {k[len(prefix):]: v for k, v in self.arrays.items() if k.startswith(prefix)}
            if not entries:
                continue
            state = optimizer.state[param]
            state["step"] = torch.tensor(float(entries["step"][0]), dtype=torch.float32)
            state["exp_avg"] = torch.from_numpy(entries["exp_avg"].copy())
            state["exp_avg_sq"] = torch.from_numpy(entries["exp_avg_sq"].copy())

    def restore_torch_rng(self) -> None:
        if "rng/torch" in self.arrays:
            torch.set_rng_state(torch.from_numpy(self.arrays["rng/torch"].copy()))

    def require_stage(self, *allowed: str) -> None:
        if self.stage not in allowed:
            raise PipelineOrderError(
                f"checkpoint stage tag is {self.stage!r}; this stage requires one of {allowed}"
            )


def save_checkpoint(
    path: str,
    bundle: ModelBundle,
    stage: str,
    step: int,
    config_hash: str,
    precision: str,
    optimizer: torch.optim.Optimizer | None = None,
    include_rng: bool = True,
    extra: dict | None = None,
) -> None:
    if stage not in STAGE_TAGS:
        raise ContractError(f"stage tag must be one of {STAGE_TAGS}, got {stage!r}")
    arrays: dict[str, np.ndarray] = {}
    meta = {
        "format": FORMAT_VERSION,
        "stage": stage,
        "step": step,
        "config_hash": config_hash,
        "precision": precision,
        "model_config": bundle.cfg.to_dict(),
        "extra": extra or {},
    }
    arrays["meta/json"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    tensors = dict(bundle.named_parameters())
    tensors.update(dict(bundle.named_buffers()))
    for name, tensor in tensors.items():
        arrays[f"model/{name}"] = tensor.detach().cpu().numpy()
    if optimizer is not None:
        name_by_id = {id(p): n for n, p in bundle.named_parameters()}
        for group in optimizer.param_groups:
            for param in group["params"]:
                state = optimizer.state.get(param)
                if not state:
                    continue
                name = name_by_id.get(id(param))
                if name is None:
                    raise ContractError("optimizer holds a parameter not owned by the bundle")
                arrays[f"optim/{name}/step"] = np.array([float(state["step"])], dtype=np.float64)
                arrays[f"optim/{name}/exp_avg"] = state["exp_avg"].detach().cpu().numpy()
                arrays[f"optim/{name}/exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
    if include_rng:
        arrays["rng/torch"] = torch.get_rng_state().numpy()
    arrayio.write_arrays(path, arrays)


def load_checkpoint(path: str) -> Checkpoint:
    arrays = arrayio.read_arrays(path)
    if "meta/json" not in arrays:
        raise ContractError(f"{path} has no checkpoint metadata")
    meta = json.loads(arrays["meta/json"].tobytes().decode("utf-8"))
    if meta.get("format") != FORMAT_VERSION:
        raise ContractError(f"unsupported checkpoint format {meta.get('format')!r}")
    return Checkpoint(
        stage=meta["stage"],
        step=meta["step"],
        config_hash=meta["config_hash"],
        precision=meta["precision"],
        model_config=ModelConfig.from_dict(meta["model_config"]),
        arrays=arrays,
        extra=meta.get("extra", {}),
    )
