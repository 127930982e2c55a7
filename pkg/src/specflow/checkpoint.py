"""Checkpoint assembly on top of the array container.

A checkpoint directory holds the raw model parameters, the EMA shadow, the
optimizer moments, and a manifest with the model/train/path configs, the
step count and the RNG record.  The training RNG is derived per step from
(seed, step), so {seed, next_step} is the complete RNG state and resuming
replays the exact draws of an uninterrupted run.
"""

from __future__ import annotations

from dataclasses import asdict

import torch

from .flow import (
    FlowModel,
    FlowModelConfig,
    OTPathConfig,
    TrainConfig,
    Trainer,
    build_flow_model,
)
from . import store


def save_checkpoint(path, model: FlowModel, *, ema_shadow=None, trainer: Trainer | None = None,
                    tcfg: TrainConfig | None = None, ot_cfg: OTPathConfig | None = None,
                    extra: dict | None = None) -> dict:
    arrays = store.state_dict_to_arrays(model.state_dict(), "model.")
    manifest_extra = {
        "kind": "checkpoint",
        "model_config": asdict(model.config),
        "dtype": str(model.dtype),
    }
    if ema_shadow is not None:
        arrays.update(store.state_dict_to_arrays(ema_shadow, "ema."))
        manifest_extra["has_ema"] = True
    if trainer is not None:
        opt_arrays, skeleton = store.flatten_optimizer_state(trainer.opt)
        arrays.update(opt_arrays)
        manifest_extra["trainer"] = {
            **trainer.state_scalars(),
            "opt_skeleton": skeleton,
        }
        manifest_extra["rng"] = {"seed": trainer.tcfg.seed, "next_step": trainer.step + 1}
    if tcfg is not None:
        manifest_extra["train_config"] = asdict(tcfg)
    if ot_cfg is not None:
        manifest_extra["ot_config"] = asdict(ot_cfg)
    if extra:
        manifest_extra.update(extra)
    return store.save_arrays(path, arrays, manifest_extra)


def _dtype_from_name(name: str) -> torch.dtype:
    return getattr(torch, name.removeprefix("torch."))


def load_checkpoint(path, with_trainer: bool = False):
    """Rebuild (model, ema_model, trainer, manifest) from a checkpoint directory.

    ``trainer`` is None unless requested and present.  Loading is bit-exact:
    parameters round-trip through raw little-endian files unchanged.
    """
    arrays, manifest = store.load_arrays(path)
    extra = manifest["extra"]
    if extra.get("kind") != "checkpoint":
        raise ValueError(f"{path} is not a checkpoint artifact")
    cfg = FlowModelConfig(**extra["model_config"])
    dtype = _dtype_from_name(extra["dtype"])
    model = build_flow_model(cfg, dtype=dtype)
    like = model.state_dict()
    model.load_state_dict(store.arrays_to_state_dict(arrays, "model.", like))

    ema_model = None
    if extra.get("has_ema"):
        ema_model = build_flow_model(cfg, dtype=dtype)
        ema_model.load_state_dict(store.arrays_to_state_dict(arrays, "ema.", like))

    trainer = None
    if with_trainer and "trainer" in extra:
        tcfg = TrainConfig(**{**extra["train_config"], "betas": tuple(extra["train_config"]["betas"])})
        ot_cfg = OTPathConfig(**extra["ot_config"])
        trainer = Trainer(model, tcfg, ot_cfg)
        store.restore_optimizer_state(trainer.opt, arrays, extra["trainer"]["opt_skeleton"])
        trainer.load_state_scalars(extra["trainer"])
        trainer.ema.shadow = store.arrays_to_state_dict(arrays, "ema.", like)
    return model, ema_model, trainer, manifest
