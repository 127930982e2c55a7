"""Generative flow over sequences: witness, vector field, training, sampling.

The model's velocity is the input gradient of a witness function: the real
part of the difference between the generation-side and data-side spectral
contractions of the per-step features.  Being a gradient field by
construction, it can be regressed onto the optimal-transport conditional
field with the conditional flow-matching objective; training therefore
differentiates through the input gradient (double backpropagation) and is
simulation-free.  Sampling integrates the learned field from a standard
normal draw with a fixed-step midpoint solver.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .features import FeatureNet, FeatureNetConfig, Switch, SwitchBank
from .spectral import (
    SpectralParams,
    contract_sequence_packed,
    init_spectral_params,
    matrix_states,
    stability_loss,
)


@dataclass
class OTPathConfig:
    sigma_min: float = 1e-5

    def __post_init__(self):
        if not (0.0 < self.sigma_min < 1.0):
            raise ValueError(f"sigma_min must be in (0, 1), got {self.sigma_min}")


@dataclass
class TrainConfig:
    learning_rate: float = 8e-4
    batch_size: int = 128
    steps: int = 1000
    warmup_steps: int = 500
    grad_clip: float = 1.0
    plateau_factor: float = 0.5
    plateau_patience: int = 2000
    ema_decay: float = 0.995
    ema_interval: int = 10
    betas: tuple = (0.9, 0.96)
    seed: int = 0
    stability_weight: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 1 or self.warmup_steps < 0:
            raise ValueError("counts must be positive")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be > 0")
        if not (0.0 < self.ema_decay < 1.0):
            raise ValueError("ema_decay must be in (0, 1)")


@dataclass
class SamplerConfig:
    steps: int = 500
    solver: str = "midpoint"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("sampler steps must be >= 1")
        if self.solver != "midpoint":
            raise ValueError(f"only the fixed-step midpoint solver is supported, got {self.solver!r}")


@dataclass
class FlowModelConfig:
    d_in: int
    num_layers: int = 4
    d_h: int = 64
    d_h_prime: int = 64
    d_r: int = 0  # 0 means the d_h/2 convention
    pe_dim: int = 256
    r_min: float = 0.0
    r_max: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d_r == 0:
            self.d_r = max(1, self.d_h // 2)

    def feature_config(self) -> FeatureNetConfig:
        return FeatureNetConfig(
            num_layers=self.num_layers,
            d_h=self.d_h,
            d_h_prime=self.d_h_prime,
            d_in=self.d_in,
            pe_dim=self.pe_dim,
        )


class FlowModel(torch.nn.Module):
    """Feature extractor + switch bank + spectral readouts, as one velocity model."""

    def __init__(self, feature_net: FeatureNet, switches: SwitchBank, spectral: SpectralParams,
                 config: FlowModelConfig | None = None):
        super().__init__()
        if feature_net.cfg.num_layers != spectral.num_blocks or feature_net.cfg.d_h != spectral.d_h:
            raise ValueError(
                f"feature dim ({feature_net.cfg.num_layers}, {feature_net.cfg.d_h}) does not match "
                f"spectral blocks ({spectral.num_blocks}, {spectral.d_h})"
            )
        self.feature_net = feature_net
        self.switches = switches
        self.spectral = spectral
        self.config = config

    @property
    def dtype(self) -> torch.dtype:
        return self.feature_net.in_proj.weight.dtype

    def features(self, x: torch.Tensor, t, switch: Switch) -> torch.Tensor:
        return self.feature_net(x, t, self.switches.vector(switch))

    def contract_pair(self, x: torch.Tensor, t) -> tuple[torch.Tensor, torch.Tensor]:
        """(generation-side, data-side) contraction real parts, one fused trunk pass.

        The two switch branches share the input projection and time embedding
        and run as a single doubled batch; everything stays in split real
        arithmetic.
        """
        t = torch.as_tensor(t, dtype=x.dtype, device=x.device)
        if t.ndim == 0:
            t = t.expand(x.shape[0])
        c_t = self.feature_net.time_embedding(t)[:, None, :]
        base = self.feature_net.in_proj(x)
        z0 = torch.cat([base + self.switches.s + c_t, base + self.switches.o + c_t], dim=0)
        packed = self.feature_net._trunk_packed(z0)
        contr_re, _ = contract_sequence_packed(packed, self.spectral)
        n = x.shape[0]
        return contr_re[:n], contr_re[n:]


def build_flow_model(cfg: FlowModelConfig, dtype: torch.dtype = torch.float32) -> FlowModel:
    """Construct and seed a model; identical seeds give bit-identical parameters."""
    torch.manual_seed(cfg.seed)
    feature_net = FeatureNet(cfg.feature_config())
    switches = SwitchBank(cfg.d_h)
    if dtype != torch.float32:
        feature_net = feature_net.to(dtype)
        switches = switches.to(dtype)
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    spectral = init_spectral_params(
        num_blocks=cfg.num_layers,
        d_h=cfg.d_h,
        d_r=cfg.d_r,
        r_min=cfg.r_min,
        r_max=cfg.r_max,
        seed=cfg.seed + 1,
        dtype=cdtype,
    )
    return FlowModel(feature_net, switches, spectral, cfg)


def _ensure_batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ValueError(f"expected [N, d] or [batch, N, d], got shape {tuple(x.shape)}")


def witness(x_seq: torch.Tensor, t, model: FlowModel) -> torch.Tensor:
    """Re[C_gen(x, t) - C_data(x, t)]: the scalar field whose gradient drives the flow.

    The generation-side contraction models the current distribution's
    embedding and the data-side one the target's; the real part makes the
    witness a real scalar even though both contractions are complex.
    """
    x, squeeze = _ensure_batched(x_seq)
    if x.shape[1] < 2:
        raise ValueError("witness needs sequences of length >= 2")
    re_gen, re_dat = model.contract_pair(x, t)
    w = re_gen - re_dat
    return w[0] if squeeze else w


def vector_field(x_seq: torch.Tensor, t, model: FlowModel, create_graph: bool = False) -> torch.Tensor:
    """v = -grad_x witness(x, t), by exact automatic differentiation.

    With create_graph=True the result stays differentiable with respect to
    the model parameters, which the training loss requires (the loss
    backpropagates through this input gradient).
    """
    x, squeeze = _ensure_batched(x_seq)
    xg = x.detach().clone().requires_grad_(True)
    with torch.enable_grad():
        w = witness(xg, t, model)
        grad, = torch.autograd.grad(w.sum(), xg, create_graph=create_graph)
    v = -grad
    if not torch.isfinite(v.detach()).all():
        raise NonFiniteField("non-finite vector field; model parameters or inputs diverged")
    return v[0] if squeeze else v


def _broadcast_t(t, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=like.dtype, device=like.device)
    if t.ndim == 0:
        return t
    return t.view(-1, *([1] * (like.ndim - 1)))


def ot_sample(x1: torch.Tensor, t, eps: torch.Tensor, cfg: OTPathConfig) -> torch.Tensor:
    """Draw from the optimal-transport conditional path: t*x1 + (1-(1-s)t)*eps."""
    tb = _broadcast_t(t, x1)
    return tb * x1 + (1.0 - (1.0 - cfg.sigma_min) * tb) * eps


def ot_target_field(x: torch.Tensor, x1: torch.Tensor, t, cfg: OTPathConfig) -> torch.Tensor:
    """Conditional target velocity (x1 - (1-s)*x) / (1 - (1-s)*t)."""
    tb = _broadcast_t(t, x)
    denom = 1.0 - (1.0 - cfg.sigma_min) * tb
    if (denom < cfg.sigma_min / 2).any():
        raise ValueError("t too close to 1: OT field denominator underflows")
    return (x1 - (1.0 - cfg.sigma_min) * x) / denom


def _stability_term(x_t: torch.Tensor, t: torch.Tensor, model: FlowModel) -> torch.Tensor:
    f_gen = model.features(x_t, t, Switch.GEN)
    f_dat = model.features(x_t, t, Switch.DATA)
    return 0.5 * (
        stability_loss(matrix_states(f_gen, model.spectral))
        + stability_loss(matrix_states(f_dat, model.spectral))
    )


def cfm_loss(batch: torch.Tensor, model: FlowModel, cfg: OTPathConfig,
             generator: torch.Generator, stability_weight: float = 0.0) -> torch.Tensor:
    """Conditional flow-matching objective on one batch of data sequences.

    Per sample: t ~ U[0,1], eps ~ N(0,I), x_t from the OT path; the loss is
    the squared error between the model field at x_t and the OT target,
    summed over steps and channels and averaged over the batch.  The result
    is differentiable with respect to all model parameters.
    """
    x1, _ = _ensure_batched(batch)
    n = x1.shape[0]
    t = torch.rand(n, generator=generator, dtype=x1.dtype, device=x1.device)
    eps = torch.empty_like(x1).normal_(generator=generator)
    x_t = ot_sample(x1, t, eps, cfg)
    u = ot_target_field(x_t, x1, t, cfg)
    v = vector_field(x_t, t, model, create_graph=True)
    loss = ((v - u) ** 2).sum(dim=(1, 2)).mean()
    if stability_weight > 0.0 and x1.shape[1] > 2:
        loss = loss + stability_weight * _stability_term(x_t, t, model)
    return loss


class NonFiniteField(RuntimeError):
    """The model produced non-finite velocities."""


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite training loss at step {step} (value {value})")
        self.step = step


class Ema:
    """Exponential moving average of parameters, updated every ``interval`` steps."""

    def __init__(self, model: torch.nn.Module, decay: float):
        self.decay = decay
        self.shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}

    @torch.no_grad()
    def update(self, model: torch.nn.Module):
        for k, v in model.state_dict().items():
            self.shadow[k].mul_(self.decay).add_(v, alpha=1.0 - self.decay)

    def build_model(self, model: FlowModel) -> FlowModel:
        out = copy.deepcopy(model)
        out.load_state_dict(self.shadow)
        return out


def _step_generator(seed: int, step: int) -> torch.Generator:
    # Per-step stream keyed on (seed, step): resuming at step k replays the
    # exact draws of an uninterrupted run.
    g = torch.Generator()
    g.manual_seed((seed * 1_000_003 + step) % (2**63 - 1))
    return g


class Trainer:
    """Adam + linear warmup + decay-on-plateau + gradient clipping + EMA."""

    def __init__(self, model: FlowModel, tcfg: TrainConfig, ot_cfg: OTPathConfig):
        self.model = model
        self.tcfg = tcfg
        self.ot_cfg = ot_cfg
        self.opt = torch.optim.Adam(
            model.parameters(), lr=tcfg.learning_rate, betas=tuple(tcfg.betas)
        )
        self.ema = Ema(model, tcfg.ema_decay)
        self.step = 0
        self.lr_scale = 1.0
        self.plateau_best = math.inf
        self.plateau_counter = 0
        self.smoothed = None
        self.losses: list[float] = []
        self.lrs: list[float] = []

    def lr_at(self, step: int) -> float:
        warm = min(1.0, step / self.tcfg.warmup_steps) if self.tcfg.warmup_steps > 0 else 1.0
        return self.tcfg.learning_rate * warm * self.lr_scale

    def _plateau_update(self, loss_value: float):
        window = max(1, self.tcfg.plateau_patience // 10)
        alpha = 1.0 / window
        self.smoothed = loss_value if self.smoothed is None else (
            (1.0 - alpha) * self.smoothed + alpha * loss_value
        )
        if self.step <= self.tcfg.warmup_steps:
            return
        if self.smoothed < self.plateau_best:
            self.plateau_best = self.smoothed
            self.plateau_counter = 0
        else:
            self.plateau_counter += 1
            if self.plateau_counter >= self.tcfg.plateau_patience:
                self.lr_scale *= self.tcfg.plateau_factor
                self.plateau_counter = 0

    def run(self, data: torch.Tensor, num_steps: int, log_every: int = 0, log_fn=print):
        n_data = data.shape[0]
        for _ in range(num_steps):
            self.step += 1
            gen = _step_generator(self.tcfg.seed, self.step)
            idx = torch.randint(n_data, (min(self.tcfg.batch_size, n_data),), generator=gen)
            try:
                loss = cfm_loss(
                    data[idx], self.model, self.ot_cfg, gen,
                    stability_weight=self.tcfg.stability_weight,
                )
            except NonFiniteField as exc:
                raise TrainingDiverged(self.step, float("nan")) from exc
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(self.step, value)
            lr = self.lr_at(self.step)
            for group in self.opt.param_groups:
                group["lr"] = lr
            self.opt.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.tcfg.grad_clip)
            self.opt.step()
            if self.step % self.tcfg.ema_interval == 0:
                self.ema.update(self.model)
            self._plateau_update(value)
            self.losses.append(value)
            self.lrs.append(lr)
            if log_every and self.step % log_every == 0:
                log_fn(f"step {self.step}  loss {value:.6f}  lr {lr:.3e}")

    def state_scalars(self) -> dict:
        return {
            "step": self.step,
            "lr_scale": self.lr_scale,
            "plateau_best": self.plateau_best,
            "plateau_counter": self.plateau_counter,
            "smoothed": self.smoothed,
        }

    def load_state_scalars(self, state: dict):
        self.step = int(state["step"])
        self.lr_scale = float(state["lr_scale"])
        self.plateau_best = float(state["plateau_best"])
        self.plateau_counter = int(state["plateau_counter"])
        self.smoothed = None if state["smoothed"] is None else float(state["smoothed"])


@dataclass
class TrainResult:
    model: FlowModel
    ema_model: FlowModel
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    trainer: Trainer | None = None


def _as_tensor(data, dtype: torch.dtype) -> torch.Tensor:
    if isinstance(data, torch.Tensor):
        return data.to(dtype)
    values = getattr(data, "values", data)  # SequenceBatch quacks via .values
    return torch.as_tensor(np.asarray(values), dtype=dtype)


def train(data, model: FlowModel, tcfg: TrainConfig, ot_cfg: OTPathConfig,
          log_every: int = 0) -> TrainResult:
    """Run the full training schedule; returns raw and EMA models plus the loss trace."""
    tensor = _as_tensor(data, model.dtype)
    if tensor.ndim != 3 or tensor.shape[0] < 1:
        raise ValueError("training data must be a non-empty [num, N, d] array")
    trainer = Trainer(model, tcfg, ot_cfg)
    trainer.run(tensor, tcfg.steps, log_every=log_every)
    return TrainResult(
        model=model,
        ema_model=trainer.ema.build_model(model),
        losses=list(trainer.losses),
        lrs=list(trainer.lrs),
        trainer=trainer,
    )


def midpoint_integrate(field, x0: torch.Tensor, steps: int,
                       t0: float = 0.0, t1: float = 1.0) -> torch.Tensor:
    """Explicit fixed-step midpoint method for dx/dt = field(x, t)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    h = (t1 - t0) / steps
    x = x0
    for k in range(steps):
        t = t0 + k * h
        x_mid = x + 0.5 * h * field(x, t)
        x = x + h * field(x_mid, t + 0.5 * h)
        if not torch.isfinite(x).all():
            raise RuntimeError(f"non-finite state after integration step {k + 1}")
    return x


def sample(model: FlowModel, n: int, length: int, dim: int, scfg: SamplerConfig,
           ot_cfg: OTPathConfig, generator: torch.Generator,
           chunk_size: int | None = None) -> torch.Tensor:
    """Integrate the learned field from x0 ~ N(0, I) over t in [0, 1].

    The OT path's t=0 marginal is exactly standard normal (sigma_min does
    not enter at t=0), so initialization is a plain Gaussian draw.  Chains
    are independent, so integration may be chunked to bound the memory of
    the per-step input-gradient graph; chunking only perturbs results at
    the level of floating-point accumulation order.
    """
    del ot_cfg  # the initial marginal is standard normal for every sigma_min
    x0 = torch.empty(n, length, dim, dtype=model.dtype).normal_(generator=generator)
    step = chunk_size or n
    outputs = []
    with torch.no_grad():
        for start in range(0, n, step):
            outputs.append(midpoint_integrate(
                lambda x, t: vector_field(x, t, model), x0[start:start + step], scfg.steps
            ))
    return torch.cat(outputs) if len(outputs) > 1 else outputs[0]
