"""Shared t-conditioned feature extractor with operator switching.

One MLP serves both the data-side and generation-side observation operators;
a trainable switching vector (o or s) added to the input embedding selects
the side.  Every nonlinearity is squared ReLU, so the network is C^1 and the
flow's input gradients stay continuous.  Each layer emits a complex,
L2-normalized feature row; the stack over layers is what the spectral
contraction consumes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import torch
from torch import nn

RMS_EPS = 1e-8
L2_EPS = 1e-12
PE_BASE = 10000.0


class Switch(enum.Enum):
    DATA = "data"
    GEN = "gen"


@dataclass
class FeatureNetConfig:
    num_layers: int
    d_h: int
    d_h_prime: int
    d_in: int
    pe_dim: int = 256

    def __post_init__(self):
        for name in ("num_layers", "d_h", "d_h_prime", "d_in", "pe_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.pe_dim % 2 != 0:
            raise ValueError("pe_dim must be even")

    @property
    def d_f(self) -> int:
        return self.num_layers * self.d_h


def squared_relu(x: torch.Tensor) -> torch.Tensor:
    r = torch.relu(x)
    return r * r


def rms_norm(x: torch.Tensor, eps: float = RMS_EPS) -> torch.Tensor:
    return x * torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + eps)


def l2_normalize(z: torch.Tensor, eps: float = L2_EPS) -> torch.Tensor:
    """Normalize the last axis by its complex modulus norm."""
    norm = torch.sqrt((z.real**2 + z.imag**2).sum(dim=-1, keepdim=True))
    return z * (1.0 / (norm + eps))


def sinusoidal_embedding(t: torch.Tensor, dim: int, base: float = PE_BASE) -> torch.Tensor:
    """Standard interleaved sin/cos positional encoding of a scalar.

    Output layout is [sin(t*w_0), cos(t*w_0), sin(t*w_1), ...] with
    w_i = base**(-i / (dim/2)), so t = 0 encodes as alternating 0, 1.
    """
    if dim % 2 != 0:
        raise ValueError("embedding dimension must be even")
    half = dim // 2
    freqs = torch.pow(
        torch.tensor(base, dtype=t.dtype, device=t.device),
        -torch.arange(half, dtype=t.dtype, device=t.device) / half,
    )
    args = t[..., None] * freqs
    return torch.stack((torch.sin(args), torch.cos(args)), dim=-1).flatten(-2)


class SwitchBank(nn.Module):
    """Independent trainable vectors selecting the data- or generation-side operator."""

    def __init__(self, d_h: int):
        super().__init__()
        bound = 1.0 / math.sqrt(d_h)
        self.o = nn.Parameter(torch.empty(d_h).uniform_(-bound, bound))
        self.s = nn.Parameter(torch.empty(d_h).uniform_(-bound, bound))

    def vector(self, switch: Switch) -> torch.Tensor:
        return self.o if switch is Switch.DATA else self.s


class FeatureNet(nn.Module):
    """MLP(x, q, t): observation -> stacked per-layer complex features.

    z^0 = InputProj(x) + q + c_t, residual blocks refine z, and each layer's
    readout is L2Norm(ReLU^2(ComplexAffine(ReLU^2(z^l)))) where ReLU^2 acts
    separately on real and imaginary parts.  Output is [.., num_layers, d_h]
    complex, layer-major to line up with the block-diagonal readouts.
    """

    def __init__(self, cfg: FeatureNetConfig):
        super().__init__()
        self.cfg = cfg
        self.in_proj = nn.Linear(cfg.d_in, cfg.d_h)
        self.t_in = nn.Linear(cfg.pe_dim, cfg.d_h)
        self.t_mid = nn.Linear(cfg.d_h, cfg.d_h)
        self.t_out = nn.Linear(cfg.d_h, cfg.d_h)
        self.block_in = nn.ModuleList(
            nn.Linear(cfg.d_h, cfg.d_h_prime) for _ in range(cfg.num_layers)
        )
        self.block_out = nn.ModuleList(
            nn.Linear(cfg.d_h_prime, cfg.d_h) for _ in range(cfg.num_layers)
        )
        # Real-to-complex affine readout, packed as [re | im] rows of one Linear.
        self.readout = nn.ModuleList(
            nn.Linear(cfg.d_h, 2 * cfg.d_h) for _ in range(cfg.num_layers)
        )

    @property
    def _cdtype(self) -> torch.dtype:
        return torch.complex128 if self.in_proj.weight.dtype == torch.float64 else torch.complex64

    def time_embedding(self, t: torch.Tensor) -> torch.Tensor:
        """c_t, evaluated once per (t, batch) and shared across sequence positions."""
        pe = sinusoidal_embedding(t, self.cfg.pe_dim)
        return self.t_out(squared_relu(self.t_mid(squared_relu(self.t_in(pe)))))

    def _trunk_packed(self, z: torch.Tensor) -> torch.Tensor:
        """Layer features as a packed real stack [..., num_layers, 2*d_h].

        The last axis holds the [real || imag] halves of the complex feature
        row; the whole hot path runs in real arithmetic.  ``_trunk`` wraps
        the result into a complex tensor for the public feature interface.
        """
        layers = []
        for blk_in, blk_out, read in zip(self.block_in, self.block_out, self.readout):
            z = z + blk_out(squared_relu(blk_in(rms_norm(z))))
            w = squared_relu(read(squared_relu(z)))
            # L2 normalization by the complex modulus: the packed square sum
            # over both halves is exactly sum(re^2 + im^2).
            inv = 1.0 / (torch.sqrt((w * w).sum(-1, keepdim=True)) + L2_EPS)
            layers.append(w * inv)
        return torch.stack(layers, dim=-2)

    def _trunk_pair(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        re, im = self._trunk_packed(z).chunk(2, dim=-1)
        return re, im

    def _trunk(self, z: torch.Tensor) -> torch.Tensor:
        return torch.complex(*self._trunk_pair(z))

    def forward(self, x: torch.Tensor, t: torch.Tensor, switch_vec: torch.Tensor) -> torch.Tensor:
        """Features of a batch of sequences.

        x: [batch, N, d_in]; t: scalar or [batch]; switch_vec: [d_h] or
        [batch, d_h].  Returns complex [batch, N, num_layers, d_h].
        """
        if not torch.isfinite(x).all():
            raise ValueError("non-finite observation input")
        t = torch.as_tensor(t, dtype=x.dtype, device=x.device)
        if t.ndim == 0:
            t = t.expand(x.shape[0])
        c_t = self.time_embedding(t)
        if switch_vec.ndim == 1:
            switch_vec = switch_vec.expand(x.shape[0], -1)
        z0 = self.in_proj(x) + switch_vec[:, None, :] + c_t[:, None, :]
        return self._trunk(z0)
