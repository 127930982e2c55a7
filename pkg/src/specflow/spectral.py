"""Spectral decomposition of the sequence transition operator.

A rank-r decomposition of the hidden-state transition operator turns the
inner product between a feature sequence and the sequence mean embedding
into a chain

    sum_{i2..iN}  [B^T h^1]_{i2} * lam_{i2} * [L^T diag(h^2) R]_{i2 i3}
                  * lam_{i3} * ... * [H^T h^N]_{iN}

over r = num_blocks * d_r virtual indices.  The chain is evaluated as a
left-to-right scan that carries only an r-vector, so no r x r matrix state
is ever materialized and auxiliary memory stays O(N*r + r^2) per sequence.

The readout matrices B, L, R, H are block-diagonal (``num_blocks`` blocks
of shape d_h x d_r), which decouples the scan into independent per-block
scans whose results sum.  A literal brute-force evaluation of the index
sum and a full materialization of the embedding tensor are provided as
oracles for tests and benchmarks; neither is on the sampling path.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import torch

# Guards for the deliberately exponential oracle paths.
BRUTEFORCE_MAX_TUPLES = 10**6
MATERIALIZE_MAX_ENTRIES = 10**7

_EPS_UNIT_DISK = 1e-12


class SpectralParams(torch.nn.Module):
    """Eigenvalues and block-diagonal readout heads of the operator decomposition.

    lam holds the r complex eigenvalues.  B, Lmat, R, H are stored as their
    nonzero blocks with shape [num_blocks, d_h, d_r]; entries outside the
    diagonal blocks are structurally zero and can never receive gradients.
    """

    def __init__(self, lam, B, Lmat, R, H, r_min=0.0, r_max=1.0, trainable=True):
        super().__init__()
        for name, blocks in (("B", B), ("Lmat", Lmat), ("R", R), ("H", H)):
            if blocks.ndim != 3 or blocks.shape != B.shape:
                raise ValueError(f"{name} must have shape [num_blocks, d_h, d_r], got {tuple(blocks.shape)}")
        if lam.ndim != 1 or lam.numel() != B.shape[0] * B.shape[2]:
            raise ValueError(f"lam must have length num_blocks*d_r={B.shape[0] * B.shape[2]}, got {lam.numel()}")
        wrap = torch.nn.Parameter if trainable else lambda t: t
        self.lam = wrap(lam)
        self.B = wrap(B)
        self.Lmat = wrap(Lmat)
        self.R = wrap(R)
        self.H = wrap(H)
        self.r_min = float(r_min)
        self.r_max = float(r_max)

    @property
    def num_blocks(self) -> int:
        return self.B.shape[0]

    @property
    def d_h(self) -> int:
        return self.B.shape[1]

    @property
    def d_r(self) -> int:
        return self.B.shape[2]

    @property
    def rank(self) -> int:
        return self.num_blocks * self.d_r

    @property
    def d_f(self) -> int:
        return self.num_blocks * self.d_h

    def lam_blocks(self) -> torch.Tensor:
        """Eigenvalues reshaped to [num_blocks, d_r], matching the block layout."""
        return self.lam.view(self.num_blocks, self.d_r)

    def dense(self, name: str) -> torch.Tensor:
        """Materialize one readout as its full [d_f, rank] block-diagonal matrix."""
        blocks = getattr(self, name)
        out = blocks.new_zeros(self.d_f, self.rank)
        for l in range(self.num_blocks):
            out[l * self.d_h:(l + 1) * self.d_h, l * self.d_r:(l + 1) * self.d_r] = blocks[l]
        return out

    def validate_finite(self):
        for name in ("lam", "B", "Lmat", "R", "H"):
            if not torch.isfinite(torch.view_as_real(getattr(self, name))).all():
                raise ValueError(f"non-finite entries in spectral parameter {name}")


def ring_from_uniforms(u1, u2, r_min: float, r_max: float):
    """Map uniform draws (u1, u2) in [0,1]^2 to a point between rings.

    z = exp(-nu + i*theta) with nu = -0.5*log(u1*(r_max^2 - r_min^2) + r_min^2)
    and theta = 2*pi*u2, so |z| is distributed as the radius of a uniform
    sample of the annulus r_min <= |z| <= r_max.
    """
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    nu = -0.5 * np.log(u1 * (r_max**2 - r_min**2) + r_min**2)
    theta = 2.0 * np.pi * u2
    return np.exp(-nu + 1j * theta)


def _draw_ring(shape, r_min, r_max, rng: np.random.Generator):
    u1 = rng.uniform(0.0, 1.0, shape)
    u2 = rng.uniform(0.0, 1.0, shape)
    return ring_from_uniforms(u1, u2, r_min, r_max)


def init_spectral_params(
    num_blocks: int,
    d_h: int,
    d_r: int,
    r_min: float = 0.0,
    r_max: float = 1.0,
    seed: int = 0,
    dtype: torch.dtype = torch.complex64,
    apply_scaling: bool = True,
    trainable: bool = True,
) -> SpectralParams:
    """Draw eigenvalues and readout blocks uniformly between complex rings.

    Entries come from ``ring_from_uniforms``; afterwards the eigenvalues are
    scaled by sqrt(2) and the four readouts by sqrt(2)*d_r**-0.25, which keeps
    activations of the contraction scan from exploding or vanishing.  A
    requested unit-disk init (r_min=0 and/or r_max=1) is clamped to
    [1e-12, 1 - 1e-12] to keep the logarithm finite.

    Draw order is lam, B, Lmat, R, H (one contiguous block of uniforms each),
    so two calls with the same seed and different ``apply_scaling`` produce
    exactly proportional values.
    """
    if num_blocks < 1 or d_h < 1 or d_r < 1:
        raise ValueError("num_blocks, d_h and d_r must all be >= 1")
    if not (0.0 <= r_min < r_max <= 1.0):
        raise ValueError(f"require 0 <= r_min < r_max <= 1, got ({r_min}, {r_max})")
    lo = max(r_min, _EPS_UNIT_DISK)
    hi = min(r_max, 1.0 - _EPS_UNIT_DISK)

    rng = np.random.default_rng(seed)
    rank = num_blocks * d_r
    lam = _draw_ring((rank,), lo, hi, rng)
    blocks = [_draw_ring((num_blocks, d_h, d_r), lo, hi, rng) for _ in range(4)]

    lam_t = torch.from_numpy(lam).to(dtype)
    head_ts = [torch.from_numpy(b).to(dtype) for b in blocks]
    if apply_scaling:
        # Scale in the storage dtype so scaled values are exactly the
        # pre-scaling draws times the scale factor.
        lam_t = lam_t * math.sqrt(2.0)
        head_scale = math.sqrt(2.0) * d_r ** (-0.25)
        head_ts = [b * head_scale for b in head_ts]
    return SpectralParams(lam_t, *head_ts, r_min=lo, r_max=hi, trainable=trainable)


def _check_features(features: torch.Tensor, params: SpectralParams):
    if features.ndim < 3:
        raise ValueError("features must have shape [..., N, num_blocks, d_h]")
    n_steps = features.shape[-3]
    if n_steps < 2:
        raise ValueError(f"sequence length must be >= 2, got {n_steps}")
    if features.shape[-2] != params.num_blocks or features.shape[-1] != params.d_h:
        raise ValueError(
            f"feature shape {tuple(features.shape[-2:])} does not match "
            f"params ({params.num_blocks}, {params.d_h})"
        )
    return n_steps


def _pack_proj(mat: torch.Tensor) -> torch.Tensor:
    """[l, h, r] complex -> [l, 2h, 2r] real computing M^T on packed [re||im] vectors."""
    re, im = mat.real, mat.imag
    return torch.cat(
        [torch.cat([re, im], dim=-1), torch.cat([-im, re], dim=-1)], dim=-2
    )


def _pack_expand(mat: torch.Tensor) -> torch.Tensor:
    """[l, h, r] complex -> [l, 2h, 2r] real computing M on packed coefficients."""
    re, im = mat.real, mat.imag
    return torch.cat(
        [torch.cat([re, -im], dim=-1), torch.cat([im, re], dim=-1)], dim=-2
    )


def _cmul_packed(a_re, a_im, packed):
    """Elementwise complex multiply of packed [.., 2k] values by (a_re, a_im) [.., k]."""
    xr, xi = packed.chunk(2, dim=-1)
    return torch.cat([a_re * xr - a_im * xi, a_re * xi + a_im * xr], dim=-1)


def contract_sequence_packed(features: torch.Tensor, params: SpectralParams) -> tuple[torch.Tensor, torch.Tensor]:
    """The contraction scan on a packed real feature stack [..., N, l, 2*d_h].

    The last axis holds [real || imag] halves; complex products become
    doubled-real matrix products (CPU complex kernels are far slower than
    real GEMMs).  Returns (real, imag) of the contraction value, shape [...].
    """
    if features.shape[-1] != 2 * params.d_h or features.shape[-2] != params.num_blocks:
        raise ValueError(
            f"packed feature shape {tuple(features.shape[-2:])} does not match "
            f"params ({params.num_blocks}, {2 * params.d_h})"
        )
    n_steps = features.shape[-3]
    if n_steps < 2:
        raise ValueError(f"sequence length must be >= 2, got {n_steps}")
    lam = params.lam_blocks()
    lam_re, lam_im = lam.real, lam.imag
    # One reshape + unbind instead of per-step selects: the backward is a
    # single stack rather than N full-size zero-filled gradients.
    steps = features.movedim(-3, 0).contiguous().unbind(0)
    beta = _cmul_packed(lam_re, lam_im,
                        torch.einsum("lgs,...lg->...ls", _pack_proj(params.B), steps[0]))
    if n_steps > 2:
        expand_l = _pack_expand(params.Lmat)
        proj_r = _pack_proj(params.R)
        for n in range(1, n_steps - 1):
            up = torch.einsum("lgs,...ls->...lg", expand_l, beta)
            hr, hi = steps[n].chunk(2, dim=-1)
            ur, ui = up.chunk(2, dim=-1)
            w = torch.cat([hr * ur - hi * ui, hr * ui + hi * ur], dim=-1)
            beta = _cmul_packed(lam_re, lam_im, torch.einsum("lgs,...lg->...ls", proj_r, w))
    tail = torch.einsum("lgs,...lg->...ls", _pack_proj(params.H), steps[n_steps - 1])
    b_re, b_im = beta.chunk(2, dim=-1)
    t_re, t_im = tail.chunk(2, dim=-1)
    out_re = (b_re * t_re - b_im * t_im).sum(dim=(-2, -1))
    out_im = (b_re * t_im + b_im * t_re).sum(dim=(-2, -1))
    return out_re, out_im


def contract_sequence_pair(feat_re: torch.Tensor, feat_im: torch.Tensor,
                           params: SpectralParams) -> tuple[torch.Tensor, torch.Tensor]:
    """Split (real, imag) entry point; packs the halves and delegates."""
    n_steps = _check_features(feat_re, params)
    del n_steps
    if feat_im.shape != feat_re.shape:
        raise ValueError("real and imaginary feature stacks must have the same shape")
    return contract_sequence_packed(torch.cat([feat_re, feat_im], dim=-1), params)


def contract_sequence(features: torch.Tensor, params: SpectralParams) -> torch.Tensor:
    """Evaluate the spectral chain by a linear-memory left-to-right scan.

    features: complex [..., N, num_blocks, d_h]; returns complex [...].
    The scan carries beta in C^[num_blocks, d_r]:

        beta <- lam . (B^T h^1)
        beta <- lam . (R^T (h^n . (L beta)))   for n = 2..N-1
        result = beta^T (H^T h^N)

    All products are bilinear (no conjugation); the block structure makes
    each step a batch of num_blocks independent d_h x d_r products.
    """
    if not features.is_complex():
        features = features.to(params.lam.dtype)
    out_re, out_im = contract_sequence_pair(features.real, features.imag, params)
    return torch.complex(out_re, out_im)


def contract_bruteforce(features, params: SpectralParams) -> complex:
    """Literal evaluation of the index sum, as an oracle for the scan.

    Iterates over every tuple (i2, ..., iN) in [r]^(N-1), materializing each
    interior matrix element [L^T diag(h^n) R]_{i j} explicitly, and
    accumulates the products in complex128.  Guarded by
    ``BRUTEFORCE_MAX_TUPLES`` since the tuple count is r**(N-1).
    """
    if isinstance(features, torch.Tensor):
        feats = features.detach().cpu().numpy()
    else:
        feats = np.asarray(features)
    if feats.ndim != 3:
        raise ValueError("contract_bruteforce expects a single sequence [N, num_blocks, d_h]")
    n_steps = feats.shape[0]
    if n_steps < 2:
        raise ValueError(f"sequence length must be >= 2, got {n_steps}")
    rank = params.rank
    if rank ** (n_steps - 1) > BRUTEFORCE_MAX_TUPLES:
        raise ValueError(
            f"index space r^(N-1) = {rank}^{n_steps - 1} exceeds guard {BRUTEFORCE_MAX_TUPLES}"
        )

    h = feats.reshape(n_steps, -1).astype(np.complex128)
    lam = params.lam.detach().cpu().numpy().astype(np.complex128)
    Bd = params.dense("B").detach().cpu().numpy().astype(np.complex128)
    Ld = params.dense("Lmat").detach().cpu().numpy().astype(np.complex128)
    Rd = params.dense("R").detach().cpu().numpy().astype(np.complex128)
    Hd = params.dense("H").detach().cpu().numpy().astype(np.complex128)

    head = Bd.T @ h[0]
    tail = Hd.T @ h[-1]
    interiors = [Ld.T @ np.diag(h[n]) @ Rd for n in range(1, n_steps - 1)]

    total = 0.0 + 0.0j
    for idx in itertools.product(range(rank), repeat=n_steps - 1):
        term = head[idx[0]] * lam[idx[0]]
        for k, mat in enumerate(interiors):
            term = term * mat[idx[k], idx[k + 1]] * lam[idx[k + 1]]
        total += term * tail[idx[-1]]
    return complex(total)


def materialize_mean_embedding(params: SpectralParams, n_steps: int) -> torch.Tensor:
    """Build the full order-N embedding tensor T of shape [d_f]^N.

    T[k1, ..., kN] = sum_{i2..iN} B[k1,i2] lam[i2] (L[k2,i2] R[k2,i3]) lam[i3]
                     ... H[kN,iN], so that the bilinear pairing of T with
    h^1 x ... x h^N equals ``contract_sequence``.  Only used by tests and the
    memory benchmark; size is guarded by ``MATERIALIZE_MAX_ENTRIES``.
    """
    if n_steps < 2:
        raise ValueError(f"sequence length must be >= 2, got {n_steps}")
    d_f = params.d_f
    if d_f ** n_steps > MATERIALIZE_MAX_ENTRIES:
        raise ValueError(
            f"tensor size d_f^N = {d_f}^{n_steps} exceeds guard {MATERIALIZE_MAX_ENTRIES}"
        )
    lam = params.lam
    Bd = params.dense("B")
    Hd = params.dense("H")
    partial = Bd * lam  # [d_f, r], indices (k1, i2)
    if n_steps > 2:
        pair = torch.einsum("ki,kj->kij", params.dense("Lmat"), params.dense("R"))
        for _ in range(n_steps - 2):
            partial = torch.einsum("...i,kij->...kj", partial, pair) * lam
    return torch.einsum("...i,ki->...k", partial, Hd)


def tensor_inner_product(features: torch.Tensor, tensor: torch.Tensor) -> torch.Tensor:
    """Bilinear pairing of a rank-one feature sequence with an order-N tensor."""
    n_steps = features.shape[0]
    if tensor.ndim != n_steps:
        raise ValueError(f"tensor order {tensor.ndim} does not match sequence length {n_steps}")
    flat = features.reshape(n_steps, -1).to(tensor.dtype)
    out = tensor
    for n in range(n_steps):
        out = torch.einsum("k...,k->...", out, flat[n])
    return out


def matrix_states(features: torch.Tensor, params: SpectralParams) -> torch.Tensor:
    """Explicit interior matrix states M_n = L^T diag(h^n) R, n = 2..N-1.

    Returns complex [..., N-2, rank, rank].  Only used by the stability
    regularizer and by tests; the sampling path never materializes these.
    """
    n_steps = _check_features(features, params)
    if not features.is_complex():
        features = features.to(params.lam.dtype)
    Ld = params.dense("Lmat")
    Rd = params.dense("R")
    inner = features[..., 1:n_steps - 1, :, :].reshape(*features.shape[:-3], n_steps - 2, params.d_f)
    return torch.einsum("ki,...k,kj->...ij", Ld, inner, Rd)


def _top_two_indices(eigvals: np.ndarray) -> np.ndarray:
    """Indices of the two largest-magnitude eigenvalues per matrix.

    Ties break by descending real part, then descending imaginary part, so
    the selection is deterministic under permutations of equal eigenvalues.
    """
    order = np.lexsort(
        (-eigvals.imag, -eigvals.real, -np.abs(eigvals)), axis=-1
    )
    return order[..., :2]


def stability_loss(states: torch.Tensor) -> torch.Tensor:
    """Mean of |s1 - 1|^2 + |s2 - 1|^2 over matrices, s1, s2 the top eigenvalues.

    "Top" means largest magnitude (the spectral-radius reading of stability).
    Differentiable with respect to the matrix entries via the eigenvalue
    decomposition; non-finite input raises instead of propagating NaN.
    """
    if states.ndim < 2 or states.shape[-1] != states.shape[-2]:
        raise ValueError("states must be [..., r, r] square matrices")
    if states.shape[-1] < 2:
        raise ValueError("stability loss needs matrices of size r >= 2")
    flat = torch.view_as_real(states) if states.is_complex() else states
    if not torch.isfinite(flat).all():
        raise ValueError("non-finite matrix entries in stability loss input")
    eigvals = torch.linalg.eigvals(states)
    idx = torch.from_numpy(
        np.ascontiguousarray(_top_two_indices(eigvals.detach().cpu().numpy()))
    ).to(states.device)
    top = torch.gather(eigvals, -1, idx)
    per_matrix = ((top - 1.0).abs() ** 2).sum(dim=-1)
    return per_matrix.mean()
