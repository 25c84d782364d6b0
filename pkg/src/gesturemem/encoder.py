"""Spatio-temporal graph encoder pair, decoder head, and momentum coupling.

The encoder maps a [C, T', V] skeleton window to a unit-norm feature vector of
configurable dimension: a stack of blocks, each a spatial graph convolution over
the fixed 3-joint skeleton followed by a same-padded temporal convolution (both
ReLU-activated), then global average pooling over time and joints and an affine
projection. Pooling makes one parameter set accept any T' >= the temporal kernel,
so short windows and their long context windows share an architecture.

Forward and backward passes are written out explicitly so every gradient path
can be verified against central finite differences.

Parameters live in plain dicts of numpy arrays keyed like ``block0.spatial.w``;
the short-term and long-term encoders hold structurally identical dicts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteError, StructuralError

NORM_EPS = 1e-12


@dataclass(frozen=True)
class SkeletonGraph:
    """Fixed 3-joint skeleton: both thighs attach to the head, plus self-loops."""

    adjacency: np.ndarray      # binary, with self-loops
    normalized: np.ndarray     # D^(-1/2) (A+I) D^(-1/2)


def skeleton_graph():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1.0  # head - left thigh
    a[0, 2] = a[2, 0] = 1.0  # head - right thigh
    with_loops = a + np.eye(3)
    return SkeletonGraph(adjacency=with_loops, normalized=normalize_adjacency(with_loops))


def normalize_adjacency(adj_with_loops):
    """Symmetric degree normalization of an adjacency matrix with self-loops."""
    deg = adj_with_loops.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return adj_with_loops * inv_sqrt[:, None] * inv_sqrt[None, :]


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 3
    num_joints: int = 3
    blocks: int = 2
    width: int = 32
    temporal_kernel: int = 3
    feature_dim: int = 128

    def __post_init__(self):
        if min(self.in_channels, self.num_joints, self.blocks, self.width,
               self.temporal_kernel, self.feature_dim) < 1:
            raise ConfigError("all encoder dimensions must be >= 1")


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_encoder_params(cfg, rng, dtype=np.float32):
    """Fan-in-scaled uniform weights; zero biases.

    Zero biases matter here: window signals are centimeter-scale, and random
    biases would swamp them through the normalization, collapsing features
    toward a constant direction at initialization.
    """
    params = {}
    in_ch = cfg.in_channels
    for i in range(cfg.blocks):
        params[f"block{i}.spatial.w"] = _uniform(rng, in_ch, (cfg.width, in_ch), dtype)
        params[f"block{i}.spatial.b"] = np.zeros(cfg.width, dtype)
        fan = cfg.width * cfg.temporal_kernel
        params[f"block{i}.temporal.w"] = _uniform(
            rng, fan, (cfg.width, cfg.width, cfg.temporal_kernel), dtype)
        params[f"block{i}.temporal.b"] = np.zeros(cfg.width, dtype)
        in_ch = cfg.width
    params["proj.w"] = _uniform(rng, cfg.width, (cfg.feature_dim, cfg.width), dtype)
    params["proj.b"] = np.zeros(cfg.feature_dim, dtype)
    return params


def init_decoder_params(feature_dim, n_classes, rng, dtype=np.float32):
    return {
        "w": _uniform(rng, feature_dim, (n_classes, feature_dim), dtype),
        "b": np.zeros(n_classes, dtype),
    }


def init_encoders(cfg, n_classes, seed, dtype=np.float32):
    """Create (short-term params, long-term params, decoder params).

    The long-term encoder starts as an exact copy of the short-term one so the
    momentum coupling starts from a zero parameter gap.
    """
    rng = np.random.default_rng(seed)
    return init_encoders_from_rng(cfg, n_classes, rng, dtype)


def init_encoders_from_rng(cfg, n_classes, rng, dtype=np.float32):
    params_s = init_encoder_params(cfg, rng, dtype)
    params_l = {k: v.copy() for k, v in params_s.items()}
    decoder = init_decoder_params(cfg.feature_dim, n_classes, rng, dtype)
    return params_s, params_l, decoder


def param_names(cfg):
    names = []
    for i in range(cfg.blocks):
        names += [f"block{i}.spatial.w", f"block{i}.spatial.b",
                  f"block{i}.temporal.w", f"block{i}.temporal.b"]
    names += ["proj.w", "proj.b"]
    return names


def _check_input(x, cfg):
    if x.ndim != 4:
        raise StructuralError(f"expected [B, C, T, V] input, got shape {x.shape}")
    b, c, t, v = x.shape
    if c != cfg.in_channels or v != cfg.num_joints:
        raise StructuralError(
            f"input shape {x.shape} incompatible with C={cfg.in_channels}, "
            f"V={cfg.num_joints}")
    if t < cfg.temporal_kernel:
        raise StructuralError(
            f"window of {t} frames is shorter than the temporal kernel "
            f"({cfg.temporal_kernel})")
    if not np.isfinite(x).all():
        raise NonFiniteError("non-finite value in encoder input")


def encode_forward(params, x, adj, cfg, want_cache=False):
    """Batched forward pass. x: [B, C, T, V] -> unit-norm features [B, feature_dim].

    With ``want_cache`` the returned cache holds every intermediate needed by
    :func:`encode_backward`.
    """
    _check_input(x, cfg)
    adj = adj.astype(x.dtype, copy=False)
    h = x
    block_caches = []
    k = cfg.temporal_kernel
    pad_l = (k - 1) // 2
    pad_r = k - 1 - pad_l
    for i in range(cfg.blocks):
        w_s = params[f"block{i}.spatial.w"]
        b_s = params[f"block{i}.spatial.b"]
        w_t = params[f"block{i}.temporal.w"]
        b_t = params[f"block{i}.temporal.b"]
        xa = np.einsum("bitu,uv->bitv", h, adj)
        pre_s = np.einsum("oi,bitv->botv", w_s, xa) + b_s[None, :, None, None]
        act_s = np.maximum(pre_s, 0.0)
        xp = np.pad(act_s, ((0, 0), (0, 0), (pad_l, pad_r), (0, 0)))
        t_len = act_s.shape[2]
        pre_t = np.einsum("oi,bitv->botv", w_t[:, :, 0], xp[:, :, 0:t_len, :])
        for kk in range(1, k):
            pre_t += np.einsum("oi,bitv->botv", w_t[:, :, kk], xp[:, :, kk:kk + t_len, :])
        pre_t += b_t[None, :, None, None]
        act_t = np.maximum(pre_t, 0.0)
        if want_cache:
            block_caches.append((xa, pre_s, xp, pre_t))
        h = act_t
    pooled = h.mean(axis=(2, 3))
    z = pooled @ params["proj.w"].T + params["proj.b"]
    norm = np.sqrt((z * z).sum(axis=1, keepdims=True))
    r = np.maximum(norm, NORM_EPS)
    f = z / r
    if not want_cache:
        return f, None
    cache = {
        "params": params, "adj": adj, "cfg": cfg,
        "blocks": block_caches, "last": h, "pooled": pooled, "f": f, "r": r,
    }
    return f, cache


def encode_backward(cache, grad_f):
    """Backward pass for :func:`encode_forward`.

    Returns ``(grads, grad_x)`` where ``grads`` mirrors the parameter dict.
    """
    params = cache["params"]
    adj = cache["adj"]
    cfg = cache["cfg"]
    f, r = cache["f"], cache["r"]
    k = cfg.temporal_kernel
    pad_l = (k - 1) // 2

    grads = {}
    # through L2 normalization: project out the radial component
    g = (grad_f - f * (f * grad_f).sum(axis=1, keepdims=True)) / r
    grads["proj.w"] = g.T @ cache["pooled"]
    grads["proj.b"] = g.sum(axis=0)
    g_pooled = g @ params["proj.w"]

    h_last = cache["last"]
    _, _, t_len, v = h_last.shape
    g_h = np.broadcast_to((g_pooled / (t_len * v))[:, :, None, None], h_last.shape)

    for i in reversed(range(cfg.blocks)):
        xa, pre_s, xp, pre_t = cache["blocks"][i]
        w_s = params[f"block{i}.spatial.w"]
        w_t = params[f"block{i}.temporal.w"]
        g_t = g_h * (pre_t > 0)
        grads[f"block{i}.temporal.b"] = g_t.sum(axis=(0, 2, 3))
        g_wt = np.empty_like(w_t)
        g_xp = np.zeros_like(xp)
        t_len = pre_t.shape[2]
        for kk in range(k):
            g_wt[:, :, kk] = np.einsum("botv,bitv->oi", g_t, xp[:, :, kk:kk + t_len, :])
            g_xp[:, :, kk:kk + t_len, :] += np.einsum("oi,botv->bitv", w_t[:, :, kk], g_t)
        grads[f"block{i}.temporal.w"] = g_wt
        g_s = g_xp[:, :, pad_l:pad_l + t_len, :] * (pre_s > 0)
        grads[f"block{i}.spatial.b"] = g_s.sum(axis=(0, 2, 3))
        grads[f"block{i}.spatial.w"] = np.einsum("botv,bitv->oi", g_s, xa)
        g_xa = np.einsum("oi,botv->bitv", w_s, g_s)
        g_h = np.einsum("bitv,uv->bitu", g_xa, adj)
    return grads, g_h


def encode(params, x, adj, cfg):
    """Encode a single [C, T', V] window into a unit-norm feature vector."""
    if x.ndim != 3:
        raise StructuralError(f"expected [C, T, V] input, got shape {x.shape}")
    f, _ = encode_forward(params, x[None], adj, cfg, want_cache=False)
    return f[0]


def classify(decoder, f):
    """Softmax class probabilities for a feature vector (or a batch of them)."""
    logits = f @ decoder["w"].T + decoder["b"]
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def momentum_update(params_l, params_s, coef):
    """Exponential-moving-average update of the long-term encoder.

    Computed as ``theta_S + coef * (theta_L - theta_S)``, algebraically
    ``coef*theta_L + (1-coef)*theta_S`` but exact at coef=0 and at
    ``theta_L == theta_S``, and with exactly geometric gap decay.
    """
    if not (0.0 <= coef < 1.0):
        raise ConfigError(f"momentum coefficient must be in [0, 1), got {coef}")
    if set(params_l) != set(params_s):
        raise StructuralError("encoder parameter sets differ in structure")
    out = {}
    for name, tl in params_l.items():
        ts = params_s[name]
        if tl.shape != ts.shape:
            raise StructuralError(
                f"shape mismatch for {name}: {tl.shape} vs {ts.shape}")
        out[name] = ts + coef * (tl - ts)
    return out
