"""Set-attention network predicting blending weights from ray embeddings.

Forward and reverse passes are hand-written numpy in float64 so gradients
can be verified against finite differences. Every reduction over the
candidate-set axis sums its terms in sorted order, which makes the
outputs bit-identical under any permutation of the input set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

EMBED_DIM = 14  # [target ray (6) | source ray (6) | disp_x | disp_y]
EMBEDDING_LAYOUT_VERSION = 1

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)
_LN_EPS = 1e-6


@dataclass(frozen=True)
class AttentionConfig:
    """Architecture sizes for the ray-weight network."""

    d_model: int = 64
    heads: int = 4
    layers: int = 2
    k_sources: int = 5

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if self.k_sources < 1:
            raise ValueError("k_sources must be >= 1")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    @property
    def d_ff(self) -> int:
        return 2 * self.d_model


@dataclass
class RayTransformerParams:
    """Named parameter arrays plus the config they were shaped for.

    `feature_scale` is a fixed per-feature normalization (not trained);
    everything else is trainable.
    """

    config: AttentionConfig
    arrays: dict

    def trainable(self) -> dict:
        return {k: v for k, v in self.arrays.items() if k != "feature_scale"}

    def copy(self) -> "RayTransformerParams":
        return RayTransformerParams(self.config, {k: v.copy() for k, v in self.arrays.items()})


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) redrawing samples beyond 2 std."""
    out = rng.normal(0.0, std, shape)
    for _ in range(64):
        bad = np.abs(out) > 2.0 * std
        if not bad.any():
            break
        out[bad] = rng.normal(0.0, std, int(bad.sum()))
    return np.clip(out, -2.0 * std, 2.0 * std)


def default_feature_scale(height: int, width: int, max_disparity: float = 8.0) -> np.ndarray:
    """Fixed input normalization: moments scale with frame size, disparity with its bound."""
    s = 2.0 / max(height, width)
    q = 1.0 / max_disparity
    return np.array([1, 1, 1, s, s, s, 1, 1, 1, s, s, s, q, q], dtype=np.float64)


def init_params(
    cfg: AttentionConfig,
    seed: int,
    feature_scale: np.ndarray | None = None,
    std: float = 0.02,
) -> RayTransformerParams:
    """Seeded truncated-normal init; values are float32-representable so
    checkpoints round-trip bit-exactly."""
    rng = np.random.default_rng(seed)
    d, f = cfg.d_model, cfg.d_ff
    arrays: dict[str, np.ndarray] = {}
    if feature_scale is None:
        feature_scale = np.ones(EMBED_DIM)
    arrays["feature_scale"] = np.asarray(feature_scale, dtype=np.float64)

    def tn(shape):
        return _truncated_normal(rng, shape, std)

    arrays["embed_w1"] = tn((EMBED_DIM, d))
    arrays["embed_b1"] = np.zeros(d)
    arrays["embed_w2"] = tn((d, d))
    arrays["embed_b2"] = np.zeros(d)
    for i in range(cfg.layers):
        p = f"blk{i}_"
        arrays[p + "ln1_g"] = np.ones(d)
        for name in ("wq", "wk", "wv", "wo"):
            arrays[p + name] = tn((d, d))
        arrays[p + "ln2_g"] = np.ones(d)
        arrays[p + "ffn_w1"] = tn((d, f))
        arrays[p + "ffn_b1"] = np.zeros(f)
        arrays[p + "ffn_w2"] = tn((f, d))
        arrays[p + "ffn_b2"] = np.zeros(d)
    arrays["head_ln_g"] = np.ones(d)
    arrays["head_w"] = tn((d,))
    arrays["head_b"] = np.zeros(1)
    arrays = {k: v.astype(np.float32).astype(np.float64) for k, v in arrays.items()}
    return RayTransformerParams(config=cfg, arrays=arrays)


def _setsum(a: np.ndarray, axis: int) -> np.ndarray:
    """Sum with a value-canonical order: invariant to permutations of the axis."""
    return np.sort(a, axis=axis).sum(axis=axis)


def _softmax_set(z: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with an order-independent denominator."""
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / _setsum(e, axis=-1)[..., None]


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi


def _layernorm(x: np.ndarray, g: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat, (xhat, inv)


def _layernorm_backward(dn: np.ndarray, g: np.ndarray, ctx) -> tuple[np.ndarray, np.ndarray]:
    xhat, inv = ctx
    dg = (dn * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = dn * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg


def forward(params: RayTransformerParams, embeddings: np.ndarray):
    """Blending weights for (B, k, 14) embedding sets.

    Returns (weights (B, k), cache for backward).
    """
    cfg = params.config
    a = params.arrays
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim == 2:
        e = e[None]
    B, k, feat = e.shape
    if feat != EMBED_DIM:
        raise ValueError(f"embeddings must have {EMBED_DIM} features, got {feat}")
    if k < 1 or k > cfg.k_sources:
        raise ValueError(f"set size {k} outside [1, {cfg.k_sources}]")
    h, dh, d = cfg.heads, cfg.d_head, cfg.d_model
    cache: dict = {"B": B, "k": k}

    x0 = e * a["feature_scale"]
    z1 = x0 @ a["embed_w1"] + a["embed_b1"]
    a1 = _gelu(z1)
    x = a1 @ a["embed_w2"] + a["embed_b2"]
    cache["embed"] = (x0, z1, a1)

    for i in range(cfg.layers):
        p = f"blk{i}_"
        n, ln1 = _layernorm(x, a[p + "ln1_g"])
        q = (n @ a[p + "wq"]).reshape(B, k, h, dh).transpose(0, 2, 1, 3)
        kk = (n @ a[p + "wk"]).reshape(B, k, h, dh).transpose(0, 2, 1, 3)
        v = (n @ a[p + "wv"]).reshape(B, k, h, dh).transpose(0, 2, 1, 3)
        sc = q @ kk.transpose(0, 1, 3, 2) / np.sqrt(dh)  # (B, h, k, k)
        alpha = _softmax_set(sc)
        att = _setsum(alpha[..., None] * v[:, :, None, :, :], axis=3)  # (B, h, k, dh)
        att_m = att.transpose(0, 2, 1, 3).reshape(B, k, d)
        o = att_m @ a[p + "wo"]
        x_res = x
        x = x + o
        n2, ln2 = _layernorm(x, a[p + "ln2_g"])
        zf = n2 @ a[p + "ffn_w1"] + a[p + "ffn_b1"]
        af = _gelu(zf)
        ff = af @ a[p + "ffn_w2"] + a[p + "ffn_b2"]
        x = x + ff
        cache[f"blk{i}"] = (x_res, n, ln1, q, kk, v, alpha, att_m, n2, ln2, zf, af)

    n3, ln3 = _layernorm(x, a["head_ln_g"])
    # multiply+reduce instead of GEMV: BLAS matvec results can depend on row
    # position, which would break bit-level permutation equivariance
    logits = (n3 * a["head_w"]).sum(axis=-1) + a["head_b"][0]
    w = _softmax_set(logits)
    cache["head"] = (n3, ln3, w)
    return w, cache


def backward(params: RayTransformerParams, cache: dict, dw: np.ndarray) -> dict:
    """Gradients of all trainable arrays given dL/d(weights)."""
    cfg = params.config
    a = params.arrays
    B, k = cache["B"], cache["k"]
    h, dh, d = cfg.heads, cfg.d_head, cfg.d_model
    grads = {name: np.zeros_like(arr) for name, arr in params.trainable().items()}

    n3, ln3, w = cache["head"]
    dlogits = w * (dw - (w * dw).sum(axis=-1, keepdims=True))
    grads["head_w"] += (n3 * dlogits[..., None]).reshape(-1, d).sum(axis=0)
    grads["head_b"] += np.array([dlogits.sum()])
    dn3 = dlogits[..., None] * a["head_w"]
    dx, dg = _layernorm_backward(dn3, a["head_ln_g"], ln3)
    grads["head_ln_g"] += dg

    for i in reversed(range(cfg.layers)):
        p = f"blk{i}_"
        x_res, n, ln1, q, kk, v, alpha, att_m, n2, ln2, zf, af = cache[f"blk{i}"]
        # FFN sub-block
        dff = dx
        grads[p + "ffn_w2"] += af.reshape(-1, cfg.d_ff).T @ dff.reshape(-1, d)
        grads[p + "ffn_b2"] += dff.reshape(-1, d).sum(axis=0)
        daf = dff @ a[p + "ffn_w2"].T
        dzf = daf * _gelu_grad(zf)
        grads[p + "ffn_w1"] += n2.reshape(-1, d).T @ dzf.reshape(-1, cfg.d_ff)
        grads[p + "ffn_b1"] += dzf.reshape(-1, cfg.d_ff).sum(axis=0)
        dn2 = dzf @ a[p + "ffn_w1"].T
        dx2, dg2 = _layernorm_backward(dn2, a[p + "ln2_g"], ln2)
        grads[p + "ln2_g"] += dg2
        dx = dx + dx2
        # attention sub-block
        do = dx
        grads[p + "wo"] += att_m.reshape(-1, d).T @ do.reshape(-1, d)
        datt_m = do @ a[p + "wo"].T
        datt = datt_m.reshape(B, k, h, dh).transpose(0, 2, 1, 3)
        dalpha = datt @ v.transpose(0, 1, 3, 2)
        dv = alpha.transpose(0, 1, 3, 2) @ datt
        dsc = alpha * (dalpha - (alpha * dalpha).sum(axis=-1, keepdims=True))
        dsc = dsc / np.sqrt(dh)
        dq = dsc @ kk
        dkk = dsc.transpose(0, 1, 3, 2) @ q
        dn_flat = np.zeros_like(n)
        for name, grad_h in (("wq", dq), ("wk", dkk), ("wv", dv)):
            g2d = grad_h.transpose(0, 2, 1, 3).reshape(B, k, d)
            grads[p + name] += n.reshape(-1, d).T @ g2d.reshape(-1, d)
            dn_flat = dn_flat + g2d @ a[p + name].T
        dx1, dg1 = _layernorm_backward(dn_flat, a[p + "ln1_g"], ln1)
        grads[p + "ln1_g"] += dg1
        dx = dx + dx1

    x0, z1, a1 = cache["embed"]
    grads["embed_w2"] += a1.reshape(-1, d).T @ dx.reshape(-1, d)
    grads["embed_b2"] += dx.reshape(-1, d).sum(axis=0)
    da1 = dx @ a["embed_w2"].T
    dz1 = da1 * _gelu_grad(z1)
    grads["embed_w1"] += x0.reshape(-1, EMBED_DIM).T @ dz1.reshape(-1, d)
    grads["embed_b1"] += dz1.reshape(-1, d).sum(axis=0)
    return grads
