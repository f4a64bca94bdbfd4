"""Conditional epsilon-prediction denoiser over cluster tokens.

One token per cluster.  Token = projection of the two value channels
(conditioning observation, noisy target; each zeroed outside its mask)
+ projected learned cluster embedding + projected sinusoidal embedding of
the diffusion step.  A stack of residual blocks follows, each multi-head
self-attention across the cluster axis then a gated (tanh * sigmoid)
pointwise feedforward; every block contributes a skip projection, and the
output head maps the skip sum to one scalar per cluster.

Forward and reverse passes are hand-written NumPy; `backward` returns the
gradient of an arbitrary scalar loss given d(loss)/d(output).  Dense
projections are reshaped to single GEMMs so BLAS carries the hot path.
The analytic gradients are validated against central finite differences
in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLUSTER_EMBED_DIM = 16


@dataclass(frozen=True)
class DenoiserConfig:
    cluster_count: int
    layers: int = 4
    channels: int = 64
    heads: int = 2
    embed_dim: int = 128

    def __post_init__(self):
        if min(self.cluster_count, self.layers, self.channels, self.heads, self.embed_dim) <= 0:
            raise ValueError("all denoiser dimensions must be positive")
        if self.channels % self.heads != 0:
            raise ValueError(f"channels={self.channels} not divisible by heads={self.heads}")


@dataclass
class DenoiserParams:
    """Named weight tensors in a stable order (the checkpoint order)."""

    tensors: dict

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        if name not in self.tensors:
            raise KeyError(name)
        self.tensors[name] = value

    @property
    def names(self):
        return list(self.tensors.keys())

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def copy(self) -> "DenoiserParams":
        return DenoiserParams({k: v.copy() for k, v in self.tensors.items()})


def param_shapes(cfg: DenoiserConfig) -> dict:
    d, e = cfg.channels, cfg.embed_dim
    shapes = {
        "in_w": (2, d),
        "in_b": (d,),
        "cluster_emb": (cfg.cluster_count, CLUSTER_EMBED_DIM),
        "cluster_w": (CLUSTER_EMBED_DIM, d),
        "step_w": (e, d),
    }
    for l in range(cfg.layers):
        p = f"layer{l}."
        shapes[p + "wq"] = (d, d)
        shapes[p + "bq"] = (d,)
        shapes[p + "wk"] = (d, d)
        shapes[p + "bk"] = (d,)
        shapes[p + "wv"] = (d, d)
        shapes[p + "bv"] = (d,)
        shapes[p + "wo"] = (d, d)
        shapes[p + "bo"] = (d,)
        shapes[p + "w1"] = (d, 2 * d)
        shapes[p + "b1"] = (2 * d,)
        shapes[p + "w2"] = (d, d)
        shapes[p + "b2"] = (d,)
        shapes[p + "ws"] = (d, d)
        shapes[p + "bs"] = (d,)
    shapes["head_w"] = (d, 1)
    shapes["head_b"] = (1,)
    return shapes


def init_params(cfg: DenoiserConfig, rng: np.random.Generator, dtype=np.float32) -> DenoiserParams:
    """Fan-in-scaled uniform init; zero biases; zero output head."""
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name.startswith("head_") or len(shape) == 1:  # output head and biases start at zero
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return DenoiserParams(tensors)


def step_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer steps, shape (B, dim)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.zeros((len(t), dim))
    emb[:, 0::2] = np.sin(args)
    emb[:, 1::2] = np.cos(args[:, : dim - half])
    return emb


def _sigmoid(x):
    # tanh form is numerically stable and a single vectorized ufunc
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _split_heads(x, B, C, H, dh):
    return np.ascontiguousarray(x.reshape(B, C, H, dh).transpose(0, 2, 1, 3))


def _merge_heads(x, B, C, d):
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(B, C, d)


def _proj(x2, w, b=None):
    # x2: (B*C, d_in) contiguous; single GEMM
    out = x2 @ w
    if b is not None:
        out += b
    return out


def _embed_tokens(p, cfg, cond_values, cond_mask, noisy_target, target_mask, t, dtype):
    B, C = np.asarray(cond_values).shape
    if C != cfg.cluster_count:
        raise ValueError(f"input has {C} clusters, config expects {cfg.cluster_count}")
    if (np.asarray(cond_mask, dtype=bool) & np.asarray(target_mask, dtype=bool)).any():
        raise ValueError("cond_mask and target_mask overlap")
    x = np.stack(
        [
            np.asarray(cond_values, dtype=dtype) * cond_mask,
            np.asarray(noisy_target, dtype=dtype) * target_mask,
        ],
        axis=-1,
    )  # (B, C, 2)
    sin_emb = step_embedding(t, cfg.embed_dim).astype(dtype)  # (B, E)
    cl_tok = p["cluster_emb"] @ p["cluster_w"]  # (C, d)
    h = x.reshape(B * C, 2) @ p["in_w"] + p["in_b"]
    h = h.reshape(B, C, cfg.channels)
    h += cl_tok[None]
    h += (sin_emb @ p["step_w"])[:, None, :]
    return x, sin_emb, h


def forward(
    params: DenoiserParams,
    cfg: DenoiserConfig,
    cond_values: np.ndarray,  # (B, C)
    cond_mask: np.ndarray,
    noisy_target: np.ndarray,  # (B, C)
    target_mask: np.ndarray,
    t: np.ndarray,  # (B,) steps in [1, T]
    want_cache: bool = False,
    scratch: dict | None = None,
):
    """Predicted noise, shape (B, C); optionally caches intermediates.

    Without a cache (inference) the computation runs through reusable
    ``scratch`` buffers so repeated same-shape calls (the reverse sampler)
    avoid reallocating the large attention temporaries every step.
    """
    if not want_cache:
        return _forward_fast(params, cfg, cond_values, cond_mask, noisy_target,
                             target_mask, t, scratch if scratch is not None else {})
    p = params.tensors
    dtype = params.dtype
    d, H = cfg.channels, cfg.heads
    dh = d // H
    scale = 1.0 / np.sqrt(dh)

    x, sin_emb, h = _embed_tokens(p, cfg, cond_values, cond_mask, noisy_target, target_mask, t, dtype)
    B, C = x.shape[:2]
    BC = B * C

    skip = np.zeros((B, C, d), dtype=dtype)
    layer_caches = []
    for l in range(cfg.layers):
        pre = f"layer{l}."
        h_in = h
        h2 = h.reshape(BC, d)
        q = _proj(h2, p[pre + "wq"], p[pre + "bq"])
        k = _proj(h2, p[pre + "wk"], p[pre + "bk"])
        v = _proj(h2, p[pre + "wv"], p[pre + "bv"])
        qh = _split_heads(q, B, C, H, dh)
        kh = _split_heads(k, B, C, H, dh)
        vh = _split_heads(v, B, C, H, dh)
        s = qh @ kh.transpose(0, 1, 3, 2)
        s *= scale
        s -= s.max(axis=-1, keepdims=True)
        np.clip(s, -80.0, None, out=s)  # keep exp out of the subnormal range
        a = np.exp(s)
        a /= a.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(a @ vh, B, C, d)
        attn = _proj(ctx.reshape(BC, d), p[pre + "wo"], p[pre + "bo"]).reshape(B, C, d)
        h1 = h_in + attn
        u = _proj(h1.reshape(BC, d), p[pre + "w1"], p[pre + "b1"])
        ta = np.tanh(u[:, :d])
        sg = _sigmoid(u[:, d:])
        act = ta * sg  # (BC, d)
        h = h1 + _proj(act, p[pre + "w2"], p[pre + "b2"]).reshape(B, C, d)
        skip += _proj(act, p[pre + "ws"], p[pre + "bs"]).reshape(B, C, d)
        layer_caches.append((h_in, qh, kh, vh, a, ctx, h1, ta, sg, act))

    out = (skip.reshape(BC, d) @ p["head_w"] + p["head_b"]).reshape(B, C)
    cache = {"x": x, "sin_emb": sin_emb, "skip": skip, "layers": layer_caches, "shape": (B, C)}
    return out, cache


def _forward_fast(params, cfg, cond_values, cond_mask, noisy_target, target_mask, t, scratch):
    """Allocation-free forward (no gradient cache); same math as `forward`."""
    p = params.tensors
    dtype = params.dtype
    d, H = cfg.channels, cfg.heads
    dh = d // H
    scale = 1.0 / np.sqrt(dh)

    x, _, h = _embed_tokens(p, cfg, cond_values, cond_mask, noisy_target, target_mask, t, dtype)
    B, C = x.shape[:2]
    BC = B * C

    def buf(name, shape):
        arr = scratch.get(name)
        if arr is None or arr.shape != shape or arr.dtype != dtype:
            arr = np.empty(shape, dtype=dtype)
            scratch[name] = arr
        return arr

    if scratch.get("qkv_src") is not params:  # fused projections follow the param set
        scratch["qkv_src"] = params
        scratch["qkv_w"] = [
            np.hstack([p[f"layer{l}.wq"], p[f"layer{l}.wk"], p[f"layer{l}.wv"]])
            for l in range(cfg.layers)
        ]
        scratch["qkv_b"] = [
            np.concatenate([p[f"layer{l}.bq"], p[f"layer{l}.bk"], p[f"layer{l}.bv"]])
            for l in range(cfg.layers)
        ]
    qkv = buf("qkv", (BC, 3 * d))
    qh, kh, vh = (buf(n, (B, H, C, dh)) for n in ("qh", "kh", "vh"))
    s = buf("s", (B, H, C, C))
    red = buf("red", (B, H, C, 1))
    a = buf("a", (B, H, C, C))
    ctx_h = buf("ctx_h", (B, H, C, dh))
    ctx = buf("ctx", (BC, d))
    attn = buf("attn", (BC, d))
    h1 = buf("h1", (BC, d))
    u = buf("u", (BC, 2 * d))
    act = buf("act", (BC, d))
    ff = buf("ff", (BC, d))
    skip = buf("skip", (BC, d))
    skip[:] = 0.0

    h2 = np.ascontiguousarray(h.reshape(BC, d))
    for l in range(cfg.layers):
        pre = f"layer{l}."
        np.matmul(h2, scratch["qkv_w"][l], out=qkv)
        qkv += scratch["qkv_b"][l]
        split = qkv.reshape(B, C, 3, H, dh).transpose(2, 0, 3, 1, 4)
        np.copyto(qh, split[0])
        np.copyto(kh, split[1])
        np.copyto(vh, split[2])
        np.matmul(qh, kh.transpose(0, 1, 3, 2), out=s)
        s *= scale
        s -= np.max(s, axis=-1, keepdims=True, out=red)
        np.clip(s, -80.0, None, out=s)  # keep exp out of the subnormal range
        np.exp(s, out=a)
        a /= np.sum(a, axis=-1, keepdims=True, out=red)
        np.matmul(a, vh, out=ctx_h)
        np.copyto(ctx.reshape(B, C, H, dh), ctx_h.transpose(0, 2, 1, 3))
        np.matmul(ctx, p[pre + "wo"], out=attn)
        attn += p[pre + "bo"]
        np.add(h2, attn, out=h1)
        np.matmul(h1, p[pre + "w1"], out=u)
        u += p[pre + "b1"]
        ta = np.tanh(u[:, :d], out=u[:, :d])
        sg = u[:, d:]
        sg *= 0.5
        np.tanh(sg, out=sg)
        sg += 1.0
        sg *= 0.5
        np.multiply(ta, sg, out=act)
        np.matmul(act, p[pre + "w2"], out=ff)
        ff += p[pre + "b2"]
        np.add(h1, ff, out=h2)
        np.matmul(act, p[pre + "ws"], out=ff)
        ff += p[pre + "bs"]
        skip += ff

    out = skip @ p["head_w"] + p["head_b"]
    return out.reshape(B, C)


def backward(params: DenoiserParams, cfg: DenoiserConfig, cache: dict, d_out: np.ndarray) -> dict:
    """Gradients of a scalar loss w.r.t. every parameter, given dL/d(out)."""
    p = params.tensors
    dtype = params.dtype
    B, C = cache["shape"]
    d, H = cfg.channels, cfg.heads
    dh = d // H
    scale = 1.0 / np.sqrt(dh)
    BC = B * C
    g = {}

    d_out = np.ascontiguousarray(d_out, dtype=dtype).reshape(BC, 1)
    skip2 = cache["skip"].reshape(BC, d)
    g["head_w"] = skip2.T @ d_out
    g["head_b"] = d_out.sum(axis=0)
    dskip = d_out @ p["head_w"].T  # (BC, d)

    dh_out = np.zeros((B, C, d), dtype=dtype)
    for l in range(cfg.layers - 1, -1, -1):
        pre = f"layer{l}."
        h_in, qh, kh, vh, a, ctx, h1, ta, sg, act = cache["layers"][l]
        h1_2 = h1.reshape(BC, d)

        # h_out = h1 + act @ w2 + b2 ; skip contribution = act @ ws + bs
        dff = dh_out.reshape(BC, d)
        g[pre + "w2"] = act.T @ dff
        g[pre + "b2"] = dff.sum(axis=0)
        dact = dff @ p[pre + "w2"].T
        g[pre + "ws"] = act.T @ dskip
        g[pre + "bs"] = dskip.sum(axis=0)
        dact += dskip @ p[pre + "ws"].T

        dta = dact * sg
        dsg = dact * ta
        du = np.concatenate([dta * (1.0 - ta * ta), dsg * sg * (1.0 - sg)], axis=1)
        g[pre + "w1"] = h1_2.T @ du
        g[pre + "b1"] = du.sum(axis=0)
        dh1 = dff + du @ p[pre + "w1"].T  # (BC, d)

        # h1 = h_in + ctx @ wo + bo
        g[pre + "wo"] = ctx.reshape(BC, d).T @ dh1
        g[pre + "bo"] = dh1.sum(axis=0)
        dctx = _split_heads(dh1 @ p[pre + "wo"].T, B, C, H, dh)

        da = dctx @ vh.transpose(0, 1, 3, 2)
        dvh = a.transpose(0, 1, 3, 2) @ dctx
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
        dqh = (ds @ kh) * scale
        dkh = (ds.transpose(0, 1, 3, 2) @ qh) * scale

        dq = _merge_heads(dqh, B, C, d).reshape(BC, d)
        dk = _merge_heads(dkh, B, C, d).reshape(BC, d)
        dv = _merge_heads(dvh, B, C, d).reshape(BC, d)
        h_in2 = h_in.reshape(BC, d)
        g[pre + "wq"] = h_in2.T @ dq
        g[pre + "bq"] = dq.sum(axis=0)
        g[pre + "wk"] = h_in2.T @ dk
        g[pre + "bk"] = dk.sum(axis=0)
        g[pre + "wv"] = h_in2.T @ dv
        g[pre + "bv"] = dv.sum(axis=0)

        dh_flat = dh1 + dq @ p[pre + "wq"].T + dk @ p[pre + "wk"].T + dv @ p[pre + "wv"].T
        dh_out = dh_flat.reshape(B, C, d)

    x, sin_emb = cache["x"], cache["sin_emb"]
    dh_flat = dh_out.reshape(BC, d)
    g["in_w"] = x.reshape(BC, 2).T @ dh_flat
    g["in_b"] = dh_flat.sum(axis=0)
    d_cl_tok = dh_out.sum(axis=0)  # (C, d)
    g["cluster_w"] = p["cluster_emb"].T @ d_cl_tok
    g["cluster_emb"] = d_cl_tok @ p["cluster_w"].T
    g["step_w"] = sin_emb.T @ dh_out.sum(axis=1)
    return g


def denoise_eps(
    params: DenoiserParams,
    cfg: DenoiserConfig,
    cond_values: np.ndarray,
    cond_mask: np.ndarray,
    noisy_target: np.ndarray,
    target_mask: np.ndarray,
    t,
    schedule=None,
) -> np.ndarray:
    """Predict noise for one row or a batch of rows.

    Accepts (C,) vectors with scalar t, or (B, C) with t of shape (B,).
    Output is meaningful at target positions only.
    """
    cond_values = np.asarray(cond_values)
    single = cond_values.ndim == 1
    if single:
        cond_values = cond_values[None]
        cond_mask = np.asarray(cond_mask)[None]
        noisy_target = np.asarray(noisy_target)[None]
        target_mask = np.asarray(target_mask)[None]
        t = np.asarray([t])
    if schedule is not None and not (1 <= int(np.min(t)) and int(np.max(t)) <= schedule.T):
        raise ValueError(f"step outside [1, {schedule.T}]")
    out = forward(params, cfg, cond_values, cond_mask, noisy_target, target_mask, np.asarray(t))
    return out[0] if single else out
