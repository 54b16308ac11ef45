"""Two-stage co-attention registration network.

One stage scores 27 candidate blocks for a slice:

* the 4x4 slice is cut into 2x2 patches, projected to ``d`` and refined by
  ``layers`` self-attention (SA) units;
* the volume (20^3 for the coarse stage, a 10^3 crop for the fine stage) is cut
  into 27 strided P^3 windows, x-major, so token ``i`` covers block ``i``;
* volume tokens pass through ``layers`` guided-attention (GA) units that query
  the final slice tokens (no self-attention on the volume side, so every
  token keeps the features of its own block);
* a head shared across tokens maps each volume token to one logit.

Parameters live in plain ``dict[str, np.ndarray]``; the forward pass wraps
them as autodiff leaves when gradients are needed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import NumericError, Tensor, gelu, layer_norm, softmax
from .loss import ASLConfig, asl_loss


@dataclass(frozen=True)
class StageGeometry:
    volume_side: int
    patch: int
    stride: int

    @property
    def tokens_per_axis(self) -> int:
        return (self.volume_side - self.patch + self.stride) // self.stride


COARSE = StageGeometry(volume_side=20, patch=10, stride=5)
FINE = StageGeometry(volume_side=10, patch=6, stride=2)


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    heads: int = 4
    layers: int = 2
    patch2d: int = 2
    slice_side: int = 4
    coarse_patch: int = 10
    coarse_stride: int = 5
    fine_patch: int = 6
    fine_stride: int = 2
    asl: ASLConfig = field(default_factory=ASLConfig)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 16
    loss_reduction: str = "mean"

    def __post_init__(self):
        if isinstance(self.asl, dict):
            object.__setattr__(self, "asl", ASLConfig(**self.asl))
        if self.d % self.heads:
            raise ValueError(f"heads={self.heads} must divide d={self.d}")
        if (self.slice_side**2) % (self.patch2d**2) or self.slice_side % self.patch2d:
            raise ValueError("slice side must be divisible by the 2D patch size")
        for g in (self.coarse, self.fine):
            patch_count_3d(g.volume_side, g.patch, g.stride)

    @property
    def coarse(self) -> StageGeometry:
        return StageGeometry(20, self.coarse_patch, self.coarse_stride)

    @property
    def fine(self) -> StageGeometry:
        return StageGeometry(10, self.fine_patch, self.fine_stride)

    @property
    def d_k(self) -> int:
        return self.d // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def patch_count_2d(h: int, w: int, p: int) -> int:
    if (h * w) % (p * p):
        raise ValueError(f"HW={h * w} is not divisible by P^2={p * p}")
    return h * w // (p * p)


def patch_count_3d(side: int, p: int, s: int, w: int | None = None, depth: int | None = None) -> int:
    dims = [side, side if w is None else w, side if depth is None else depth]
    total = 1
    for n in dims:
        if (n - p + s) % s or n < p:
            raise ValueError(f"(N - P + S) = {n - p + s} is not divisible by S = {s}")
        total *= n - p + s
    return total // s**3


def slice_patches(pixels, cfg: ModelConfig) -> np.ndarray:
    """(..., 16) row-major pixels -> (..., N, P*P) patches, patch grid row-major."""
    px = np.asarray(pixels, dtype=np.float64)
    side, p = cfg.slice_side, cfg.patch2d
    if px.shape[-1] != side * side:
        raise ValueError(f"expected {side * side} pixels, got {px.shape[-1]}")
    lead = px.shape[:-1]
    n = side // p
    x = px.reshape(*lead, n, p, n, p)
    x = np.moveaxis(x, -3, -2)
    return x.reshape(*lead, n * n, p * p)


def volume_patches(volume, geom: StageGeometry) -> np.ndarray:
    """(side^3) array -> (N, P^3) strided windows, x-major token order."""
    data = np.asarray(volume, dtype=np.float64)
    if data.shape != (geom.volume_side,) * 3:
        raise ValueError(f"expected a {geom.volume_side}^3 volume, got {data.shape}")
    n = patch_count_3d(geom.volume_side, geom.patch, geom.stride)
    p, s = geom.patch, geom.stride
    win = sliding_window_view(data, (p, p, p))[::s, ::s, ::s]
    return win.reshape(n, p**3)


# parameters -------------------------------------------------------------


def _attention_block_shapes(prefix: str, d: int) -> list[tuple[str, tuple]]:
    shapes = []
    for name in ("q", "k", "v", "o"):
        shapes += [(f"{prefix}.w{name}", (d, d)), (f"{prefix}.b{name}", (d,))]
    shapes += [(f"{prefix}.ln1.g", (d,)), (f"{prefix}.ln1.b", (d,))]
    shapes += [(f"{prefix}.ff1.w", (d, 4 * d)), (f"{prefix}.ff1.b", (4 * d,))]
    shapes += [(f"{prefix}.ff2.w", (4 * d, d)), (f"{prefix}.ff2.b", (d,))]
    shapes += [(f"{prefix}.ln2.g", (d,)), (f"{prefix}.ln2.b", (d,))]
    return shapes


def param_shapes(cfg: ModelConfig, geom: StageGeometry) -> list[tuple[str, tuple]]:
    """Canonical (name, shape) order for one stage; also the checkpoint tensor order."""
    d = cfg.d
    n2 = patch_count_2d(cfg.slice_side, cfg.slice_side, cfg.patch2d)
    n3 = patch_count_3d(geom.volume_side, geom.patch, geom.stride)
    shapes = [
        ("embed2d.w", (cfg.patch2d**2, d)),
        ("embed2d.b", (d,)),
        ("embed2d.pos", (n2, d)),
        ("embed3d.w", (geom.patch**3, d)),
        ("embed3d.b", (d,)),
        ("embed3d.pos", (n3, d)),
    ]
    for i in range(cfg.layers):
        shapes += _attention_block_shapes(f"sa{i}", d)
    for i in range(cfg.layers):
        shapes += _attention_block_shapes(f"ga{i}", d)
    shapes += [("head.w", (d,)), ("head.b", ())]
    return shapes


def _fan_in(name: str, shape: tuple, cfg: ModelConfig, geom: StageGeometry) -> int:
    if name.startswith("embed2d"):
        return cfg.patch2d**2
    if name.startswith("embed3d") and not name.endswith("pos"):
        return geom.patch**3
    if ".ff2." in name:
        return 4 * cfg.d
    return cfg.d


def init_params(cfg: ModelConfig, geom: StageGeometry, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) everywhere except norm gains (1) and biases (0)."""
    params = {}
    for name, shape in param_shapes(cfg, geom):
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif ".ln" in name:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(_fan_in(name, shape, cfg, geom))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


# forward ----------------------------------------------------------------


def attention(q, k, v, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_k)) V on plain arrays, with row-max subtraction."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
        raise NumericError("attention inputs must be finite")
    logits = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=-1, keepdims=True)
    out = w @ v
    return (out, w) if return_weights else out


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return x @ w + b


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    return x.reshape(*lead, n, heads, d // heads).transpose(*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dk = x.shape
    nl = len(lead)
    return x.transpose(*range(nl), nl + 1, nl, nl + 2).reshape(*lead, n, h * dk)


def multi_head_attention(xq: Tensor, xkv: Tensor, p: dict, prefix: str, heads: int) -> Tensor:
    q = _split_heads(_linear(xq, p[f"{prefix}.wq"], p[f"{prefix}.bq"]), heads)
    k = _split_heads(_linear(xkv, p[f"{prefix}.wk"], p[f"{prefix}.bk"]), heads)
    v = _split_heads(_linear(xkv, p[f"{prefix}.wv"], p[f"{prefix}.bv"]), heads)
    dk = q.shape[-1]
    scores = (q @ k.transpose(*range(k.value.ndim - 2), k.value.ndim - 1, k.value.ndim - 2)) * (1.0 / np.sqrt(dk))
    attended = softmax(scores, axis=-1) @ v
    return _linear(_merge_heads(attended), p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def _ffn_block(x: Tensor, p: dict, prefix: str) -> Tensor:
    h = gelu(_linear(x, p[f"{prefix}.ff1.w"], p[f"{prefix}.ff1.b"]))
    h = _linear(h, p[f"{prefix}.ff2.w"], p[f"{prefix}.ff2.b"])
    return layer_norm(x + h, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])


def sa_unit(tokens: Tensor, p: dict, prefix: str, heads: int) -> Tensor:
    x = layer_norm(tokens + multi_head_attention(tokens, tokens, p, prefix, heads), p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    return _ffn_block(x, p, prefix)


def ga_unit(vol_tokens: Tensor, slice_tokens: Tensor, p: dict, prefix: str, heads: int) -> Tensor:
    y = vol_tokens + multi_head_attention(vol_tokens, slice_tokens, p, prefix, heads)
    y = layer_norm(y, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    return _ffn_block(y, p, prefix)


def _leaves(params: dict) -> dict[str, Tensor]:
    return {name: Tensor(value, tag=name) for name, value in params.items()}


def embed_slice(pixels, p: dict, cfg: ModelConfig) -> Tensor:
    patches = Tensor(slice_patches(pixels, cfg), constant=True)
    return patches @ p["embed2d.w"] + p["embed2d.b"] + p["embed2d.pos"]


def embed_volume(vol_patches, p: dict) -> Tensor:
    return Tensor(vol_patches, constant=True) @ p["embed3d.w"] + p["embed3d.b"] + p["embed3d.pos"]


def stage_graph(vol_patches, pixels, p: dict, cfg: ModelConfig) -> Tensor:
    """Logits (..., 27) for batched patches (..., 27, P^3) and pixels (..., 16)."""
    s = embed_slice(pixels, p, cfg)
    for i in range(cfg.layers):
        s = sa_unit(s, p, f"sa{i}", cfg.heads)
    v = embed_volume(vol_patches, p)
    for i in range(cfg.layers):
        v = ga_unit(v, s, p, f"ga{i}", cfg.heads)
    return v @ p["head.w"] + p["head.b"]


def _check_finite(t: Tensor, where: str):
    if not np.all(np.isfinite(t.value)):
        raise NumericError(f"non-finite activation in {where}")


def stage_logits(vol_patches, pixels, params: dict, cfg: ModelConfig) -> np.ndarray:
    out = stage_graph(vol_patches, pixels, _leaves(params), cfg)
    _check_finite(out, "stage logits")
    return out.value


def forward_stage(vol_block, pixels, params: dict, cfg: ModelConfig) -> np.ndarray:
    """27 logits for one (volume block, slice) pair; the stage is inferred from the block side."""
    data = vol_block.data if hasattr(vol_block, "data") else np.asarray(vol_block)
    side = data.shape[0]
    geom = {cfg.coarse.volume_side: cfg.coarse, cfg.fine.volume_side: cfg.fine}.get(side)
    if geom is None or data.shape != (side,) * 3:
        raise ValueError(f"no stage accepts a block of dims {data.shape}")
    return stage_logits(volume_patches(data, geom), np.asarray(pixels, dtype=np.float64), params, cfg)


def loss_and_grads(vol_patches, pixels, targets, params: dict, cfg: ModelConfig):
    """Mean ASL over the batch and its exact gradient for every parameter."""
    leaves = _leaves(params)
    logits = stage_graph(vol_patches, pixels, leaves, cfg)
    _check_finite(logits, "stage logits")
    loss, dlogits = asl_loss(logits.value, targets, cfg.asl)
    if not np.isfinite(loss):
        raise NumericError("non-finite ASL loss")
    logits.backward(dlogits)
    grads = {}
    for name, leaf in leaves.items():
        g = np.zeros_like(params[name]) if leaf.grad is None else leaf.grad
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        grads[name] = g.reshape(params[name].shape)
    return loss, grads, logits.value
