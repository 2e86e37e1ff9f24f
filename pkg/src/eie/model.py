"""Difference-captioning transformer with expert guidance tokens.

Pipeline for one X-ray pair::

    features_b, features_f  --image_projection-->  image tokens
    p_b, p_f                --guidance_projection-->  guidance tokens (or zeros)
    [Xray1] img_b.. g_b [Xray2] img_f.. g_f  --difference module (bidirectional)-->  diff tokens
    diff tokens + text tokens  --generator (prefix-causal)-->  vocabulary logits

In the generator, image/guidance rows attend only to each other, so their
keys and values are computed once per record and reused for every text step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor
from .vocab import SPECIAL

MASKED_SCORE = -1e9

TYPE_BASELINE, TYPE_FOLLOWUP, TYPE_TEXT = 0, 1, 2


@dataclass
class ModelConfig:
    vocab_size: int
    max_text_len: int = 24
    hidden_dim: int = 512
    num_heads: int = 8
    egdcm_layers: int = 2
    generator_layers: int = 3
    feature_dim: int = 1024
    image_tokens_per_xray: int = 49
    guidance_dim: int = 5
    ffn_multiplier: int = 4
    embed_std: float = 1.0
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if self.guidance_dim not in (5, 14):
            warnings.warn(f"guidance_dim={self.guidance_dim} is neither 5 nor 14", stacklevel=2)
        if self.vocab_size <= SPECIAL.count:
            raise ValueError(f"vocab_size {self.vocab_size} leaves no room for words")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class TokenLayout:
    """Index ranges inside the difference-module sequence and the text block."""

    image_tokens: int
    max_text_len: int

    @property
    def block_len(self) -> int:
        return self.image_tokens + 2

    @property
    def egdcm_len(self) -> int:
        return 2 * self.block_len

    @property
    def baseline(self) -> slice:
        return slice(0, self.block_len)

    @property
    def followup(self) -> slice:
        return slice(self.block_len, 2 * self.block_len)

    def guidance_index(self, which: str) -> int:
        return self.block_len - 1 if which == "b" else 2 * self.block_len - 1

    def image_rows(self, which: str) -> slice:
        off = 0 if which == "b" else self.block_len
        return slice(off + 1, off + 1 + self.image_tokens)

    @property
    def max_text_block(self) -> int:
        return self.max_text_len + 3

    @classmethod
    def for_config(cls, cfg: ModelConfig) -> "TokenLayout":
        return cls(cfg.image_tokens_per_xray, cfg.max_text_len)


@dataclass(frozen=True)
class Guidance:
    """How guidance probabilities reach the model: ``soft``, ``hard`` (binarised) or ``off``."""

    mode: str = "soft"
    threshold: float | None = None

    @classmethod
    def parse(cls, text: str) -> "Guidance":
        text = text.strip().lower()
        if text in ("soft", "off"):
            return cls(text)
        if text.startswith("hard:"):
            t = float(text.split(":", 1)[1])
            if not 0.0 < t < 1.0:
                raise ValueError(f"hard-guidance threshold must lie in (0, 1), got {t}")
            return cls("hard", t)
        raise ValueError(f"unknown guidance mode {text!r} (expected soft, off or hard:<t>)")

    def __str__(self) -> str:
        return f"hard:{self.threshold:g}" if self.mode == "hard" else self.mode


def sinusoidal_table(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2 * i / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : dim - dim // 2])
    return table.astype(np.float32)


def positional_table(cfg: ModelConfig) -> np.ndarray:
    """Fixed table shared by image blocks (positions restart per X-ray) and text."""
    n = max(cfg.image_tokens_per_xray + 2, cfg.max_text_len + 3)
    return sinusoidal_table(n, cfg.hidden_dim)


# ---------------------------------------------------------------- parameters

def _layer_shapes(prefix: str, d: int, ff: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.ln1.gamma": (d,), f"{prefix}.ln1.beta": (d,),
        f"{prefix}.attn.q.weight": (d, d), f"{prefix}.attn.q.bias": (d,),
        f"{prefix}.attn.k.weight": (d, d), f"{prefix}.attn.k.bias": (d,),
        f"{prefix}.attn.v.weight": (d, d), f"{prefix}.attn.v.bias": (d,),
        f"{prefix}.attn.out.weight": (d, d), f"{prefix}.attn.out.bias": (d,),
        f"{prefix}.ln2.gamma": (d,), f"{prefix}.ln2.beta": (d,),
        f"{prefix}.ffn.in.weight": (d, ff), f"{prefix}.ffn.in.bias": (ff,),
        f"{prefix}.ffn.out.weight": (ff, d), f"{prefix}.ffn.out.bias": (d,),
    }


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, v = cfg.hidden_dim, cfg.vocab_size
    ff = cfg.ffn_multiplier * d
    shapes: dict[str, tuple[int, ...]] = {
        "word_embedding": (v, d),
        "type_embedding": (3, d),
        "guidance_projection.weight": (cfg.guidance_dim, d),
        "guidance_projection.bias": (d,),
        "image_projection.weight": (cfg.feature_dim, d),
        "image_projection.bias": (d,),
    }
    for i in range(cfg.egdcm_layers):
        shapes.update(_layer_shapes(f"egdcm.layers.{i}", d, ff))
    shapes["egdcm.final_norm.gamma"] = (d,)
    shapes["egdcm.final_norm.beta"] = (d,)
    for i in range(cfg.generator_layers):
        shapes.update(_layer_shapes(f"generator.layers.{i}", d, ff))
    shapes["generator.final_norm.gamma"] = (d,)
    shapes["generator.final_norm.beta"] = (d,)
    shapes["output_head.weight"] = (d, v)
    shapes["output_head.bias"] = (v,)
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    """Closed form: ``2VD + V + 3D + (G+1)D + (F+1)D + L(12D^2 + 13D) + 4D`` with ``L = 2 + 3`` layers."""
    d, v = cfg.hidden_dim, cfg.vocab_size
    per_layer = 12 * d * d + 13 * d if cfg.ffn_multiplier == 4 else None
    if per_layer is None:
        return sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())
    layers = cfg.egdcm_layers + cfg.generator_layers
    return 2 * v * d + v + 3 * d + (cfg.guidance_dim + 1) * d + (cfg.feature_dim + 1) * d + layers * per_layer + 4 * d


def init_params(cfg: ModelConfig, rng: Rng) -> dict[str, Tensor]:
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            data = np.ones(shape, dtype=np.float32)
        elif leaf in ("beta", "bias"):
            data = np.zeros(shape, dtype=np.float32)
        elif name.endswith("embedding") or name == "guidance_projection.weight":
            # same scale as the fixed sinusoidal table, so content is not drowned by position;
            # guidance rows act as per-observation embeddings weighted by probability
            data = rng.child(name).normal(size=shape, scale=cfg.embed_std).astype(np.float32)
        else:
            bound = 1.0 / math.sqrt(shape[0])  # weights are stored [fan_in, fan_out]
            data = ((2.0 * rng.child(name).random(shape) - 1.0) * bound).astype(np.float32)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


# ---------------------------------------------------------------- building blocks

def project_guidance(p, params: dict[str, Tensor]) -> Tensor:
    """Single affine map of guidance probabilities into the hidden space."""
    p = p if isinstance(p, Tensor) else Tensor(p)
    w = params["guidance_projection.weight"]
    if p.shape[-1] != w.shape[0]:
        raise T.DimensionError(f"guidance vector of length {p.shape[-1]} vs projection expecting {w.shape[0]}")
    return T.linear(p, w, params["guidance_projection.bias"])


def binarize_guidance(p, threshold: float) -> np.ndarray:
    """1.0 where ``p >= threshold`` else 0.0."""
    p = p.data if isinstance(p, Tensor) else np.asarray(p)
    return (p >= threshold).astype(np.float32)


def _ln(x: Tensor, params, prefix: str, eps: float) -> Tensor:
    return T.layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"], eps)


def _lin(x: Tensor, params, prefix: str) -> Tensor:
    return T.linear(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"])


def _heads(x: Tensor, h: int) -> Tensor:
    b, n, d = x.shape
    return T.transpose(T.reshape(x, (b, n, h, d // h)), (0, 2, 1, 3))


def _merge(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def attention(q: Tensor, k: Tensor, v: Tensor, allowed: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention on ``[B, H, L, dh]``; ``allowed`` is a boolean ``[Lq, Lk]``."""
    scores = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    if allowed is not None:
        scores = T.masked_fill(scores, ~allowed, MASKED_SCORE)
    weights = T.softmax_lastdim(scores)
    return T.matmul(weights, v), weights


def _ffn(x: Tensor, params, prefix: str) -> Tensor:
    return _lin(T.gelu(_lin(x, params, f"{prefix}.ffn.in")), params, f"{prefix}.ffn.out")


def encoder_layer(x: Tensor, params, prefix: str, cfg: ModelConfig) -> Tensor:
    """Pre-norm transformer layer with full bidirectional self-attention."""
    h = _ln(x, params, f"{prefix}.ln1", cfg.ln_eps)
    q = _heads(_lin(h, params, f"{prefix}.attn.q"), cfg.num_heads)
    k = _heads(_lin(h, params, f"{prefix}.attn.k"), cfg.num_heads)
    v = _heads(_lin(h, params, f"{prefix}.attn.v"), cfg.num_heads)
    a, _ = attention(q, k, v)
    x = x + _lin(_merge(a), params, f"{prefix}.attn.out")
    return x + _ffn(_ln(x, params, f"{prefix}.ln2", cfg.ln_eps), params, prefix)


# ---------------------------------------------------------------- model stages

def _batched(a, ndim: int) -> tuple[np.ndarray | Tensor, bool]:
    if a.ndim == ndim - 1:
        return (T.reshape(a, (1, *a.shape)) if isinstance(a, Tensor) else a[None]), True
    return a, False


def assemble_image_tokens(features_b, features_f, g_b, g_f, params: dict[str, Tensor],
                          cfg: ModelConfig) -> Tensor:
    """Build ``[Xray1] V_b g_b [Xray2] V_f g_f`` with positional and type embeddings added.

    Features are ``[N, F]`` or ``[B, N, F]``; ``g_*`` are projected guidance tokens
    (``[D]`` / ``[B, D]``) or ``None`` for exact zero vectors.
    """
    fb, squeeze = _batched(np.asarray(features_b.data if isinstance(features_b, Tensor) else features_b), 3)
    ff, _ = _batched(np.asarray(features_f.data if isinstance(features_f, Tensor) else features_f), 3)
    n, f = cfg.image_tokens_per_xray, cfg.feature_dim
    if fb.shape[1:] != (n, f) or ff.shape != fb.shape:
        raise T.DimensionError(f"expected features of shape [*, {n}, {f}], got {fb.shape} and {ff.shape}")
    b, d = fb.shape[0], cfg.hidden_dim
    img_b = _lin(Tensor(fb), params, "image_projection")
    img_f = _lin(Tensor(ff), params, "image_projection")

    def marker(tok: int) -> Tensor:
        row = T.embedding(params["word_embedding"], [[tok]])
        return T.broadcast_to(row, (b, 1, d))

    def slot(g) -> Tensor:
        if g is None:
            return T.zeros((b, 1, d))
        g = g if isinstance(g, Tensor) else Tensor(g)
        return T.reshape(g, (b, 1, d))

    seq = T.concat([marker(SPECIAL.XRAY1), img_b, slot(g_b), marker(SPECIAL.XRAY2), img_f, slot(g_f)], axis=1)
    block = n + 2
    pos = positional_table(cfg)[:block]
    types = T.embedding(params["type_embedding"], [TYPE_BASELINE] * block + [TYPE_FOLLOWUP] * block)
    out = seq + np.concatenate([pos, pos]) + types
    return T.reshape(out, out.shape[1:]) if squeeze else out


def egdcm_forward(tokens: Tensor, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Difference-capture module: bidirectional layers over both X-ray blocks jointly."""
    x, squeeze = _batched(tokens, 3)
    for i in range(cfg.egdcm_layers):
        x = encoder_layer(x, params, f"egdcm.layers.{i}", cfg)
    x = _ln(x, params, "egdcm.final_norm", cfg.ln_eps)
    return T.reshape(x, x.shape[1:]) if squeeze else x


def image_memory(diff_tokens: Tensor, params: dict[str, Tensor], cfg: ModelConfig) -> list[tuple[Tensor, Tensor]]:
    """Per generator layer, the keys/values of the image+guidance rows.

    These rows never attend to text, so this is exact for any text that follows.
    The last layer only needs its keys and values.
    """
    x, _ = _batched(diff_tokens, 3)
    memory = []
    last = cfg.generator_layers - 1
    for i in range(cfg.generator_layers):
        pre = f"generator.layers.{i}"
        h = _ln(x, params, f"{pre}.ln1", cfg.ln_eps)
        k = _heads(_lin(h, params, f"{pre}.attn.k"), cfg.num_heads)
        v = _heads(_lin(h, params, f"{pre}.attn.v"), cfg.num_heads)
        memory.append((k, v))
        if i == last:
            break
        q = _heads(_lin(h, params, f"{pre}.attn.q"), cfg.num_heads)
        a, _ = attention(q, k, v)
        x = x + _lin(_merge(a), params, f"{pre}.attn.out")
        x = x + _ffn(_ln(x, params, f"{pre}.ln2", cfg.ln_eps), params, pre)
    return memory


def text_attention_mask(n_image: int, n_text: int) -> np.ndarray:
    """Boolean ``[T, N + T]``: every image column plus text columns ``<= i``."""
    allowed = np.ones((n_text, n_image + n_text), dtype=bool)
    allowed[:, n_image:] = np.tril(np.ones((n_text, n_text), dtype=bool))
    return allowed


def embed_text(ids, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    t = ids.shape[1]
    if t > cfg.max_text_len + 3:
        raise T.DimensionError(f"text block of length {t} exceeds max_text_len + 3 = {cfg.max_text_len + 3}")
    words = T.embedding(params["word_embedding"], ids)
    pos = positional_table(cfg)[:t]
    typ = T.embedding(params["type_embedding"], [TYPE_TEXT])
    return words + pos + typ


def text_logits(text_ids, memory: list[tuple[Tensor, Tensor]], params: dict[str, Tensor],
                cfg: ModelConfig) -> Tensor:
    """Vocabulary logits ``[B, T, V]`` for each text position given cached image memory."""
    x = embed_text(text_ids, params, cfg)
    n_img, t = memory[0][0].shape[2], x.shape[1]
    allowed = text_attention_mask(n_img, t)
    for i, (k_img, v_img) in enumerate(memory):
        pre = f"generator.layers.{i}"
        h = _ln(x, params, f"{pre}.ln1", cfg.ln_eps)
        q = _heads(_lin(h, params, f"{pre}.attn.q"), cfg.num_heads)
        k = _heads(_lin(h, params, f"{pre}.attn.k"), cfg.num_heads)
        v = _heads(_lin(h, params, f"{pre}.attn.v"), cfg.num_heads)
        if k_img.shape[0] != k.shape[0]:
            k_img = T.broadcast_to(k_img, (k.shape[0], *k_img.shape[1:]))
            v_img = T.broadcast_to(v_img, (k.shape[0], *v_img.shape[1:]))
        a, _ = attention(q, T.concat([k_img, k], axis=2), T.concat([v_img, v], axis=2), allowed)
        x = x + _lin(_merge(a), params, f"{pre}.attn.out")
        x = x + _ffn(_ln(x, params, f"{pre}.ln2", cfg.ln_eps), params, pre)
    x = _ln(x, params, "generator.final_norm", cfg.ln_eps)
    return _lin(x, params, "output_head")


def generator_forward(diff_tokens: Tensor, text_ids, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Logits at the text positions of ``[diff tokens || text]`` under the prefix-causal mask."""
    squeeze = diff_tokens.ndim == 2
    logits = text_logits(text_ids, image_memory(diff_tokens, params, cfg), params, cfg)
    return T.reshape(logits, logits.shape[1:]) if squeeze else logits


def guidance_tokens(p_b, p_f, guidance: Guidance, params: dict[str, Tensor]):
    """Projected guidance tokens for both X-rays, or ``(None, None)`` when guidance is off."""
    if guidance.mode == "off":
        return None, None
    if guidance.mode == "hard":
        p_b, p_f = binarize_guidance(p_b, guidance.threshold), binarize_guidance(p_f, guidance.threshold)
    return project_guidance(p_b, params), project_guidance(p_f, params)


def encode_pair(features_b, features_f, p_b, p_f, guidance: Guidance, params: dict[str, Tensor],
                cfg: ModelConfig) -> Tensor:
    """Guidance + token assembly + difference module: the image side of the model."""
    g_b, g_f = guidance_tokens(p_b, p_f, guidance, params)
    return egdcm_forward(assemble_image_tokens(features_b, features_f, g_b, g_f, params, cfg), params, cfg)


def stack_records(records: Sequence) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    fb = np.stack([r.features_b for r in records]).astype(np.float32)
    ff = np.stack([r.features_f for r in records]).astype(np.float32)
    pb = np.stack([r.p_b for r in records]).astype(np.float32)
    pf = np.stack([r.p_f for r in records]).astype(np.float32)
    return fb, ff, pb, pf


def forward_full(records, text_ids, guidance: Guidance, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Logits ``[B, T, V]`` for a batch of records and their (possibly corrupted) text ids."""
    if not isinstance(records, (list, tuple)):
        records = [records]
    fb, ff, pb, pf = stack_records(records)
    diff = encode_pair(fb, ff, pb, pf, guidance, params, cfg)
    return text_logits(text_ids, image_memory(diff, params, cfg), params, cfg)


class Variant(str, Enum):
    BASE = "eie-base"
    MEM = "eie-mem"
    ESG = "eie-esg"
    ALL = "eie-all"
    LIGHT = "eie-light"

    @property
    def uses_guidance(self) -> bool:
        return self in (Variant.ESG, Variant.ALL, Variant.LIGHT)

    @property
    def uses_mem(self) -> bool:
        return self in (Variant.MEM, Variant.ALL, Variant.LIGHT)

    @property
    def drops_guidance(self) -> bool:
        return self is Variant.LIGHT

    def inference_guidance(self, guidance: Guidance) -> Guidance:
        """Guidance path at inference: EIE-light and the guidance-free variants use zero tokens."""
        if not self.uses_guidance or self.drops_guidance:
            return Guidance("off")
        return guidance
