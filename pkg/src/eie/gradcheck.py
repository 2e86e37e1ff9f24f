"""Central-difference gradient checking.

Both the analytic and the numeric side are evaluated in float64 by default so
the comparison isolates the backward formulas from float32 rounding; pass
``dtype=np.float32`` to check the production precision instead.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, precision


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    checked: int


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise ValueError(f"gradient check needs a scalar-valued function, got shape {out.shape}")
    return float(out.data.reshape(()))


def check_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray | Tensor, eps: float = 1e-3,
                   coords=None, dtype=np.float64) -> GradCheckResult:
    """Compare ``d f / d x`` from the tape against central differences.

    ``coords`` optionally restricts the comparison to a list of flat indices.
    Relative error per coordinate is ``|analytic - numeric| / (|numeric| + 1e-8)``.
    """
    if not 1e-4 <= eps <= 1e-2:
        raise ValueError(f"eps must lie in [1e-4, 1e-2], got {eps}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=dtype)
    with precision(dtype):
        xt = Tensor(base.copy(), requires_grad=True)
        with Tape() as tape:
            out = f(xt)
        _scalar(out)
        tape.backward(out)
        analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

        flat_idx = range(base.size) if coords is None else coords
        worst = (0.0, (), 0.0, 0.0)
        n = 0
        for k in flat_idx:
            idx = np.unravel_index(int(k), base.shape)
            probe = base.copy()
            probe[idx] += eps
            fp = _scalar(f(Tensor(probe)))
            probe[idx] -= 2 * eps
            fm = _scalar(f(Tensor(probe)))
            num = (fp - fm) / (2 * eps)
            ana = float(analytic[idx])
            rel = abs(ana - num) / (abs(num) + 1e-8)
            n += 1
            if rel >= worst[0]:
                worst = (rel, tuple(int(i) for i in idx), ana, num)
    return GradCheckResult(worst[0], worst[1], worst[2], worst[3], n)


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-3, **kw) -> float:
    """Max relative error between analytic and central-difference gradients."""
    return check_gradient(f, x, eps, **kw).max_rel_error


# ---------------------------------------------------------------- the op suite
# Cases look ops up on the ``tensor`` module at call time so a patched op is what gets checked.

from . import tensor as T  # noqa: E402


@dataclass
class GradCase:
    name: str
    build: Callable[[np.random.Generator], tuple[Callable[[Tensor], Tensor], np.ndarray, object]]
    tolerance: float = 1e-3


@dataclass
class CaseOutcome:
    name: str
    seed: int
    result: GradCheckResult
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.result.max_rel_error < self.tolerance)


def _u(rng: np.random.Generator, *shape) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=shape)


def _away_from_zero(x: np.ndarray, gap: float = 0.05) -> np.ndarray:
    # keep piecewise-linear ops off their kink so central differences are exact
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x)


def _proj(rng: np.random.Generator, op: Callable[[Tensor], Tensor], out_shape) -> Callable[[Tensor], Tensor]:
    w = Tensor(_u(rng, *out_shape))
    return lambda x: T.sum_(T.mul(op(x), w))


def _unary(opname: str, shape=(3, 4), kink: bool = False):
    def build(rng):
        x = _u(rng, *shape)
        if kink:
            x = _away_from_zero(x)
        return _proj(rng, lambda t: getattr(T, opname)(t), shape), x, None
    return build


def _binary(opname: str, a_shape=(3, 4), b_shape=(3, 4), wrt_b: bool = False, positive: bool = False):
    def build(rng):
        a, b = _u(rng, *a_shape), _u(rng, *b_shape)
        if positive:
            b = 0.5 + np.abs(b)
        out_shape = np.broadcast_shapes(a_shape, b_shape)
        if wrt_b:
            other = Tensor(a)
            return _proj(rng, lambda t: getattr(T, opname)(other, t), out_shape), b, None
        other = Tensor(b)
        return _proj(rng, lambda t: getattr(T, opname)(t, other), out_shape), a, None
    return build


def _case_scale(rng):
    return _proj(rng, lambda t: T.scale(t, -1.7), (3, 4)), _u(rng, 3, 4), None


def _case_masked_fill(rng):
    mask = rng.random((3, 4)) < 0.4
    return _proj(rng, lambda t: T.masked_fill(t, mask, -2.0), (3, 4)), _u(rng, 3, 4), None


def _case_sum_axis(rng):
    return _proj(rng, lambda t: T.sum_(t, axis=1), (2, 4)), _u(rng, 2, 3, 4), None


def _case_mean_axis(rng):
    return _proj(rng, lambda t: T.mean(t, axis=-1, keepdims=True), (2, 3, 1)), _u(rng, 2, 3, 4), None


def _case_reshape(rng):
    return _proj(rng, lambda t: T.reshape(t, (4, 6)), (4, 6)), _u(rng, 2, 3, 4), None


def _case_transpose(rng):
    return _proj(rng, lambda t: T.transpose(t, (2, 0, 1)), (4, 2, 3)), _u(rng, 2, 3, 4), None


def _case_broadcast(rng):
    return _proj(rng, lambda t: T.broadcast_to(t, (3, 2, 4)), (3, 2, 4)), _u(rng, 2, 4), None


def _case_concat(rng):
    other = Tensor(_u(rng, 2, 2, 4))
    return _proj(rng, lambda t: T.concat([other, t, other], axis=1), (2, 7, 4)), _u(rng, 2, 3, 4), None


def _case_slice(rng):
    return _proj(rng, lambda t: T.getitem(t, (slice(None), slice(1, 4))), (3, 3)), _u(rng, 3, 5), None


def _case_gather(rng):
    idx = np.array([0, 2, 2, 1])
    return _proj(rng, lambda t: T.getitem(t, idx), (4, 5)), _u(rng, 3, 5), None


def _case_embedding(rng):
    ids = np.array([[1, 3, 3], [0, 4, 1]])
    return _proj(rng, lambda t: T.embedding(t, ids), (2, 3, 6)), _u(rng, 5, 6), None


def _case_matmul_batched(rng):
    b = Tensor(_u(rng, 2, 4, 3))
    return _proj(rng, lambda t: T.matmul(t, b), (2, 5, 3)), _u(rng, 2, 5, 4), None


def _case_matmul_weight(rng):
    a = Tensor(_u(rng, 2, 5, 4))
    return _proj(rng, lambda t: T.matmul(a, t), (2, 5, 3)), _u(rng, 4, 3), None


def _case_linear(rng):
    w, b = Tensor(_u(rng, 4, 6)), Tensor(_u(rng, 6))
    return _proj(rng, lambda t: T.linear(t, w, b), (2, 3, 6)), _u(rng, 2, 3, 4), None


def _case_linear_weight(rng):
    x, b = Tensor(_u(rng, 2, 3, 4)), Tensor(_u(rng, 6))
    return _proj(rng, lambda t: T.linear(x, t, b), (2, 3, 6)), _u(rng, 4, 6), None


def _case_softmax(rng):
    return _proj(rng, lambda t: T.softmax_lastdim(t), (3, 5)), _u(rng, 3, 5), None


def _case_layer_norm(rng):
    g, b = Tensor(_u(rng, 8)), Tensor(_u(rng, 8))
    return _proj(rng, lambda t: T.layer_norm(t, g, b), (2, 8)), _u(rng, 2, 8), None


def _case_layer_norm_gamma(rng):
    x, b = Tensor(_u(rng, 2, 8)), Tensor(_u(rng, 8))
    return _proj(rng, lambda t: T.layer_norm(x, t, b), (2, 8)), _u(rng, 8), None


def _case_cross_entropy(rng):
    targets = rng.integers(0, 11, size=5)
    mask = np.array([True, False, True, False, False])
    return (lambda t: T.cross_entropy_from_logits(t, targets, mask)), _u(rng, 5, 11), None


def _case_softmax_ce(rng):
    # composite: explicit softmax followed by a hand-built negative log-likelihood
    onehot = np.eye(7)[rng.integers(0, 7, size=4)]
    return (lambda t: T.neg(T.mean(T.sum_(T.mul(T.softmax_lastdim(t), Tensor(onehot)), axis=-1)))), _u(rng, 4, 7), None


PRIMITIVE_CASES: tuple[GradCase, ...] = (
    GradCase("add", _binary("add")),
    GradCase("add(broadcast)", _binary("add", (3, 4), (4,), wrt_b=True)),
    GradCase("sub", _binary("sub", wrt_b=True)),
    GradCase("mul", _binary("mul")),
    GradCase("mul(broadcast)", _binary("mul", (2, 3, 4), (3, 1), wrt_b=True)),
    GradCase("div", _binary("div", wrt_b=True, positive=True)),
    GradCase("neg", _unary("neg")),
    GradCase("scale", _case_scale),
    GradCase("sigmoid", _unary("sigmoid")),
    GradCase("relu", _unary("relu", kink=True)),
    GradCase("gelu", _unary("gelu")),
    GradCase("masked_fill", _case_masked_fill),
    GradCase("sum", _case_sum_axis),
    GradCase("mean", _case_mean_axis),
    GradCase("reshape", _case_reshape),
    GradCase("transpose", _case_transpose),
    GradCase("broadcast_to", _case_broadcast),
    GradCase("concat", _case_concat),
    GradCase("slice", _case_slice),
    GradCase("gather", _case_gather),
    GradCase("embedding", _case_embedding),
    GradCase("matmul", _case_matmul_batched),
    GradCase("matmul(weight)", _case_matmul_weight),
    GradCase("linear", _case_linear),
    GradCase("linear(weight)", _case_linear_weight),
    GradCase("softmax", _case_softmax),
    GradCase("layer_norm", _case_layer_norm),
    GradCase("layer_norm(gamma)", _case_layer_norm_gamma),
    GradCase("cross_entropy", _case_cross_entropy),
    GradCase("softmax+nll", _case_softmax_ce),
)

MODEL_CHECK_PARAMS = (
    "word_embedding", "guidance_projection.weight", "image_projection.weight",
    "egdcm.layers.0.attn.q.weight", "egdcm.layers.1.ffn.in.weight", "egdcm.final_norm.gamma",
    "generator.layers.0.attn.k.weight", "generator.layers.1.attn.v.weight", "generator.layers.1.ffn.out.weight",
    "generator.final_norm.beta", "output_head.weight",
)


def model_loss_fn(seed: int, param: str):
    """Masked-LM loss of a small model on a fixed 2-record batch, as a function of one parameter."""
    from .data import SyntheticGenConfig, synth_generate
    from .model import Guidance, ModelConfig, forward_full, init_params
    from .rng import Rng
    from .training import bert_mask, pad_batch
    from .vocab import build_vocab

    ds = synth_generate(SyntheticGenConfig(num_records=2, feature_dim=8, image_tokens=3), seed=seed)
    vocab = build_vocab(r.summary for r in ds)
    cfg = ModelConfig(vocab_size=len(vocab), max_text_len=24, hidden_dim=16, num_heads=2,
                      feature_dim=8, image_tokens_per_xray=3)
    params = init_params(cfg, Rng(seed).child("init"))
    mrng = Rng(seed).child("gradcheck").child("mask")
    outcomes = [bert_mask(np.asarray(vocab.encode(r.summary)), mrng, 0.3, len(vocab)) for r in ds]
    inp, tgt, lm = pad_batch(outcomes)
    records = list(ds.records)

    def f(x: Tensor) -> Tensor:
        local = dict(params)
        local[param] = x
        logits = forward_full(records, inp, Guidance("soft"), local, cfg)
        return T.cross_entropy_from_logits(logits, tgt, lm)

    return f, np.array(params[param].data, dtype=np.float64)


def run_suite(seeds=(0, 1, 2, 3, 4), eps: float = 1e-3, model: bool = True, model_coords: int = 12,
              cases: tuple[GradCase, ...] | None = None) -> list[CaseOutcome]:
    out = []
    for seed in seeds:
        for case in cases or PRIMITIVE_CASES:
            f, x, _ = case.build(np.random.default_rng([seed, zlib.crc32(case.name.encode())]))
            out.append(CaseOutcome(case.name, seed, check_gradient(f, x, eps), case.tolerance))
        if model:
            crng = np.random.default_rng(seed)
            for param in MODEL_CHECK_PARAMS:
                f, x = model_loss_fn(seed, param)
                coords = crng.choice(x.size, size=min(model_coords, x.size), replace=False)
                out.append(CaseOutcome(f"model[{param}]", seed, check_gradient(f, x, eps, coords=coords), 1e-2))
    return out
