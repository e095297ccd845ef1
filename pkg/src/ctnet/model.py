"""CTNet: SE-residual CNN feature extractor with a transformer branch and an
FC branch fused by element-wise addition of their logits.

Layout (``C_i`` = ``cfg.stage_channels[i]``, ``N`` = last stage width)::

    stem      conv3x3(renum_ct -> C_0) -> group norm -> relu
    stage i   SE-residual block (C_i), then for i < last:
              conv3x3 stride 2 (C_i -> C_{i+1}) -> group norm -> relu
    pool      global average pool -> [B, N]
    fc        linear N -> 2
    transformer
              [B, N] -> [B, T, d] (contiguous channel chunks, d = N/T)
              x + MHA(LN(x)); x + MLP(LN(x)); mean over tokens; linear d -> 2
    fuse      softmax(fc + transformer)   (mode "fused")
              softmax(fc)                 (mode "fc")

Class 0 is COVID-19, class 1 is Non-COVID-19.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Variable
from .config import ModelConfig
from .errors import ShapeError
from .rng import Rng

CLASS_NAMES = ("COVID-19", "Non-COVID-19")
NORM_EPS = 1e-5
MODES = ("fc", "fused")

ModelParams = dict  # name -> Variable, insertion ordered


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Declared parameter names and shapes, in canonical order.

    Total count, with ``k = 3``, ``h_i = C_i / r``, ``d = N / T`` and
    ``m = mlp_hidden``::

        stem    C_0 (9 renum_ct + 1) + 2 C_0
        block   2 (9 C_i^2 + C_i) + 2 C_i + (C_i h_i + h_i) + (h_i C_i + C_i)
        down    C_{i+1} (9 C_i + 1) + 2 C_{i+1}           (all but last stage)
        attn    4 (d^2 + d) + 4 d                         (q, k, v, o; two LNs)
        mlp     (d m + m) + (m d + d)
        heads   (2 d + 2) + (2 N + 2)
    """
    shapes: dict[str, tuple[int, ...]] = {}
    ch = cfg.stage_channels
    shapes["stem.conv.weight"] = (ch[0], cfg.renum_ct, 3, 3)
    shapes["stem.conv.bias"] = (ch[0],)
    shapes["stem.norm.gamma"] = (ch[0],)
    shapes["stem.norm.beta"] = (ch[0],)
    for i, c in enumerate(ch):
        p = f"stages.{i}.block"
        hid = c // cfg.se_reduction
        shapes[f"{p}.conv1.weight"] = (c, c, 3, 3)
        shapes[f"{p}.conv1.bias"] = (c,)
        shapes[f"{p}.norm1.gamma"] = (c,)
        shapes[f"{p}.norm1.beta"] = (c,)
        shapes[f"{p}.conv2.weight"] = (c, c, 3, 3)
        shapes[f"{p}.conv2.bias"] = (c,)
        shapes[f"{p}.se.fc1.weight"] = (c, hid)
        shapes[f"{p}.se.fc1.bias"] = (hid,)
        shapes[f"{p}.se.fc2.weight"] = (hid, c)
        shapes[f"{p}.se.fc2.bias"] = (c,)
        if i + 1 < len(ch):
            q = f"stages.{i}.down"
            shapes[f"{q}.conv.weight"] = (ch[i + 1], c, 3, 3)
            shapes[f"{q}.conv.bias"] = (ch[i + 1],)
            shapes[f"{q}.norm.gamma"] = (ch[i + 1],)
            shapes[f"{q}.norm.beta"] = (ch[i + 1],)
    d, m = cfg.token_width, cfg.mlp_hidden
    t = "transformer"
    shapes[f"{t}.ln1.gamma"] = (d,)
    shapes[f"{t}.ln1.beta"] = (d,)
    for proj in ("q", "k", "v", "o"):
        shapes[f"{t}.attn.{proj}.weight"] = (d, d)
        shapes[f"{t}.attn.{proj}.bias"] = (d,)
    shapes[f"{t}.ln2.gamma"] = (d,)
    shapes[f"{t}.ln2.beta"] = (d,)
    shapes[f"{t}.mlp.fc1.weight"] = (d, m)
    shapes[f"{t}.mlp.fc1.bias"] = (m,)
    shapes[f"{t}.mlp.fc2.weight"] = (m, d)
    shapes[f"{t}.mlp.fc2.bias"] = (d,)
    shapes[f"{t}.head.weight"] = (d, cfg.classes)
    shapes[f"{t}.head.bias"] = (cfg.classes,)
    shapes["fc.weight"] = (cfg.feature_width, cfg.classes)
    shapes["fc.bias"] = (cfg.classes,)
    return shapes


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if len(shape) == 4:
        return shape[1] * shape[2] * shape[3]
    return shape[0]


def build_model(cfg: ModelConfig, rng: Rng, dtype=np.float32) -> ModelParams:
    """Instantiate parameters: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    biases and betas zero, gammas one."""
    params: ModelParams = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "weight":
            bound = np.sqrt(1.0 / _fan_in(name, shape))
            value = rng.uniform(-bound, bound, shape)
        elif leaf == "gamma":
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = Variable(value.astype(dtype), requires_grad=True)
    return params


def parameter_count(params: ModelParams) -> int:
    return sum(p.value.size for p in params.values())


# --------------------------------------------------------------------- blocks

def _conv_norm_relu(x, params, prefix, stride, groups):
    y = ag.conv2d(x, params[f"{prefix}.conv.weight"], params[f"{prefix}.conv.bias"], stride=stride, pad=1)
    y = ag.normalize(y, ("group", groups), params[f"{prefix}.norm.gamma"], params[f"{prefix}.norm.beta"], NORM_EPS)
    return ag.relu(y)


def se_attention(x: Variable, params: ModelParams, prefix: str, return_gate: bool = False):
    """Channel gating: sigmoid(fc2(relu(fc1(gap(x))))) scales each channel."""
    n, c = x.shape[:2]
    s = ag.global_avg_pool(x)
    s = ag.relu(ag.linear(s, params[f"{prefix}.fc1.weight"], params[f"{prefix}.fc1.bias"]))
    gate = ag.sigmoid(ag.linear(s, params[f"{prefix}.fc2.weight"], params[f"{prefix}.fc2.bias"]))
    out = ag.mul(x, ag.reshape(gate, (n, c, 1, 1)))
    return (out, gate) if return_gate else out


def se_residual_block(x: Variable, params: ModelParams, prefix: str, groups: int) -> Variable:
    """relu(x + se(conv2(relu(gn(conv1(x))))))."""
    c = params[f"{prefix}.conv1.weight"].shape[1]
    if x.ndim != 4 or x.shape[1] != c:
        raise ShapeError(f"block {prefix} expects {c} channels, got input {x.shape}")
    y = ag.conv2d(x, params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"], pad=1)
    y = ag.normalize(y, ("group", groups), params[f"{prefix}.norm1.gamma"], params[f"{prefix}.norm1.beta"], NORM_EPS)
    y = ag.relu(y)
    y = ag.conv2d(y, params[f"{prefix}.conv2.weight"], params[f"{prefix}.conv2.bias"], pad=1)
    y = se_attention(y, params, f"{prefix}.se")
    return ag.relu(ag.add(x, y))


def extract_features(x: Variable, params: ModelParams, cfg: ModelConfig) -> Variable:
    """CNN trunk plus global pooling: [B, renum_ct, S, S] -> [B, N]."""
    y = _conv_norm_relu(x, params, "stem", 1, cfg.norm_groups)
    last = len(cfg.stage_channels) - 1
    for i in range(len(cfg.stage_channels)):
        y = se_residual_block(y, params, f"stages.{i}.block", cfg.norm_groups)
        if i < last:
            y = _conv_norm_relu(y, params, f"stages.{i}.down", 2, cfg.norm_groups)
    return ag.global_avg_pool(y)


def multi_head_attention(x: Variable, params: ModelParams, prefix: str, heads: int,
                         return_weights: bool = False):
    """Scaled dot-product self-attention over ``x`` shaped [B, T, d]."""
    b, t, d = x.shape
    hd = d // heads

    def project(name):
        y = ag.linear(x, params[f"{prefix}.{name}.weight"], params[f"{prefix}.{name}.bias"])
        return ag.transpose(ag.reshape(y, (b, t, heads, hd)), (0, 2, 1, 3))  # [B, H, T, hd]

    q, k, v = project("q"), project("k"), project("v")
    scores = ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    weights = ag.softmax(scores, axis=-1)
    ctx = ag.reshape(ag.transpose(ag.matmul(weights, v), (0, 2, 1, 3)), (b, t, d))
    out = ag.linear(ctx, params[f"{prefix}.o.weight"], params[f"{prefix}.o.bias"])
    return (out, weights) if return_weights else out


def transformer_branch(feature: Variable, params: ModelParams, cfg: ModelConfig,
                       return_attention: bool = False):
    """One pre-norm encoder block over T channel-chunk tokens, mean pooled,
    then a linear head to 2 logits."""
    if feature.ndim != 2 or feature.shape[1] != cfg.tokens * cfg.token_width:
        raise ShapeError(f"transformer branch expects [B, {cfg.feature_width}], got {feature.shape}")
    t = "transformer"
    b = feature.shape[0]
    x = ag.reshape(feature, (b, cfg.tokens, cfg.token_width))
    h = ag.normalize(x, "layer", params[f"{t}.ln1.gamma"], params[f"{t}.ln1.beta"], NORM_EPS)
    attn, weights = multi_head_attention(h, params, f"{t}.attn", cfg.heads, return_weights=True)
    x = ag.add(x, attn)
    h = ag.normalize(x, "layer", params[f"{t}.ln2.gamma"], params[f"{t}.ln2.beta"], NORM_EPS)
    h = ag.relu(ag.linear(h, params[f"{t}.mlp.fc1.weight"], params[f"{t}.mlp.fc1.bias"]))
    h = ag.linear(h, params[f"{t}.mlp.fc2.weight"], params[f"{t}.mlp.fc2.bias"])
    x = ag.add(x, h)
    pooled = ag.mean(x, axis=1)
    logits = ag.linear(pooled, params[f"{t}.head.weight"], params[f"{t}.head.bias"])
    return (logits, weights) if return_attention else logits


def fc_branch(feature: Variable, params: ModelParams) -> Variable:
    return ag.linear(feature, params["fc.weight"], params["fc.bias"])


# ----------------------------------------------------------------- prediction

@dataclass(frozen=True)
class Prediction:
    probabilities: tuple[float, float]
    label: str
    mode: str
    branch_logits: tuple[tuple[float, float], tuple[float, float]]  # (transformer, fc)

    @property
    def class_index(self) -> int:
        return CLASS_NAMES.index(self.label)


def fuse_logits(logits_t: Variable, logits_fc: Variable, mode: str) -> Variable:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if logits_t.shape != logits_fc.shape:
        raise ShapeError(f"branch logits differ in shape: {logits_t.shape} vs {logits_fc.shape}")
    return ag.add(logits_fc, logits_t) if mode == "fused" else logits_fc


def fuse_and_predict(logits_t, logits_fc, mode: str) -> list[Prediction]:
    """Softmax of the fused (or FC-only) logits; argmax ties go to class 0."""
    lt, lf = ag.as_variable(logits_t), ag.as_variable(logits_fc)
    with ag.no_grad():
        probs = ag.softmax(fuse_logits(lt, lf, mode), axis=1).value
    preds = []
    for row in range(probs.shape[0]):
        p = probs[row]
        label = CLASS_NAMES[int(np.argmax(p))]  # np.argmax returns first max
        preds.append(Prediction(
            (float(p[0]), float(p[1])), label, mode,
            (tuple(float(v) for v in lt.value[row]), tuple(float(v) for v in lf.value[row])),
        ))
    return preds


@dataclass
class ForwardOutput:
    logits: Variable  # fused or fc-only logits, depending on mode
    transformer_logits: Variable
    fc_logits: Variable

    def predictions(self, mode: str) -> list[Prediction]:
        return fuse_and_predict(self.transformer_logits, self.fc_logits, mode)


def forward(x, params: ModelParams, cfg: ModelConfig, mode: str = "fused") -> ForwardOutput:
    """Full network on a batch ``[B, renum_ct, S, S]`` (array or Variable)."""
    dtype = params["fc.weight"].dtype
    if not isinstance(x, Variable):
        x = Variable(np.asarray(x, dtype=dtype))
    if x.ndim != 4 or x.shape[1:] != (cfg.renum_ct, cfg.image_size, cfg.image_size):
        raise ShapeError(
            f"input must be [B, {cfg.renum_ct}, {cfg.image_size}, {cfg.image_size}], got {x.shape}")
    feat = extract_features(x, params, cfg)
    lt = transformer_branch(feat, params, cfg)
    lf = fc_branch(feat, params)
    return ForwardOutput(fuse_logits(lt, lf, mode), lt, lf)


def cast_params(params: ModelParams, dtype) -> ModelParams:
    return {k: Variable(v.value.astype(dtype), requires_grad=True) for k, v in params.items()}
