"""The full segmentation network: four encoder FCT layers, a bottleneck,
four decoder FCT layers, pyramid image inputs, UNet-style skips, and
deep-supervision heads; plus the parameter registry, profiler, and
checkpoint IO.

Resolution chain for a 224 input: encoders put out 112, 56, 28, 14; the
bottleneck stays at 14; decoders put out 28, 56, 112, 224. Skips are the
encoder outputs at the matching decoder resolution, except the last
decoder, which takes the first encoder's pre-pool stem feature (the only
full-resolution feature available).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionConfig, AttentionParams
from .errors import ShapeError, UsageError, ValidationError
from .fct_layer import (FctLayerConfig, FctLayerParams, fct_layer_forward,
                        init_fct_layer)
from .layers import (ConvParams, LinearParams, NormParams, avg_pool2d, conv2d,
                     concat_channels, init_conv)
from .tensor import Tensor
from .tensorfile import write_fctt, read_fctt
from .wide_focus import WideFocusConfig, WideFocusParams

STAGE_NAMES = ("enc1", "enc2", "enc3", "enc4", "bottleneck",
               "dec1", "dec2", "dec3", "dec4")
DS_MODES = ("full", "partial", "off")

# Published figures for the original 224x224 configuration, reported by the
# profiler for comparison (never hard-asserted; the two published parameter
# counts for this configuration disagree with each other).
REFERENCE_224 = {"param_count": 31_700_000, "flops": 7_870_000_000,
                 "label": "original 224x224 configuration"}

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    input_size: tuple = (224, 224)
    in_channels: int = 1
    num_classes: int = 4
    stage_filters: tuple = (16, 32, 64, 128, 384, 128, 64, 32, 16)
    stage_heads: tuple = (2, 4, 8, 12, 16, 12, 8, 4, 2)
    wf: WideFocusConfig = field(default_factory=WideFocusConfig)
    pyramid_inputs: bool = True
    deep_supervision: str = "partial"
    kv_strides: tuple = (1, 1, 1, 1, 1, 1, 1, 1, 1)

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.stage_filters = tuple(int(v) for v in self.stage_filters)
        self.stage_heads = tuple(int(v) for v in self.stage_heads)
        self.kv_strides = tuple(int(v) for v in self.kv_strides)
        if isinstance(self.wf, dict):
            self.wf = config_from_dict(WideFocusConfig, self.wf, "wide-focus config")
        h, w = self.input_size
        if h % 16 or w % 16 or h <= 0 or w <= 0:
            raise ValidationError(f"input_size {self.input_size} must be positive and divisible by 16 "
                                  "(four exact poolings)")
        for name, seq in (("stage_filters", self.stage_filters),
                          ("stage_heads", self.stage_heads),
                          ("kv_strides", self.kv_strides)):
            if len(seq) != 9:
                raise ValidationError(f"{name} must list 9 stages, got {len(seq)}")
            if min(seq) < 1:
                raise ValidationError(f"{name} entries must be positive")
        if self.in_channels < 1:
            raise ValidationError("in_channels must be >= 1")
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        if self.deep_supervision not in DS_MODES:
            raise ValidationError(f"deep_supervision must be one of {DS_MODES}, "
                                  f"got {self.deep_supervision!r}")


def config_from_dict(cls, d, what, error=UsageError):
    """Build a config dataclass from a plain dict, rejecting unknown keys."""
    if not isinstance(d, dict):
        raise error(f"{what} must be a JSON object, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise error(f"unknown {what} key(s): {', '.join(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        if isinstance(e, (UsageError, ValidationError, ShapeError)):
            raise
        raise error(f"invalid {what}: {e}")


def model_config_to_dict(cfg: ModelConfig):
    d = dataclasses.asdict(cfg)
    for key in ("input_size", "stage_filters", "stage_heads", "kv_strides"):
        d[key] = list(d[key])
    d["wf"]["dilations"] = list(d["wf"]["dilations"])
    if d["wf"]["kernels"] is not None:
        d["wf"]["kernels"] = list(d["wf"]["kernels"])
    return d


def model_config_from_dict(d, error=UsageError):
    return config_from_dict(ModelConfig, d, "model config", error=error)


class ParamRegistry:
    """Ordered name -> Tensor map of every trainable parameter."""

    def __init__(self):
        self._params = {}

    def register(self, name, tensor):
        if name in self._params:
            raise ValidationError(f"duplicate parameter name {name!r}")
        if not isinstance(tensor, Tensor) or not tensor.requires_grad:
            raise ValidationError(f"parameter {name!r} must be a trainable Tensor")
        self._params[name] = tensor

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def get(self, name):
        return self._params[name]

    def __len__(self):
        return len(self._params)

    def __contains__(self, name):
        return name in self._params

    def param_count(self):
        return int(sum(t.size for t in self._params.values()))


_PARAM_STRUCTS = (ConvParams, NormParams, LinearParams, AttentionParams,
                  WideFocusParams, FctLayerParams)


def register_params(reg, prefix, obj):
    """Walk a parameter struct and register every Tensor under dotted names."""
    if obj is None:
        return
    if isinstance(obj, Tensor):
        reg.register(prefix, obj)
    elif isinstance(obj, _PARAM_STRUCTS):
        for f in dataclasses.fields(obj):
            register_params(reg, f"{prefix}.{f.name}", getattr(obj, f.name))
    elif isinstance(obj, dict):
        for key, value in obj.items():
            register_params(reg, f"{prefix}.{key}", value)
    elif isinstance(obj, (list, tuple)):
        for i, value in enumerate(obj):
            if isinstance(value, (Tensor,) + _PARAM_STRUCTS + (dict, list)):
                register_params(reg, f"{prefix}.{i}", value)


class Model:
    def __init__(self, cfg, stage_cfgs, stage_params, pyramid_convs, head_convs, registry):
        self.cfg = cfg
        self.stage_cfgs = stage_cfgs  # 9 FctLayerConfig
        self.stage_params = stage_params  # 9 FctLayerParams
        self.pyramid_convs = pyramid_convs  # {"enc2"|"enc3"|"enc4": ConvParams}
        self.head_convs = head_convs  # {scale int: ConvParams}
        self.registry = registry


def head_scales(ds_mode):
    if ds_mode == "off":
        return (1,)
    if ds_mode == "partial":
        return (1, 2, 4)
    return (1, 2, 4, 8)


def stage_in_channels(cfg: ModelConfig):
    """Input channel count of each of the 9 stages (after pyramid concat
    for encoders, after skip concat for decoders)."""
    f = cfg.stage_filters
    pyr = cfg.pyramid_inputs
    return (
        cfg.in_channels,
        f[0] + (f[1] if pyr else 0),
        f[1] + (f[2] if pyr else 0),
        f[2] + (f[3] if pyr else 0),
        f[3],
        f[4] + f[2],  # upsampled bottleneck + enc3 skip
        f[5] + f[1],
        f[6] + f[0],
        f[7] + f[0],  # + enc1 pre-pool stem skip
    )


def build_model(cfg: ModelConfig, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    in_chs = stage_in_channels(cfg)
    stage_cfgs = []
    stage_params = []
    registry = ParamRegistry()

    for i, name in enumerate(STAGE_NAMES):
        variant = "encoder" if i < 4 else ("bottleneck" if i == 4 else "decoder")
        attn = AttentionConfig(channels=cfg.stage_filters[i], heads=cfg.stage_heads[i],
                               kv_stride=cfg.kv_strides[i])
        # a layer norm over a single input channel is constant and would
        # erase the image, so the first stage skips it for 1-channel input
        stem_norm = not (i == 0 and cfg.in_channels == 1)
        layer_cfg = FctLayerConfig(filters=cfg.stage_filters[i], attention=attn,
                                   wf=cfg.wf, variant=variant, stem_norm=stem_norm)
        params = init_fct_layer(rng, in_chs[i], layer_cfg, dtype=dtype)
        stage_cfgs.append(layer_cfg)
        stage_params.append(params)
        register_params(registry, name, params)

    pyramid_convs = {}
    if cfg.pyramid_inputs:
        for i in (1, 2, 3):
            p = init_conv(rng, 3, 3, cfg.in_channels, cfg.stage_filters[i], dtype=dtype)
            pyramid_convs[STAGE_NAMES[i]] = p
            register_params(registry, f"pyramid.{STAGE_NAMES[i]}", p)

    head_convs = {}
    head_sources = {1: 8, 2: 7, 4: 6, 8: 5}  # scale -> stage index feeding the head
    for scale in head_scales(cfg.deep_supervision):
        p = init_conv(rng, 1, 1, cfg.stage_filters[head_sources[scale]],
                      cfg.num_classes, dtype=dtype)
        head_convs[scale] = p
        register_params(registry, f"head.s{scale}", p)

    return Model(cfg, stage_cfgs, stage_params, pyramid_convs, head_convs, registry)


def model_forward(model: Model, x):
    """Full forward pass; returns [(scale, logits)] ordered full scale first.

    scale is the integer downsampling divisor of each head (1 = input
    resolution). Which heads exist depends on cfg.deep_supervision.
    """
    cfg = model.cfg
    if x.ndim != 4:
        raise ShapeError(f"model input must be (N,H,W,C), got {tuple(x.shape)}")
    n, h, w, c = x.shape
    if (h, w) != cfg.input_size or c != cfg.in_channels:
        raise ShapeError(f"input {tuple(x.shape)} does not match configured "
                         f"size {cfg.input_size} x {cfg.in_channels} channels")

    enc_out = []
    stem1 = None
    cur = x
    for i in range(4):
        if i > 0 and cfg.pyramid_inputs:
            pooled = avg_pool2d(x, 2 ** i)
            cur = concat_channels(cur, conv2d(pooled, model.pyramid_convs[STAGE_NAMES[i]]))
        cur, tr = fct_layer_forward(cur, model.stage_cfgs[i], model.stage_params[i])
        if i == 0:
            stem1 = tr.stem
        enc_out.append(cur)

    cur, _ = fct_layer_forward(cur, model.stage_cfgs[4], model.stage_params[4])

    dec_skips = (enc_out[2], enc_out[1], enc_out[0], stem1)
    dec_out = []
    for j in range(4):
        cur, _ = fct_layer_forward(cur, model.stage_cfgs[5 + j], model.stage_params[5 + j],
                                   skip=dec_skips[j])
        dec_out.append(cur)

    head_sources = {1: dec_out[3], 2: dec_out[2], 4: dec_out[1], 8: dec_out[0]}
    return [(scale, conv2d(head_sources[scale], model.head_convs[scale]))
            for scale in head_scales(cfg.deep_supervision)]


# ---------------------------------------------------------------------------
# profiler

FLOPS_CONVENTION = (
    "1 multiply-accumulate = 2 FLOPs; conv 2*Ho*Wo*Cout*Kh*Kw*Cin/groups; "
    "matmul 2*M*K*P per batch; normalization 5 and activation 10 FLOPs per "
    "element; attention bucket counts the q@kT and attn@v products plus the "
    "softmax over scores; pooling, upsampling, concat and reshapes are free"
)


def _conv_flops(ho, wo, p: ConvParams):
    kh, kw, cin_g, cout = p.kernel.shape
    return 2 * ho * wo * cout * kh * kw * cin_g


def _stage_flops(cfg: ModelConfig, layer_cfg, params, h_in, w_in):
    """(conv_bucket, attention_bucket, h_out, w_out) of one stage at batch 1."""
    f = layer_cfg.filters
    conv = 0
    if layer_cfg.variant == "decoder":
        h_in, w_in = h_in * 2, w_in * 2
    cin = params.conv1.kernel.shape[2]
    if params.norm is not None:
        conv += 5 * h_in * w_in * cin
    conv += _conv_flops(h_in, w_in, params.conv1) + 10 * h_in * w_in * f
    conv += _conv_flops(h_in, w_in, params.conv2) + 10 * h_in * w_in * f
    ha, wa = (h_in // 2, w_in // 2) if layer_cfg.variant == "encoder" else (h_in, w_in)

    attn_cfg = layer_cfg.attention
    conv += _conv_flops(ha, wa, params.attention.embed_conv) + 5 * ha * wa * f
    t_q = ha * wa  # q_stride is 1 throughout the model
    hk, wk = -(-ha // attn_cfg.kv_stride), -(-wa // attn_cfg.kv_stride)
    t_kv = hk * wk
    for role, t_role in (("q", t_q), ("k", t_kv), ("v", t_kv)):
        hr, wr = (ha, wa) if role == "q" else (hk, wk)
        conv += _conv_flops(hr, wr, params.attention.proj_depthwise[role])
        conv += 2 * t_role * f * attn_cfg.inner
    attn = 2 * 2 * attn_cfg.heads * t_q * t_kv * attn_cfg.head_dim  # q@kT and attn@v
    attn += 10 * attn_cfg.heads * t_q * t_kv  # softmax over scores
    conv += 2 * (2 * t_q * attn_cfg.inner * f)  # shared output map, both paths

    for p in params.wf.branch_convs:
        conv += _conv_flops(ha, wa, p) + 10 * ha * wa * f
    conv += _conv_flops(ha, wa, params.wf.agg_conv) + 10 * ha * wa * f
    return conv, attn, ha, wa


def _params_in(registry, prefix):
    return int(sum(t.size for name, t in registry.items()
                   if name == prefix or name.startswith(prefix + ".")))


def profile(model: Model):
    """Parameter count and FLOPs (batch 1 at the configured input size),
    with a per-stage breakdown and attention FLOPs reported separately."""
    cfg = model.cfg
    h, w = cfg.input_size
    stages = []
    total_conv = 0
    total_attn = 0
    for i, name in enumerate(STAGE_NAMES):
        conv, attn, ho, wo = _stage_flops(cfg, model.stage_cfgs[i], model.stage_params[i], h, w)
        if cfg.pyramid_inputs and name in model.pyramid_convs:
            conv += _conv_flops(h, w, model.pyramid_convs[name])
        n_params = _params_in(model.registry, name)
        if name in model.pyramid_convs:
            n_params += _params_in(model.registry, f"pyramid.{name}")
        lc = model.stage_cfgs[i]
        stages.append({"stage": name, "resolution": ho, "filters": lc.filters,
                       "heads": lc.attention.heads, "head_dim": lc.attention.head_dim,
                       "params": n_params, "flops": conv + attn, "attention_flops": attn})
        total_conv += conv
        total_attn += attn
        h, w = ho, wo

    head_flops = 0
    for scale, p in model.head_convs.items():
        hs, ws = cfg.input_size[0] // scale, cfg.input_size[1] // scale
        head_flops += _conv_flops(hs, ws, p)
    head_params = _params_in(model.registry, "head")
    stages.append({"stage": "heads", "resolution": cfg.input_size[0],
                   "filters": cfg.num_classes, "heads": 0, "head_dim": 0,
                   "params": head_params, "flops": head_flops, "attention_flops": 0})
    total_conv += head_flops

    return {
        "param_count": model.registry.param_count(),
        "flops": int(total_conv + total_attn),
        "attention_flops": int(total_attn),
        "input_size": list(cfg.input_size),
        "stages": stages,
        "reference": dict(REFERENCE_224),
        "convention": FLOPS_CONVENTION,
    }


# ---------------------------------------------------------------------------
# checkpoints


def _fctt_byte_len(shape, size):
    return 6 + 4 * len(shape) + 4 * size


def save_checkpoint(model: Model, out_dir):
    """Write every parameter as <name>.fctt plus manifest.json."""
    os.makedirs(out_dir, exist_ok=True)
    tensors = []
    for name, t in model.registry.items():
        fname = name + ".fctt"
        write_fctt(os.path.join(out_dir, fname), t.data)
        tensors.append({"name": name, "shape": list(t.shape), "file": fname,
                        "byte_len": _fctt_byte_len(t.shape, t.size)})
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": model_config_to_dict(model.cfg),
        "tensors": tensors,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(ckpt_dir):
    """Rebuild a model from a checkpoint directory; forward is bit-identical."""
    manifest_path = os.path.join(ckpt_dir, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise ValidationError(f"no manifest.json in {ckpt_dir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint format_version "
                              f"{manifest.get('format_version')!r}")
    cfg = model_config_from_dict(manifest["model_config"], error=ValidationError)
    model = build_model(cfg, seed=0)

    saved = {e["name"]: e for e in manifest["tensors"]}
    missing = [n for n in model.registry.names() if n not in saved]
    extra = [n for n in saved if n not in model.registry]
    if missing or extra:
        raise ValidationError(f"checkpoint does not match config; missing: {missing}, "
                              f"extra: {extra}")
    problems = []
    for name, t in model.registry.items():
        entry = saved[name]
        path = os.path.join(ckpt_dir, entry["file"])
        if not os.path.isfile(path):
            problems.append(f"{name}: file {entry['file']} is missing")
            continue
        arr = read_fctt(path)
        if arr.shape != t.data.shape:
            problems.append(f"{name}: shape {list(arr.shape)} != expected {list(t.shape)}")
            continue
        t.data = arr
    if problems:
        raise ValidationError("checkpoint load failed: " + "; ".join(problems))
    return model
