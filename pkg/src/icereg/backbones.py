"""Miniature CNN regression networks.

Five backbone families, each keeping its defining design element at desk
scale (3 stages, 2 blocks per stage by default, two stride-2 transitions):

  mini_resnet    -- residual blocks with identity/projection skips
  mini_densenet  -- dense blocks (each sublayer sees all predecessors)
  mini_inception -- four parallel branches (1x1 / 3x3 / 5x5 / pool) per module
  mini_xception  -- depthwise-separable units with residual skips
  mini_mobilenet -- inverted bottlenecks (expand, depthwise, linear project)

Every family ends with global average pooling, a 1024-unit dense layer and
a 27-unit dense layer, both ReLU-activated, so outputs are non-negative
per-layer thickness estimates.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError
from .rng import Rng

BACKBONE_KINDS = ("mini_resnet", "mini_densenet", "mini_inception",
                  "mini_xception", "mini_mobilenet")

DOWNSAMPLE_FACTOR = 4  # two stride-2 stage transitions


@dataclass
class ArchitectureSpec:
    input_height: int = 64
    input_width: int = 128
    input_channels: int = 1
    stem_channels: int = 16
    stage_widths: tuple = (16, 32, 64)
    blocks_per_stage: int = 2
    growth_rate: int = 12       # mini_densenet only
    expansion: int = 4          # mini_mobilenet only
    head_hidden: int = 1024
    output_nodes: int = 27

    def validate(self):
        if self.input_height % DOWNSAMPLE_FACTOR or self.input_width % DOWNSAMPLE_FACTOR:
            raise ConfigurationError(
                f"input dims {self.input_height}x{self.input_width} must be "
                f"divisible by the downsampling factor {DOWNSAMPLE_FACTOR}")
        widths = list(self.stage_widths)
        if not widths or any(w < 1 for w in widths):
            raise ConfigurationError(f"stage widths must all be >= 1, got {widths}")
        for v, name in [(self.input_channels, "input_channels"),
                        (self.stem_channels, "stem_channels"),
                        (self.blocks_per_stage, "blocks_per_stage"),
                        (self.growth_rate, "growth_rate"),
                        (self.expansion, "expansion"),
                        (self.head_hidden, "head_hidden"),
                        (self.output_nodes, "output_nodes")]:
            if v < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {v}")

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["stage_widths"] = list(self.stage_widths)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ArchitectureSpec":
        doc = dict(doc)
        if "stage_widths" in doc:
            doc["stage_widths"] = tuple(doc["stage_widths"])
        spec = cls(**doc)
        spec.validate()
        return spec


class _Builder:
    """Registers named parameters / norm state with deterministic init."""

    def __init__(self, seed: int):
        self.rng = Rng(seed).substream("init")
        self.params: dict[str, T.Tensor] = {}
        self.norm_state: dict[str, T.RunningStats] = {}

    def param(self, name: str, shape, init: str, fan_in: int = 0) -> T.Tensor:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        n = int(np.prod(shape))
        if init == "he":
            data = (self.rng.normal(n) * np.sqrt(2.0 / fan_in)).reshape(shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ConfigurationError(f"unknown init {init!r}")
        t = T.Tensor(data.astype(np.float32), name=name)
        self.params[name] = t
        return t

    def stats(self, name: str, channels: int) -> T.RunningStats:
        if name in self.norm_state:
            raise ConfigurationError(f"duplicate norm state name {name!r}")
        s = T.RunningStats(channels)
        self.norm_state[name] = s
        return s


class _Conv:
    def __init__(self, b: _Builder, name: str, in_ch: int, out_ch: int, k: int,
                 stride: int = 1, bias: bool = True):
        self.stride = stride
        self.pad = k // 2
        self.w = b.param(f"{name}.w", (out_ch, in_ch, k, k), "he", fan_in=in_ch * k * k)
        self.b = b.param(f"{name}.b", (out_ch,), "zeros") if bias else None

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class _DepthwiseConv:
    def __init__(self, b: _Builder, name: str, channels: int, k: int, stride: int = 1):
        self.stride = stride
        self.pad = k // 2
        self.w = b.param(f"{name}.w", (channels, 1, k, k), "he", fan_in=k * k)

    def __call__(self, x):
        return T.depthwise_conv2d(x, self.w, stride=self.stride, pad=self.pad)


class _BatchNorm:
    def __init__(self, b: _Builder, name: str, channels: int):
        self.gamma = b.param(f"{name}.gamma", (channels,), "ones")
        self.beta = b.param(f"{name}.beta", (channels,), "zeros")
        self.state = b.stats(name, channels)

    def __call__(self, x, mode):
        return T.batchnorm2d(x, self.gamma, self.beta, self.state, mode=mode)


class _Dense:
    def __init__(self, b: _Builder, name: str, in_f: int, out_f: int,
                 w_scale: float = 1.0, bias_init: float = 0.0):
        self.w = b.param(f"{name}.w", (out_f, in_f), "he", fan_in=in_f)
        self.b = b.param(f"{name}.b", (out_f,), "zeros")
        if w_scale != 1.0:
            self.w.data = (self.w.data * np.float32(w_scale)).astype(np.float32)
        if bias_init:
            self.b.data = self.b.data + np.float32(bias_init)

    def __call__(self, x):
        return T.dense(x, self.w, self.b)


class _ConvBnRelu:
    def __init__(self, b, name, in_ch, out_ch, k, stride=1):
        self.conv = _Conv(b, f"{name}.conv", in_ch, out_ch, k, stride, bias=False)
        self.bn = _BatchNorm(b, f"{name}.bn", out_ch)

    def __call__(self, x, mode):
        return T.relu(self.bn(self.conv(x), mode))


class _Head:
    def __init__(self, b: _Builder, in_features: int, spec: ArchitectureSpec):
        self.fc1 = _Dense(b, "head.fc1", in_features, spec.head_hidden)
        # the final layer starts at zero weights with a small positive bias, so
        # every ReLU output begins alive; a node whose pre-activation goes
        # negative on every sample gets zero gradient and can never recover
        self.fc2 = _Dense(b, "head.fc2", spec.head_hidden, spec.output_nodes,
                          w_scale=0.0, bias_init=0.1)

    def __call__(self, x):
        feats = T.global_avg_pool(x)
        return T.relu(self.fc2(T.relu(self.fc1(feats))))


def _stage_stride(stage: int, block: int) -> int:
    return 2 if stage > 0 and block == 0 else 1


class _MiniResNet:
    def __init__(self, b: _Builder, spec: ArchitectureSpec):
        self.stem = _ConvBnRelu(b, "stem", spec.input_channels, spec.stem_channels, 3)
        self.blocks = []
        in_ch = spec.stem_channels
        for s, width in enumerate(spec.stage_widths):
            for blk in range(spec.blocks_per_stage):
                stride = _stage_stride(s, blk)
                name = f"stage{s}.block{blk}"
                conv1 = _Conv(b, f"{name}.conv1", in_ch, width, 3, stride, bias=False)
                bn1 = _BatchNorm(b, f"{name}.bn1", width)
                conv2 = _Conv(b, f"{name}.conv2", width, width, 3, 1, bias=False)
                bn2 = _BatchNorm(b, f"{name}.bn2", width)
                proj = (_Conv(b, f"{name}.proj", in_ch, width, 1, stride)
                        if stride != 1 or in_ch != width else None)
                self.blocks.append((conv1, bn1, conv2, bn2, proj))
                in_ch = width
        self.head = _Head(b, in_ch, spec)

    def __call__(self, x, mode):
        x = self.stem(x, mode)
        for conv1, bn1, conv2, bn2, proj in self.blocks:
            y = T.relu(bn1(conv1(x), mode))
            y = bn2(conv2(y), mode)
            skip = proj(x) if proj is not None else x
            x = T.relu(T.residual_add(skip, y))
        return self.head(x)


class _MiniDenseNet:
    SUBLAYERS = 4

    def __init__(self, b: _Builder, spec: ArchitectureSpec):
        self.stem = _ConvBnRelu(b, "stem", spec.input_channels, spec.stem_channels, 3)
        self.stages = []
        in_ch = spec.stem_channels
        n_stages = len(spec.stage_widths)
        for s in range(n_stages):
            subs = []
            for l in range(self.SUBLAYERS):
                name = f"stage{s}.dense{l}"
                bn = _BatchNorm(b, f"{name}.bn", in_ch)
                conv = _Conv(b, f"{name}.conv", in_ch, spec.growth_rate, 3, bias=False)
                subs.append((bn, conv))
                in_ch += spec.growth_rate
            trans = None
            if s < n_stages - 1:
                name = f"stage{s}.transition"
                bn = _BatchNorm(b, f"{name}.bn", in_ch)
                conv = _Conv(b, f"{name}.conv", in_ch, in_ch // 2, 1, bias=False)
                trans = (bn, conv)
                in_ch = in_ch // 2
            self.stages.append((subs, trans))
        self.final_bn = _BatchNorm(b, "final.bn", in_ch)
        self.head = _Head(b, in_ch, spec)

    def __call__(self, x, mode):
        x = self.stem(x, mode)
        for subs, trans in self.stages:
            for bn, conv in subs:
                new = conv(T.relu(bn(x, mode)))
                x = T.concat_channels([x, new])
            if trans is not None:
                bn, conv = trans
                x = conv(T.relu(bn(x, mode)))
                x = T.maxpool2d(x, 2, 2)
        x = T.relu(self.final_bn(x, mode))
        return self.head(x)


class _MiniInception:
    def __init__(self, b: _Builder, spec: ArchitectureSpec):
        for w in spec.stage_widths:
            if w % 4:
                raise ConfigurationError(
                    f"mini_inception stage widths must be divisible by 4, got {w}")
        self.stem = _ConvBnRelu(b, "stem", spec.input_channels, spec.stem_channels, 3)
        self.stages = []
        in_ch = spec.stem_channels
        for s, width in enumerate(spec.stage_widths):
            modules = []
            w4 = width // 4
            for blk in range(spec.blocks_per_stage):
                name = f"stage{s}.module{blk}"
                br1 = _ConvBnRelu(b, f"{name}.b1", in_ch, w4, 1)
                br2a = _ConvBnRelu(b, f"{name}.b2reduce", in_ch, w4, 1)
                br2b = _ConvBnRelu(b, f"{name}.b2", w4, w4, 3)
                br3a = _ConvBnRelu(b, f"{name}.b3reduce", in_ch, w4, 1)
                br3b = _ConvBnRelu(b, f"{name}.b3", w4, w4, 5)
                br4 = _ConvBnRelu(b, f"{name}.b4", in_ch, w4, 1)
                modules.append((br1, br2a, br2b, br3a, br3b, br4))
                in_ch = width
            self.stages.append((s > 0, modules))
        self.head = _Head(b, in_ch, spec)

    def __call__(self, x, mode):
        x = self.stem(x, mode)
        for downsample, modules in self.stages:
            if downsample:
                x = T.maxpool2d(x, 3, 2, 1)
            for br1, br2a, br2b, br3a, br3b, br4 in modules:
                y1 = br1(x, mode)
                y2 = br2b(br2a(x, mode), mode)
                y3 = br3b(br3a(x, mode), mode)
                y4 = br4(T.maxpool2d(x, 3, 1, 1), mode)
                x = T.concat_channels([y1, y2, y3, y4])
        return self.head(x)


class _MiniXception:
    def __init__(self, b: _Builder, spec: ArchitectureSpec):
        self.stem = _ConvBnRelu(b, "stem", spec.input_channels, spec.stem_channels, 3)
        self.blocks = []
        in_ch = spec.stem_channels
        for s, width in enumerate(spec.stage_widths):
            for blk in range(spec.blocks_per_stage):
                stride = _stage_stride(s, blk)
                name = f"stage{s}.block{blk}"
                units = []
                ch = in_ch
                for u in range(2):
                    dw = _DepthwiseConv(b, f"{name}.unit{u}.dw", ch, 3,
                                        stride if u == 0 else 1)
                    pw = _Conv(b, f"{name}.unit{u}.pw", ch, width, 1, bias=False)
                    bn = _BatchNorm(b, f"{name}.unit{u}.bn", width)
                    units.append((dw, pw, bn))
                    ch = width
                proj = (_Conv(b, f"{name}.proj", in_ch, width, 1, stride)
                        if stride != 1 or in_ch != width else None)
                self.blocks.append((units, proj))
                in_ch = width
        self.head = _Head(b, in_ch, spec)

    def __call__(self, x, mode):
        x = self.stem(x, mode)
        for units, proj in self.blocks:
            y = x
            for dw, pw, bn in units:
                y = T.relu(bn(pw(dw(y)), mode))
            skip = proj(x) if proj is not None else x
            x = T.residual_add(skip, y)
        return self.head(x)


class _MiniMobileNet:
    def __init__(self, b: _Builder, spec: ArchitectureSpec):
        self.stem = _ConvBnRelu(b, "stem", spec.input_channels, spec.stem_channels, 3)
        self.blocks = []
        in_ch = spec.stem_channels
        for s, width in enumerate(spec.stage_widths):
            for blk in range(spec.blocks_per_stage):
                stride = _stage_stride(s, blk)
                name = f"stage{s}.block{blk}"
                hidden = in_ch * spec.expansion
                expand = _ConvBnRelu(b, f"{name}.expand", in_ch, hidden, 1)
                dw = _DepthwiseConv(b, f"{name}.dw", hidden, 3, stride)
                dw_bn = _BatchNorm(b, f"{name}.dwbn", hidden)
                project = _Conv(b, f"{name}.project", hidden, width, 1, bias=False)
                proj_bn = _BatchNorm(b, f"{name}.projbn", width)
                use_skip = stride == 1 and in_ch == width
                self.blocks.append((expand, dw, dw_bn, project, proj_bn, use_skip))
                in_ch = width
        self.head = _Head(b, in_ch, spec)

    def __call__(self, x, mode):
        x = self.stem(x, mode)
        for expand, dw, dw_bn, project, proj_bn, use_skip in self.blocks:
            y = expand(x, mode)
            y = T.relu(dw_bn(dw(y), mode))
            y = proj_bn(project(y), mode)  # linear bottleneck, no activation
            x = T.residual_add(x, y) if use_skip else y
        return self.head(x)


_FAMILIES = {
    "mini_resnet": _MiniResNet,
    "mini_densenet": _MiniDenseNet,
    "mini_inception": _MiniInception,
    "mini_xception": _MiniXception,
    "mini_mobilenet": _MiniMobileNet,
}


@dataclass
class Model:
    kind: str
    spec: ArchitectureSpec
    seed: int
    params: dict = field(repr=False, default_factory=dict)
    norm_state: dict = field(repr=False, default_factory=dict)
    net: object = field(repr=False, default=None)

    def param_list(self) -> list[T.Tensor]:
        return list(self.params.values())


def build_model(kind: str, spec: ArchitectureSpec, seed: int) -> Model:
    if kind not in _FAMILIES:
        raise ConfigurationError(
            f"unknown backbone {kind!r}; valid kinds: {', '.join(BACKBONE_KINDS)}")
    spec.validate()
    builder = _Builder(seed)
    net = _FAMILIES[kind](builder, spec)
    return Model(kind=kind, spec=spec, seed=seed,
                 params=builder.params, norm_state=builder.norm_state, net=net)


def model_forward(model: Model, batch: T.Tensor, mode: str = "eval") -> T.Tensor:
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    expected = (model.spec.input_channels, model.spec.input_height,
                model.spec.input_width)
    if batch.data.ndim != 4 or batch.shape[1:] != expected:
        raise DimensionError(
            f"batch shape {batch.shape} does not match model input "
            f"[B,{expected[0]},{expected[1]},{expected[2]}]")
    return model.net(batch, mode)


# ---------------------------------------------------------------------------
# checkpoints: ICTK tensors + JSON sidecar {kind, spec, seed, format_version}

def _sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_model(model: Model, path, extra: dict | None = None):
    """Write parameters, norm running stats, and any extra named arrays."""
    tensors: dict[str, np.ndarray] = {n: t.data for n, t in model.params.items()}
    for name, stats in model.norm_state.items():
        tensors[f"{name}.running_mean"] = stats.mean
        tensors[f"{name}.running_var"] = stats.var
    if extra:
        tensors.update(extra)
    checkpoint.write_tensors(path, tensors)
    manifest = {"kind": model.kind, "spec": model.spec.to_json(),
                "seed": model.seed, "format_version": checkpoint.FORMAT_VERSION}
    with open(_sidecar_path(path), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path) -> tuple[Model, dict]:
    """Rebuild from the sidecar and restore tensors; returns (model, extras)."""
    with open(_sidecar_path(path)) as f:
        manifest = json.load(f)
    model = build_model(manifest["kind"],
                        ArchitectureSpec.from_json(manifest["spec"]),
                        manifest["seed"])
    tensors = checkpoint.read_tensors(path)
    extras = {}
    for name, arr in tensors.items():
        if name in model.params:
            if model.params[name].shape != arr.shape:
                raise ContractError(f"checkpoint tensor {name!r} has shape "
                                    f"{arr.shape}, expected {model.params[name].shape}")
            model.params[name].data = arr
        elif name.endswith(".running_mean"):
            model.norm_state[name[:-len(".running_mean")]].mean = arr
        elif name.endswith(".running_var"):
            model.norm_state[name[:-len(".running_var")]].var = arr
        else:
            extras[name] = arr
    missing = set(model.params) - set(tensors)
    if missing:
        raise ContractError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
    return model, extras
