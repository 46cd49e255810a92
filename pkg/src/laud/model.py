"""The LaUD network: feature extraction, LP-style upscale block, downscale
block and per-step ToRGB heads, repeated K times (RUDP)."""

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from . import ops
from .checkpoint import read_container, write_container
from .errors import ConfigError, FormatError
from .tensor import Tensor

# (kernel, stride, padding) shared by the deconvolution and the strided conv;
# each maps h <-> s*h exactly for every h.
SCALE_GEOMETRY = {2: (4, 2, 1), 4: (8, 4, 2), 8: (12, 8, 2)}


@dataclass
class LaudConfig:
    scale: int = 2
    rudp_steps: int = 3
    residual_blocks: int = 4
    channels: int = 256
    leaky_slope: float = 0.2
    in_channels: int = 3
    # subtracted from the LR input and added back to every SR output, so the
    # convolutions work on roughly zero-mean data
    input_shift: float = 0.5
    # multiplier on the init bound of the last conv in each residual branch
    # (RB conv2, detail conv3); 1.0 is plain Kaiming, which blows up across
    # the K stacked steps
    branch_init_scale: float = 0.1

    def __post_init__(self):
        if self.scale not in SCALE_GEOMETRY:
            raise ConfigError(f"scale must be one of {sorted(SCALE_GEOMETRY)}, got {self.scale}")
        for name in ("rudp_steps", "residual_blocks", "channels", "in_channels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from None


@dataclass(frozen=True)
class LayerSpec:
    name: str
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    padding: int = 0
    transposed: bool = False

    @property
    def weight_shape(self):
        if self.transposed:
            return (self.in_ch, self.out_ch, self.kernel, self.kernel)
        return (self.out_ch, self.in_ch, self.kernel, self.kernel)

    @property
    def num_parameters(self):
        return self.in_ch * self.out_ch * self.kernel * self.kernel + self.out_ch


def step_input_channels(config, k):
    """Channels entering step ``k`` (1-based): the LR image plus all earlier H_Down maps."""
    return config.in_channels + config.channels * (k - 1)


def layer_specs(config):
    c, out_ch = config.channels, config.in_channels
    ks, st, pd = SCALE_GEOMETRY[config.scale]
    specs = []
    for k in range(1, config.rudp_steps + 1):
        p = f"step{k}."
        specs.append(LayerSpec(p + "shallow", step_input_channels(config, k), c, 3, 1, 1))
        for n in range(1, config.residual_blocks + 1):
            specs.append(LayerSpec(f"{p}rb{n}.conv1", c, c, 3, 1, 1))
            specs.append(LayerSpec(f"{p}rb{n}.conv2", c, c, 3, 1, 1))
        specs.append(LayerSpec(p + "up.deconv", c, c, ks, st, pd, transposed=True))
        specs.append(LayerSpec(p + "up.conv", c, c, 3, 1, 1))
        for i in (1, 2, 3):
            specs.append(LayerSpec(f"{p}detail.conv{i}", c, c, 3, 1, 1))
        specs.append(LayerSpec(p + "to_rgb_sr", c, out_ch, 1))
        specs.append(LayerSpec(p + "to_rgb_detail", c, out_ch, 1))
        if k < config.rudp_steps:
            specs.append(LayerSpec(p + "down.strided", c, c, ks, st, pd))
            specs.append(LayerSpec(p + "down.conv", c, c, 3, 1, 1))
    return specs


def _is_branch_tail(name):
    return (".rb" in name and name.endswith(".conv2")) or name.endswith(".detail.conv3")


def parameter_count(config):
    return sum(s.num_parameters for s in layer_specs(config))


def detail_branch_names(config):
    return [f"step{k}.detail.conv{i}" for k in range(1, config.rudp_steps + 1) for i in (1, 2, 3)]


@dataclass
class ForwardTrace:
    sr_images: List[Tensor]
    detail_images: List[Tensor]
    features: Optional[List[Dict[str, Tensor]]] = None

    @property
    def output(self):
        return self.sr_images[-1]


class LaudModel:
    def __init__(self, config, seed=0, dtype=np.float32):
        self.config = config
        self.specs = layer_specs(config)
        self.layers = {}
        rng = np.random.default_rng(seed)
        gain = np.sqrt(2.0 / (1.0 + config.leaky_slope**2))
        for spec in self.specs:
            fan_in = spec.in_ch * spec.kernel * spec.kernel
            if spec.transposed:
                fan_in = max(1, fan_in // (spec.stride * spec.stride))
            bound = gain * np.sqrt(3.0 / fan_in)
            if _is_branch_tail(spec.name):
                bound *= self.config.branch_init_scale
            w = rng.uniform(-bound, bound, size=spec.weight_shape).astype(dtype)
            b = np.zeros(spec.out_ch, dtype=dtype)
            self.layers[spec.name] = ops.ConvParams(
                Tensor(w, requires_grad=True, name=spec.name + ".weight"),
                Tensor(b, requires_grad=True, name=spec.name + ".bias"),
                spec.stride,
                spec.padding,
                spec.transposed,
            )

    def parameters(self):
        return [t for spec in self.specs for t in self.layers[spec.name].tensors()]

    def named_parameters(self):
        return {t.name: t for t in self.parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def _conv(self, name, x):
        layer = self.layers[name]
        if layer.transposed:
            return ops.conv2d_transposed(x, layer)
        return ops.conv2d(x, layer)

    def _act(self, x):
        return ops.leaky_relu(x, self.config.leaky_slope)

    def feature_extract(self, x, k):
        """Shallow conv then N residual blocks with identity skips."""
        expected = step_input_channels(self.config, k)
        if x.shape[1] != expected:
            raise ConfigError(f"step {k} expects {expected} input channels, got input of shape {x.shape}")
        p = f"step{k}."
        h = self._conv(p + "shallow", x)
        for n in range(1, self.config.residual_blocks + 1):
            r = self._conv(f"{p}rb{n}.conv2", self._act(self._conv(f"{p}rb{n}.conv1", h)))
            h = ops.add(h, r)
        return h

    def upscale_block(self, h, k):
        """Returns ``(H_U, H_D, H_SR)`` at HR size."""
        p = f"step{k}."
        h_u = self._conv(p + "up.conv", self._act(self._conv(p + "up.deconv", h)))
        h_d = self._conv(p + "detail.conv1", h_u)
        h_d = self._conv(p + "detail.conv2", self._act(h_d))
        h_d = self._conv(p + "detail.conv3", self._act(h_d))
        return h_u, h_d, ops.add(h_u, h_d)

    def downscale_block(self, h_sr, k):
        p = f"step{k}."
        return self._conv(p + "down.conv", self._act(self._conv(p + "down.strided", h_sr)))

    def forward(self, lr, retain_features=False):
        lr = lr if isinstance(lr, Tensor) else Tensor(lr)
        if lr.ndim != 4 or lr.shape[1] != self.config.in_channels:
            raise ConfigError(f"expected a (B, {self.config.in_channels}, h, w) input, got shape {lr.shape}")
        srs, details, feats = [], [], []
        downs = []
        shift = self.config.input_shift
        lr_in = ops.shift(lr, -shift) if shift else lr
        for k in range(1, self.config.rudp_steps + 1):
            x = ops.concat_channels([lr_in] + downs)
            h_n = self.feature_extract(x, k)
            h_u, h_d, h_sr = self.upscale_block(h_n, k)
            sr = self._conv(f"step{k}.to_rgb_sr", h_sr)
            srs.append(ops.shift(sr, shift) if shift else sr)
            details.append(self._conv(f"step{k}.to_rgb_detail", h_d))
            if retain_features:
                feats.append({"H_U": h_u, "H_D": h_d, "H_SR": h_sr})
            if k < self.config.rudp_steps:
                downs.append(self.downscale_block(h_sr, k))
        return ForwardTrace(srs, details, feats if retain_features else None)

    __call__ = forward

    def state_dict(self):
        return {name: t.data for name, t in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise FormatError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, t in params.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise FormatError(f"shape mismatch for {name}: checkpoint {arr.shape} vs model {t.shape}")
            t.data = arr.astype(t.data.dtype).copy()


def save_checkpoint(model, extra_metadata=None):
    meta = {"kind": "laud-model", "config": model.config.to_dict()}
    if extra_metadata:
        meta.update(extra_metadata)
    return write_container(model.state_dict(), meta)


def load_checkpoint(buf):
    tensors, meta = read_container(buf)
    if not isinstance(meta, dict) or "config" not in meta:
        raise FormatError("checkpoint header carries no model config")
    try:
        config = LaudConfig.from_dict(meta["config"])
    except ConfigError as exc:
        raise FormatError(str(exc)) from None
    model = LaudModel(config, seed=0)
    model.load_state_dict(tensors)
    return model
