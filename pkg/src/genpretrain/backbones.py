"""ResNet and Transformer backbones plus the projector/classifier heads.

Both backbones map a (batch, channels, length) series to a fixed-width
embedding. In per-time-step mode (used by TS2Vec) the pooling / [start]
extraction is skipped, the first convolution runs with stride 2 and the final
linear layer is applied at every remaining time step.
"""

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .tensor import Conv1d, LayerNorm, Linear, Module, MultiHeadAttention, Tensor, concat
from .tensor.nn import _rng

RESNET_MIN_LENGTH = 8


def _halve_width(width):
    # halving the parameter count means scaling widths by 1/sqrt(2)
    return max(1, int(round(width / math.sqrt(2.0))))


@dataclass(frozen=True)
class ResNetSpec:
    in_channels: int = 1
    widths: tuple = (64, 128, 128)
    kernel_sizes: tuple = (7, 5, 3)
    out_dim: int = None
    first_stride: int = 1
    per_timestep: bool = False

    def __post_init__(self):
        if tuple(self.kernel_sizes) != (7, 5, 3):
            raise ValueError("residual blocks use kernel sizes (7, 5, 3)")
        object.__setattr__(self, "widths", tuple(self.widths))
        object.__setattr__(self, "kernel_sizes", tuple(self.kernel_sizes))

    @property
    def embedding_dim(self):
        return self.out_dim or self.widths[-1]

    def for_ts2vec(self):
        return replace(self, first_stride=2, per_timestep=True)

    def halved(self):
        widths = tuple(_halve_width(w) for w in self.widths)
        out_dim = _halve_width(self.out_dim) if self.out_dim else None
        return replace(self, widths=widths, out_dim=out_dim)

    def num_parameters(self):
        total, c_in = 0, self.in_channels
        for w in self.widths:
            total += sum(cin * w * k + w for cin, k in zip((c_in, w, w), self.kernel_sizes))
            if c_in != w:
                total += c_in * w + w
            c_in = w
        return total + c_in * self.embedding_dim + self.embedding_dim


@dataclass(frozen=True)
class TransformerSpec:
    in_channels: int = 1
    n_layers: int = 4
    n_heads: int = 8
    width: int = 64
    ff_width: int = None
    out_dim: int = None
    input_kernel: int = 1
    first_stride: int = 1
    per_timestep: bool = False
    positional_encoding: bool = True

    @property
    def feedforward_dim(self):
        return self.ff_width or 4 * self.width

    @property
    def embedding_dim(self):
        return self.out_dim or self.width

    def for_ts2vec(self):
        return replace(self, input_kernel=3, first_stride=2, per_timestep=True)

    def halved(self):
        full = self.num_parameters()
        raw = self.width / math.sqrt(2.0)
        width = max(self.n_heads, int(round(raw / self.n_heads)) * self.n_heads)
        out_dim = _halve_width(self.out_dim) if self.out_dim else None
        base = replace(self, width=width, out_dim=out_dim, ff_width=1)
        per_unit = self.n_layers * (2 * width + 1)
        ff = max(1, int(round((full / 2.0 - base.num_parameters() + per_unit) / per_unit)))
        return replace(base, ff_width=ff)

    def num_parameters(self):
        d, ff, o = self.width, self.feedforward_dim, self.embedding_dim
        layer = 4 * (d * d + d) + 4 * d + (d * ff + ff) + (ff * d + d)
        embed = self.in_channels * self.input_kernel * d + d + d
        return self.n_layers * layer + embed + d * o + o


@dataclass(frozen=True)
class HeadSpec:
    embedding_dim: int
    projection_dim: int = 64
    hidden_dim: int = 64
    n_classes: int = None

    def halved(self):
        return replace(
            self,
            embedding_dim=self.embedding_dim,
            projection_dim=max(1, self.projection_dim // 2),
            hidden_dim=max(1, self.hidden_dim // 2),
        )


class RBlock(Module):
    """Three conv-ReLU pairs (kernels 7, 5, 3) plus a skip path.

    The skip path holds a width-1 convolution only when the input and output
    widths differ; otherwise it is the identity (subsampled when strided).
    """

    def __init__(self, c_in, c_out, kernel_sizes=(7, 5, 3), stride=1, rng=None):
        rng = _rng(rng)
        self.convs = [
            Conv1d(c_in, c_out, kernel_sizes[0], stride=stride, rng=rng),
            Conv1d(c_out, c_out, kernel_sizes[1], rng=rng),
            Conv1d(c_out, c_out, kernel_sizes[2], rng=rng),
        ]
        self.skip = Conv1d(c_in, c_out, 1, stride=stride, padding=0, rng=rng) if c_in != c_out else None
        self.stride = stride

    def forward(self, x):
        if x.shape[1] != self.convs[0].in_channels:
            raise ValueError(f"block expects {self.convs[0].in_channels} channels, got {x.shape[1]}")
        h = x
        for conv in self.convs:
            h = conv(h).relu()
        if self.skip is not None:
            return h + self.skip(x)
        return h + (x[:, :, :: self.stride] if self.stride > 1 else x)


class ResNet(Module):
    def __init__(self, spec=None, rng=None):
        spec = spec or ResNetSpec()
        rng = _rng(rng)
        self.spec = spec
        self.per_timestep = spec.per_timestep
        blocks, c_in = [], spec.in_channels
        for i, width in enumerate(spec.widths):
            stride = spec.first_stride if i == 0 else 1
            blocks.append(RBlock(c_in, width, spec.kernel_sizes, stride=stride, rng=rng))
            c_in = width
        self.blocks = blocks
        self.fc = Linear(c_in, spec.embedding_dim, rng=rng)

    @property
    def embedding_dim(self):
        return self.spec.embedding_dim

    def set_per_timestep(self, flag):
        self.per_timestep = bool(flag)
        return self

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3:
            raise ValueError(f"expected (batch, channels, length), got {x.shape}")
        if x.shape[2] < RESNET_MIN_LENGTH:
            raise ValueError(f"series length {x.shape[2]} below the minimum of {RESNET_MIN_LENGTH}")
        h = x
        for block in self.blocks:
            h = block(h)
        if self.per_timestep:
            return self.fc(h.transpose(0, 2, 1))
        return self.fc(h.mean(axis=2))


def positional_encoding(length, dim):
    """Fixed sinusoidal table: sin on even columns, cos on odd columns."""
    if dim % 2:
        raise ValueError("positional encoding needs an even width")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.empty((length, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


class TBlock(Module):
    """Post-norm encoder layer: attention and feed-forward, each with a skip."""

    def __init__(self, width, n_heads, ff_width, rng=None):
        rng = _rng(rng)
        self.attn = MultiHeadAttention(width, n_heads, rng=rng)
        self.norm1 = LayerNorm(width)
        self.ff1 = Linear(width, ff_width, rng=rng)
        self.ff2 = Linear(ff_width, width, rng=rng)
        self.norm2 = LayerNorm(width)

    def forward(self, x):
        h = self.norm1(x + self.attn(x))
        return self.norm2(h + self.ff2(self.ff1(h).relu()))


class Transformer(Module):
    def __init__(self, spec=None, rng=None):
        spec = spec or TransformerSpec()
        rng = _rng(rng)
        self.spec = spec
        self.per_timestep = spec.per_timestep
        self.embed = Conv1d(
            spec.in_channels, spec.width, spec.input_kernel, stride=spec.first_stride, rng=rng
        )
        self.start = Tensor(rng.normal(0.0, 0.02, (1, 1, spec.width)), requires_grad=True)
        self.layers = [TBlock(spec.width, spec.n_heads, spec.feedforward_dim, rng=rng) for _ in range(spec.n_layers)]
        self.fc = Linear(spec.width, spec.embedding_dim, rng=rng)

    @property
    def embedding_dim(self):
        return self.spec.embedding_dim

    def set_per_timestep(self, flag):
        self.per_timestep = bool(flag)
        return self

    def sequence(self, x):
        """Encoder output over the [start] position followed by every time step."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3:
            raise ValueError(f"expected (batch, channels, length), got {x.shape}")
        h = self.embed(x).transpose(0, 2, 1)
        batch, steps, width = h.shape
        start = Tensor(np.ones((batch, 1, 1))) * self.start
        h = concat([start, h], axis=1)
        if self.spec.positional_encoding:
            h = h + positional_encoding(steps + 1, width)
        for layer in self.layers:
            h = layer(h)
        return h

    def forward(self, x):
        h = self.sequence(x)
        if self.per_timestep:
            return self.fc(h[:, 1:, :])
        return self.fc(h[:, 0, :])


class Heads(Module):
    """Projector (linear-ReLU-linear) with an optional linear classifier on top."""

    def __init__(self, spec, rng=None):
        rng = _rng(rng)
        self.spec = spec
        self.proj1 = Linear(spec.embedding_dim, spec.hidden_dim, rng=rng)
        self.proj2 = Linear(spec.hidden_dim, spec.projection_dim, rng=rng)
        self.classifier = None
        if spec.n_classes:
            self.set_classes(spec.n_classes, rng)

    def set_classes(self, n_classes, rng=None):
        self.spec = replace(self.spec, n_classes=int(n_classes))
        self.classifier = Linear(self.spec.projection_dim, int(n_classes), rng=_rng(rng))
        return self

    def project(self, embedding):
        return self.proj2(self.proj1(embedding).relu())


def head_forward(embedding, heads, with_logits=False):
    """Return ``(projection, logits)``; logits are ``None`` unless requested."""
    if embedding.shape[-1] != heads.spec.embedding_dim:
        raise ValueError(f"embedding width {embedding.shape[-1]} != {heads.spec.embedding_dim}")
    projection = heads.project(embedding)
    if not with_logits:
        return projection, None
    if heads.classifier is None:
        raise RuntimeError("classifier requested before the class count was configured")
    return projection, heads.classifier(projection)


def build_backbone(kind, in_channels, rng=None, **overrides):
    if kind == "resnet":
        return ResNet(ResNetSpec(in_channels=in_channels, **overrides), rng=rng)
    if kind == "transformer":
        return Transformer(TransformerSpec(in_channels=in_channels, **overrides), rng=rng)
    raise ValueError(f"unknown backbone {kind!r}")


class EncoderModel(Module):
    """Backbone + projector (+ classifier): the single-domain model graph."""

    def __init__(self, backbone, heads):
        self.backbone = backbone
        self.heads = heads

    @classmethod
    def build(cls, backbone_spec, projection_dim=64, hidden_dim=64, n_classes=None, rng=None):
        rng = _rng(rng)
        backbone = (ResNet if isinstance(backbone_spec, ResNetSpec) else Transformer)(backbone_spec, rng=rng)
        heads = Heads(HeadSpec(backbone.embedding_dim, projection_dim, hidden_dim, n_classes), rng=rng)
        return cls(backbone, heads)

    def set_per_timestep(self, flag):
        self.backbone.set_per_timestep(flag)
        return self

    def set_classes(self, n_classes, rng=None):
        self.heads.set_classes(n_classes, rng)
        return self

    def embed(self, x):
        return self.backbone(x)

    def project(self, x):
        return self.heads.project(self.backbone(x))

    def logits(self, x):
        return head_forward(self.backbone(x), self.heads, with_logits=True)[1]

    def config(self):
        return {
            "type": "encoder",
            "backbone": _spec_dict(self.backbone.spec),
            "heads": asdict(self.heads.spec),
            "per_timestep": self.backbone.per_timestep,
        }


def magnitude_spectrum(x, min_length=RESNET_MIN_LENGTH):
    """|rFFT| along time, zero-padded up to ``min_length`` bins."""
    spec = np.abs(np.fft.rfft(np.asarray(x, dtype=np.float64), axis=-1))
    if spec.shape[-1] < min_length:
        pad = [(0, 0)] * (spec.ndim - 1) + [(0, min_length - spec.shape[-1])]
        spec = np.pad(spec, pad)
    return spec


class DualDomainModel(Module):
    """Time- and frequency-domain encoders whose projections are concatenated
    before a shared classifier (TF-C wiring)."""

    def __init__(self, time_model, freq_model, n_classes=None, rng=None):
        self.time = time_model
        self.freq = freq_model
        self.classifier = None
        if n_classes:
            self.set_classes(n_classes, rng)

    @classmethod
    def build(cls, backbone_spec, projection_dim=64, hidden_dim=64, n_classes=None, rng=None):
        rng = _rng(rng)
        half = backbone_spec.halved()
        time_model = EncoderModel.build(half, projection_dim // 2, hidden_dim // 2, rng=rng)
        freq_model = EncoderModel.build(half, projection_dim // 2, hidden_dim // 2, rng=rng)
        return cls(time_model, freq_model, n_classes, rng=rng)

    def set_classes(self, n_classes, rng=None):
        width = self.time.heads.spec.projection_dim + self.freq.heads.spec.projection_dim
        self.classifier = Linear(width, int(n_classes), rng=_rng(rng))
        return self

    def set_per_timestep(self, flag):
        self.time.set_per_timestep(flag)
        self.freq.set_per_timestep(flag)
        return self

    def project(self, x):
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        return concat([self.time.project(x), self.freq.project(magnitude_spectrum(x))], axis=-1)

    def logits(self, x):
        if self.classifier is None:
            raise RuntimeError("classifier requested before the class count was configured")
        return self.classifier(self.project(x))

    def config(self):
        return {
            "type": "dual",
            "time": self.time.config(),
            "freq": self.freq.config(),
            "n_classes": None if self.classifier is None else self.classifier.weight.shape[0],
        }


def _spec_dict(spec):
    kind = "resnet" if isinstance(spec, ResNetSpec) else "transformer"
    return {"kind": kind, **asdict(spec)}


def _spec_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    return ResNetSpec(**d) if kind == "resnet" else TransformerSpec(**d)


def model_from_config(config):
    """Rebuild an untrained model with the architecture described by ``config``."""
    if config["type"] == "encoder":
        heads = HeadSpec(**config["heads"])
        model = EncoderModel.build(
            _spec_from_dict(config["backbone"]), heads.projection_dim, heads.hidden_dim, heads.n_classes, rng=0
        )
        return model.set_per_timestep(config["per_timestep"])
    if config["type"] == "dual":
        time_model = model_from_config(config["time"])
        freq_model = model_from_config(config["freq"])
        return DualDomainModel(time_model, freq_model, config["n_classes"], rng=0)
    raise ValueError(f"unknown model type {config['type']!r}")


def save_checkpoint(path, module, meta=None):
    """Write named float64 parameters plus JSON metadata to one ``.npz`` file."""
    payload = {"meta": meta or {}}
    if hasattr(module, "config"):
        payload["model"] = module.config()
    arrays = {f"param/{name}": value for name, value in module.state_dict().items()}
    arrays["__meta__"] = np.array(json.dumps(payload, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(state_dict, payload)``; payload holds ``meta`` and ``model`` config."""
    with np.load(path, allow_pickle=False) as archive:
        payload = json.loads(str(archive["__meta__"]))
        state = {k[len("param/") :]: archive[k].copy() for k in archive.files if k.startswith("param/")}
    return state, payload


def load_model(path):
    state, payload = load_checkpoint(path)
    model = model_from_config(payload["model"])
    model.load_state_dict(state)
    return model, payload.get("meta", {})
