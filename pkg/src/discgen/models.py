"""Encoder, decoder and classifier networks plus parameter initialization.

The layout follows the usual strided-convolution design: every encoder and
classifier stage is a 4x4 convolution with stride 2 and padding 1 (which
exactly halves H and W), doubling the filter count each stage; the decoder
mirrors this with fractionally strided convolutions that double the spatial
extent and halve the filters, closing with a tanh head so pixel means stay
inside (-1, 1). Hidden activations are leaky-relu(0.2) with batch
normalization everywhere except the first encoder/classifier convolution
and the output heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeError, Tensor
from .gaussians import DiagonalGaussian
from .precision import default_dtype

KERNEL = 4
STRIDE = 2
PAD = 1
LEAK = 0.2
INIT_STD = 0.02
BN_MOMENTUM = 0.9
BN_EPS = 1e-5


@dataclass
class ArchConfig:
    image_shape: tuple[int, int, int] = (1, 32, 32)  # [C, H, W]
    latent_dim: int = 64
    base_filters: int = 32
    stages: int = 3
    label_count: int = 5
    dense_units: int = 256
    # 1-based indices into the classifier feature list (conv stages then the
    # dense hidden layer); defaults to all of them.
    feature_layers: tuple[int, ...] = field(default_factory=tuple)
    include_logit_loss: bool = False

    def __post_init__(self):
        c, h, w = self.image_shape
        div = 2 ** self.stages
        if h % div or w % div:
            raise ValueError(f"image {h}x{w} not divisible by 2^{self.stages}")
        if not self.feature_layers:
            self.feature_layers = tuple(range(1, self.stages + 2))
        if max(self.feature_layers) > self.stages + 1 or min(self.feature_layers) < 1:
            raise ValueError(f"feature_layers out of range 1..{self.stages + 1}")

    @property
    def stage_filters(self) -> tuple[int, ...]:
        return tuple(self.base_filters * 2 ** i for i in range(self.stages))

    @property
    def bottom_hw(self) -> tuple[int, int]:
        _, h, w = self.image_shape
        return h // 2 ** self.stages, w // 2 ** self.stages

    @property
    def num_feature_terms(self) -> int:
        return len(self.feature_layers) + (1 if self.include_logit_loss else 0)

    @property
    def units(self) -> int:
        c, h, w = self.image_shape
        return c * h * w


class Dense:
    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator):
        dtype = default_dtype()
        self.w = Parameter(rng.normal(0.0, INIT_STD, (in_dim, out_dim)), f"{name}.w", dtype=dtype)
        self.b = Parameter(np.zeros(out_dim), f"{name}.b", dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.bias_add(ad.matmul(x, self.w), self.b)

    def params(self) -> list[Parameter]:
        return [self.w, self.b]


class Conv:
    def __init__(self, name: str, in_ch: int, out_ch: int, rng: np.random.Generator,
                 transpose: bool = False):
        dtype = default_dtype()
        kshape = (in_ch, out_ch, KERNEL, KERNEL) if transpose else (out_ch, in_ch, KERNEL, KERNEL)
        self.w = Parameter(rng.normal(0.0, INIT_STD, kshape), f"{name}.w", dtype=dtype)
        self.b = Parameter(np.zeros(out_ch), f"{name}.b", dtype=dtype)
        self.transpose = transpose

    def __call__(self, x: Tensor) -> Tensor:
        if self.transpose:
            y = ad.conv2d_transpose(x, self.w, STRIDE, PAD)
        else:
            y = ad.conv2d(x, self.w, STRIDE, PAD)
        return ad.bias_add(y, self.b)

    def params(self) -> list[Parameter]:
        return [self.w, self.b]


class BatchNorm:
    def __init__(self, name: str, channels: int):
        dtype = default_dtype()
        self.gamma = Parameter(np.ones(channels), f"{name}.gamma", dtype=dtype)
        self.beta = Parameter(np.zeros(channels), f"{name}.beta", dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.name = name

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return ad.batch_norm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, mode, BN_MOMENTUM, BN_EPS)

    def params(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}


class Encoder:
    """Strided conv stack followed by two dense heads (mean, log-variance)."""

    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        c = arch.image_shape[0]
        self.convs: list[Conv] = []
        self.bns: list[BatchNorm | None] = []
        for i, f in enumerate(arch.stage_filters):
            self.convs.append(Conv(f"encoder.conv{i}", c, f, rng))
            self.bns.append(BatchNorm(f"encoder.bn{i}", f) if i > 0 else None)
            c = f
        bh, bw = arch.bottom_hw
        flat = arch.stage_filters[-1] * bh * bw
        self.head_mean = Dense("encoder.mean", flat, arch.latent_dim, rng)
        self.head_logvar = Dense("encoder.logvar", flat, arch.latent_dim, rng)

    def __call__(self, x: Tensor, mode: str) -> DiagonalGaussian:
        h = x
        for conv, bn in zip(self.convs, self.bns):
            h = conv(h)
            if bn is not None:
                h = bn(h, mode)
            h = ad.leaky_relu(h, LEAK)
        h = ad.reshape(h, (h.shape[0], -1))
        return DiagonalGaussian(self.head_mean(h), self.head_logvar(h))

    def params(self) -> list[Parameter]:
        out = []
        for conv, bn in zip(self.convs, self.bns):
            out += conv.params()
            if bn is not None:
                out += bn.params()
        return out + self.head_mean.params() + self.head_logvar.params()

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for bn in self.bns:
            if bn is not None:
                out.update(bn.buffers())
        return out


class Decoder:
    """Two dense layers, reshape, then fractionally strided conv stack."""

    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        bh, bw = arch.bottom_hw
        deep = arch.stage_filters[-1]
        self.bottom = (deep, bh, bw)
        self.dense1 = Dense("decoder.dense0", arch.latent_dim, arch.dense_units, rng)
        self.bn_d1 = BatchNorm("decoder.bnd0", arch.dense_units)
        self.dense2 = Dense("decoder.dense1", arch.dense_units, deep * bh * bw, rng)
        self.bn_d2 = BatchNorm("decoder.bnd1", deep * bh * bw)
        self.tconvs: list[Conv] = []
        self.bns: list[BatchNorm | None] = []
        filters = list(arch.stage_filters[:-1])[::-1] + [arch.image_shape[0]]
        c = deep
        for i, f in enumerate(filters):
            last = i == len(filters) - 1
            self.tconvs.append(Conv(f"decoder.tconv{i}", c, f, rng, transpose=True))
            self.bns.append(None if last else BatchNorm(f"decoder.bn{i}", f))
            c = f

    def __call__(self, z: Tensor, mode: str) -> Tensor:
        h = ad.leaky_relu(self.bn_d1(self.dense1(z), mode), LEAK)
        h = ad.leaky_relu(self.bn_d2(self.dense2(h), mode), LEAK)
        h = ad.reshape(h, (h.shape[0],) + self.bottom)
        for tconv, bn in zip(self.tconvs, self.bns):
            h = tconv(h)
            if bn is not None:
                h = ad.leaky_relu(bn(h, mode), LEAK)
        return ad.tanh(h)

    def params(self) -> list[Parameter]:
        out = self.dense1.params() + self.bn_d1.params() + self.dense2.params() + self.bn_d2.params()
        for tconv, bn in zip(self.tconvs, self.bns):
            out += tconv.params()
            if bn is not None:
                out += bn.params()
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.bn_d1.buffers())
        out.update(self.bn_d2.buffers())
        for bn in self.bns:
            if bn is not None:
                out.update(bn.buffers())
        return out


class Classifier:
    """Conv stack plus dense hidden layer and multi-label logit head."""

    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        c = arch.image_shape[0]
        self.convs: list[Conv] = []
        self.bns: list[BatchNorm | None] = []
        for i, f in enumerate(arch.stage_filters):
            self.convs.append(Conv(f"classifier.conv{i}", c, f, rng))
            self.bns.append(BatchNorm(f"classifier.bn{i}", f) if i > 0 else None)
            c = f
        bh, bw = arch.bottom_hw
        flat = arch.stage_filters[-1] * bh * bw
        self.dense = Dense("classifier.dense", flat, arch.dense_units, rng)
        self.head = Dense("classifier.out", arch.dense_units, arch.label_count, rng)

    def __call__(self, x: Tensor, mode: str, depth: int | None = None
                 ) -> tuple[list[Tensor], Tensor | None]:
        """Return per-layer features and logits.

        ``depth`` truncates the forward pass after that many feature layers
        (logits are then None); used by the blurred-feature experiment.
        """
        features: list[Tensor] = []
        h = x
        for conv, bn in zip(self.convs, self.bns):
            h = conv(h)
            if bn is not None:
                h = bn(h, mode)
            h = ad.leaky_relu(h, LEAK)
            features.append(h)
            if depth is not None and len(features) == depth:
                return features, None
        h = ad.reshape(h, (h.shape[0], -1))
        h = ad.leaky_relu(self.dense(h), LEAK)
        features.append(h)
        if depth is not None and len(features) == depth:
            return features, None
        return features, self.head(h)

    def params(self) -> list[Parameter]:
        out = []
        for conv, bn in zip(self.convs, self.bns):
            out += conv.params()
            if bn is not None:
                out += bn.params()
        return out + self.dense.params() + self.head.params()

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for bn in self.bns:
            if bn is not None:
                out.update(bn.buffers())
        return out


@dataclass
class ModelBundle:
    arch: ArchConfig
    encoder: Encoder
    decoder: Decoder
    classifier: Classifier
    pixel_log_var: Parameter

    def vae_params(self) -> list[Parameter]:
        return self.encoder.params() + self.decoder.params() + [self.pixel_log_var]

    def classifier_params(self) -> list[Parameter]:
        return self.classifier.params()

    def all_params(self) -> list[Parameter]:
        return self.vae_params() + self.classifier_params()

    def set_classifier_trainable(self, trainable: bool) -> None:
        for p in self.classifier.params():
            p.set_trainable(trainable)

    def named_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"meta.arch": arch_to_array(self.arch)}
        for p in self.all_params():
            out[p.name] = p.data
        out.update(self.encoder.buffers())
        out.update(self.decoder.buffers())
        out.update(self.classifier.buffers())
        return out

    def classifier_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"meta.arch": arch_to_array(self.arch)}
        for p in self.classifier.params():
            out[p.name] = p.data
        out.update(self.classifier.buffers())
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray], strict: bool = True) -> None:
        """Copy matching tensors into the bundle (bit-exact, dtype kept)."""
        slots: dict[str, np.ndarray] = {}
        for p in self.all_params():
            slots[p.name] = p.data
        for net in (self.encoder, self.decoder, self.classifier):
            slots.update(net.buffers())
        for name, value in tensors.items():
            if name.startswith("meta."):
                continue
            if name not in slots:
                if strict:
                    raise KeyError(f"checkpoint tensor {name!r} has no slot in this model")
                continue
            if slots[name].shape != value.shape:
                raise ShapeError(
                    f"checkpoint tensor {name!r}: shape {value.shape} vs expected {slots[name].shape}"
                )
            slots[name][...] = value


def arch_to_array(arch: ArchConfig) -> np.ndarray:
    head = [*arch.image_shape, arch.latent_dim, arch.base_filters, arch.stages,
            arch.label_count, arch.dense_units, 1 if arch.include_logit_loss else 0,
            len(arch.feature_layers)]
    return np.asarray(head + list(arch.feature_layers), dtype=np.float64)


def arch_from_array(values: np.ndarray) -> ArchConfig:
    v = [int(round(x)) for x in np.asarray(values).reshape(-1)]
    n_layers = v[9]
    return ArchConfig(
        image_shape=(v[0], v[1], v[2]),
        latent_dim=v[3],
        base_filters=v[4],
        stages=v[5],
        label_count=v[6],
        dense_units=v[7],
        include_logit_loss=bool(v[8]),
        feature_layers=tuple(v[10:10 + n_layers]),
    )


def init_bundle(arch: ArchConfig, rng: np.random.Generator) -> ModelBundle:
    """Fresh bundle: conv/dense weights ~ N(0, 0.02^2), biases 0, gamma 1."""
    c, h, w = arch.image_shape
    pixel_log_var = Parameter(np.zeros((c, h, w)), "pixel_log_var", dtype=default_dtype())
    return ModelBundle(
        arch=arch,
        encoder=Encoder(arch, rng),
        decoder=Decoder(arch, rng),
        classifier=Classifier(arch, rng),
        pixel_log_var=pixel_log_var,
    )


def encode(bundle: ModelBundle, x: Tensor, mode: str) -> DiagonalGaussian:
    """Per-example approximate posterior over the latent code."""
    _check_image(bundle.arch, x)
    return bundle.encoder(x, mode)


def decode(bundle: ModelBundle, z: Tensor, mode: str) -> Tensor:
    """Pixel-space conditional mean, in (-1, 1)."""
    if z.data.ndim != 2 or z.shape[1] != bundle.arch.latent_dim:
        raise ShapeError(f"decode: z {z.shape} vs latent dim {bundle.arch.latent_dim}")
    return bundle.decoder(z, mode)


def classify(bundle: ModelBundle, x: Tensor, mode: str, depth: int | None = None
             ) -> tuple[list[Tensor], Tensor | None]:
    """Classifier features (conv stages + dense hidden) and logits."""
    _check_image(bundle.arch, x)
    return bundle.classifier(x, mode, depth)


def _check_image(arch: ArchConfig, x: Tensor) -> None:
    if x.data.ndim != 4 or tuple(x.shape[1:]) != tuple(arch.image_shape):
        raise ShapeError(f"input {x.shape} vs image shape {arch.image_shape}")
