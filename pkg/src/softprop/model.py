"""Image encoder, folding decoders and the multi-view proprioception model.

Decoders are share-weight MLPs evaluated per grid point:

* original: ``p = f([g, c])`` on the concatenated grid point and code;
* improved: ``p = f(l(g) + c)`` where ``l`` lifts each grid point to a
  K-dimensional learned bias.

Both evaluate their first layer in factored form, ``W g + W c`` instead of
``W [g; c]`` (or ``W l(g) + W c`` instead of ``W (l(g) + c)``), so the
code's contribution is computed once per sample rather than once per point.
:meth:`FoldingDecoder.reference` evaluates the literal, unfactored form.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from softprop.errors import ShapeError
from softprop.numcore import MLP, ConvStack, Module, Tensor, no_grad, ops
from softprop.numcore.tensor import DEFAULT_DTYPE
from softprop.prototype import PrototypeGrid

SUPPORTED_RESOLUTIONS = (16, 32, 64, 128, 224)


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 32
    channels: int = 6
    conv_channels: tuple = (16, 32, 64)
    latent_dim: int = 512
    fc_hidden: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "fc_hidden", tuple(int(c) for c in self.fc_hidden))
        if self.image_size % (2 ** len(self.conv_channels)):
            raise ValueError(
                f"image size {self.image_size} is not divisible by 2^{len(self.conv_channels)} pooling stages"
            )
        if self.latent_dim < 1 or self.channels < 1:
            raise ValueError("latent_dim and channels must be positive")

    @property
    def flat_features(self) -> int:
        side = self.image_size // 2 ** len(self.conv_channels)
        last = self.conv_channels[-1] if self.conv_channels else self.channels
        return last * side * side


@dataclass(frozen=True)
class DecoderConfig:
    """Widths exclude the input layer: ``f_widths`` run from the f input to 3.

    Defaults are the improved decoder's: f maps K -> 512 -> 512 -> 3 and
    l maps D -> 256 -> K.
    """

    variant: str = "improved"
    grid_dim: int = 3
    f_widths: tuple = (512, 512, 3)
    l_widths: tuple = (256,)

    def __post_init__(self):
        object.__setattr__(self, "f_widths", tuple(int(w) for w in self.f_widths))
        object.__setattr__(self, "l_widths", tuple(int(w) for w in self.l_widths))
        if self.variant not in ("original", "improved"):
            raise ValueError(f"unknown decoder variant {self.variant!r}")
        if self.grid_dim not in (2, 3):
            raise ValueError("grid_dim must be 2 or 3")
        if not self.f_widths or self.f_widths[-1] != 3:
            raise ValueError("f must end in 3 outputs")
        if len(self.f_widths) < 2:
            raise ValueError("f needs at least one hidden layer")

    @classmethod
    def original(cls, grid_dim: int = 2, f_widths: tuple = (624, 624, 624, 3)) -> "DecoderConfig":
        return cls(variant="original", grid_dim=grid_dim, f_widths=f_widths, l_widths=())


class Encoder(Module):
    """``(B, H, W, C)`` images in [0, 1] -> ``(B, K)`` latent codes."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        self.config = config
        self.dtype = dtype
        self.convs = ConvStack(config.channels, config.conv_channels, rng, dtype)
        self.head = MLP([config.flat_features, *config.fc_hidden, config.latent_dim], rng, dtype)

    def named_parameters(self, prefix: str = "") -> list:
        return self.convs.named_parameters(prefix + "conv.") + self.head.named_parameters(prefix + "head.")

    def __call__(self, images) -> Tensor:
        x = images.data if isinstance(images, Tensor) else np.asarray(images)
        if x.ndim == 3:
            x = x[None]
        cfg = self.config
        if x.ndim != 4 or x.shape[1:] != (cfg.image_size, cfg.image_size, cfg.channels):
            raise ShapeError(
                f"encoder expects images of shape (B, {cfg.image_size}, {cfg.image_size}, {cfg.channels}), "
                f"got {x.shape}"
            )
        if isinstance(images, Tensor) and images.requires_grad:
            t = ops.reshape(images, x.shape) if images.ndim == 3 else images
        else:
            t = Tensor(np.ascontiguousarray(x), dtype=self.dtype)
        return self.head(ops.flatten(self.convs(t)))


class FoldingDecoder(Module):
    def __init__(self, config: DecoderConfig, latent_dim: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        self.config = config
        self.latent_dim = latent_dim
        self.dtype = dtype
        if config.variant == "improved":
            self.lift = MLP([config.grid_dim, *config.l_widths, latent_dim], rng, dtype)
            self.fold = MLP([latent_dim, *config.f_widths], rng, dtype)
        else:
            self.lift = None
            self.fold = MLP([config.grid_dim + latent_dim, *config.f_widths], rng, dtype)

    def named_parameters(self, prefix: str = "") -> list:
        out = []
        if self.lift is not None:
            out += self.lift.named_parameters(prefix + "l.")
        return out + self.fold.named_parameters(prefix + "f.")

    def _grid_tensor(self, grid) -> Tensor:
        pts = grid.points if isinstance(grid, PrototypeGrid) else np.asarray(grid)
        if pts.ndim != 2 or pts.shape[1] != self.config.grid_dim:
            raise ShapeError(f"decoder expects grid dimension {self.config.grid_dim}, got grid of shape {pts.shape}")
        return Tensor(pts, dtype=self.dtype)

    def point_bias(self, grid) -> Tensor:
        """Learned constant bias ``l(g_j)`` for each grid point, (M, K)."""
        if self.lift is None:
            raise ValueError("the original decoder has no learned bias")
        return self.lift(self._grid_tensor(grid))

    def __call__(self, grid, codes: Tensor) -> Tensor:
        """Decode ``(B, K)`` codes on an M-point grid into ``(B, M, 3)`` clouds."""
        g = self._grid_tensor(grid)
        if codes.ndim != 2 or codes.shape[1] != self.latent_dim:
            raise ShapeError(f"codes must be (B, {self.latent_dim}), got {codes.shape}")
        w0, b0 = self.fold.weights[0], self.fold.biases[0]
        if self.lift is not None:
            grid_part = ops.matmul(self.lift(g), w0)
            code_part = ops.matmul(codes, w0)
        else:
            d = self.config.grid_dim
            grid_part = ops.matmul(g, ops.take_rows(w0, np.arange(d)))
            code_part = ops.matmul(codes, ops.take_rows(w0, np.arange(d, d + self.latent_dim)))
        bsz, m = codes.shape[0], g.shape[0]
        h = ops.add(ops.reshape(code_part, (bsz, 1, -1)), ops.reshape(grid_part, (1, m, -1)))
        h = ops.relu(ops.bias_add(h, b0))
        return self.fold(h, start=1)

    def reference(self, grid, codes: Tensor) -> Tensor:
        """Unfactored evaluation: the MLP applied to ``[g_j, c]`` or ``l(g_j) + c`` row by row."""
        g = self._grid_tensor(grid)
        bsz, m = codes.shape[0], g.shape[0]
        rep = ops.take_rows(codes, np.repeat(np.arange(bsz), m))
        if self.lift is not None:
            bias = ops.take_rows(self.lift(g), np.tile(np.arange(m), bsz))
            x = ops.add(bias, rep)
        else:
            x = ops.concat([ops.take_rows(g, np.tile(np.arange(m), bsz)), rep], axis=1)
        return ops.reshape(self.fold(x), (bsz, m, 3))


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    views: int = 2
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.views < 1:
            raise ValueError("need at least one view")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(encoder=EncoderConfig(**d["encoder"]), decoder=DecoderConfig(**d["decoder"]),
                   views=d["views"], seed=d["seed"], dtype=d.get("dtype", "float32"))


class ProprioModel(Module):
    """Shared encoder plus one decoder per view (views are numbered from 1)."""

    def __init__(self, config: ModelConfig):
        self.config = config
        dtype = np.dtype(config.dtype).type
        rng = np.random.default_rng(config.seed)
        self.encoder = Encoder(config.encoder, rng, dtype)
        self.decoders = [FoldingDecoder(config.decoder, config.encoder.latent_dim, rng, dtype)
                         for _ in range(config.views)]

    @property
    def latent_dim(self) -> int:
        return self.config.encoder.latent_dim

    @property
    def views(self) -> int:
        return self.config.views

    def named_parameters(self, prefix: str = "") -> list:
        out = self.encoder.named_parameters(prefix + "encoder.")
        for i, dec in enumerate(self.decoders, start=1):
            out += dec.named_parameters(f"{prefix}decoder{i}.")
        return out

    def decoder_parameters(self, view: int) -> list:
        return self.decoder(view).parameters()

    def decoder(self, view: int) -> FoldingDecoder:
        if not 1 <= view <= len(self.decoders):
            raise ValueError(f"invalid view {view}; model has views 1..{len(self.decoders)}")
        return self.decoders[view - 1]

    def encode(self, images) -> Tensor:
        return self.encoder(images)

    def decode(self, grid, codes: Tensor, view: int = 1) -> Tensor:
        return self.decoder(view)(grid, codes)

    def predict(self, image, grid, views: Optional[Sequence[int]] = None) -> list:
        """Encode once and decode each requested view; returns one (M, 3) array per view."""
        views = list(range(1, self.views + 1)) if views is None else list(views)
        with no_grad():
            c = self.encode(image)
            if c.shape[0] != 1:
                raise ShapeError("predict takes a single image")
            return [self.decode(grid, c, v).data[0] for v in views]
