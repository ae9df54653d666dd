"""One-encoder / multi-decoder reconstruction network.

A shared encoder maps a [1, H, H] image to a latent vector; one decoder per
in-distribution activity class maps the latent back to a reconstruction.  At
inference each decoder reconstructs the same input, and the per-class MSEs feed
the multi-threshold verdict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigurationError, ShapeError

DEFAULT_CLASSES = ("sit", "stand", "walk")

_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    The spatial ladder must close: three 2x poolings take ``input_hw`` down to
    ``input_hw / 8``, and the flattened size feeds the latent dense layer.  The
    class set defaults to the three human activities but is open-ended: one
    decoder is built per class.
    """

    input_hw: int = 64
    latent_dim: int = 64
    encoder_filters: tuple[int, int, int] = (16, 32, 64)
    decoder_filters: tuple[int, int, int] = (64, 32, 16)
    classes: tuple[str, ...] = DEFAULT_CLASSES
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.input_hw % 8 != 0 or self.input_hw < 8:
            raise ConfigurationError(
                f"input_hw must be a positive multiple of 8 (three 2x poolings), got {self.input_hw}"
            )
        if self.latent_dim < 1:
            raise ConfigurationError("latent_dim must be >= 1")
        if len(self.encoder_filters) != 3 or len(self.decoder_filters) != 3:
            raise ConfigurationError("encoder_filters and decoder_filters must have 3 entries")
        if self.encoder_filters[-1] != self.decoder_filters[0]:
            raise ConfigurationError(
                "last encoder filter count must match first decoder filter count "
                f"({self.encoder_filters[-1]} vs {self.decoder_filters[0]})"
            )
        if len(self.classes) < 1 or len(set(self.classes)) != len(self.classes):
            raise ConfigurationError("classes must be non-empty and unique")
        if self.dtype not in _DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def bottleneck_hw(self) -> int:
        return self.input_hw // 8

    @property
    def flat_dim(self) -> int:
        return self.decoder_filters[0] * self.bottleneck_hw * self.bottleneck_hw

    def to_dict(self) -> dict:
        return {
            "input_hw": self.input_hw,
            "latent_dim": self.latent_dim,
            "encoder_filters": list(self.encoder_filters),
            "decoder_filters": list(self.decoder_filters),
            "classes": list(self.classes),
            "seed": self.seed,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            input_hw=int(d["input_hw"]),
            latent_dim=int(d["latent_dim"]),
            encoder_filters=tuple(d["encoder_filters"]),
            decoder_filters=tuple(d["decoder_filters"]),
            classes=tuple(d["classes"]),
            seed=int(d["seed"]),
            dtype=str(d["dtype"]),
        )


def _build_encoder(cfg: ModelConfig, rng: np.random.Generator, dtype) -> nn.Sequential:
    f1, f2, f3 = cfg.encoder_filters
    layers: list[tuple[str, nn.Layer]] = []
    in_ch = 1
    for i, f in enumerate((f1, f2, f3), start=1):
        layers += [
            (f"conv{i}", nn.Conv2d(in_ch, f, rng, dtype=dtype)),
            (f"bn{i}", nn.BatchNorm2d(f, dtype=dtype)),
            (f"relu{i}", nn.ReLU()),
            (f"pool{i}", nn.MaxPool2()),
        ]
        in_ch = f
    layers += [
        ("flatten", nn.Flatten()),
        ("dense", nn.Dense(cfg.flat_dim, cfg.latent_dim, rng, dtype=dtype)),
        ("bn_latent", nn.BatchNorm1d(cfg.latent_dim, dtype=dtype)),
    ]
    return nn.Sequential(layers)


def _build_decoder(cfg: ModelConfig, rng: np.random.Generator, dtype) -> nn.Sequential:
    f1, f2, f3 = cfg.decoder_filters
    hw = cfg.bottleneck_hw
    layers: list[tuple[str, nn.Layer]] = [
        ("dense", nn.Dense(cfg.latent_dim, cfg.flat_dim, rng, dtype=dtype)),
        ("bn_dense", nn.BatchNorm1d(cfg.flat_dim, dtype=dtype)),
        ("reshape", nn.Reshape((f1, hw, hw))),
    ]
    chain = [(f1, f1), (f1, f2), (f2, f3)]
    for i, (c_in, c_out) in enumerate(chain, start=1):
        layers += [
            (f"tconv{i}", nn.ConvTranspose2d(c_in, c_out, rng, dtype=dtype)),
            (f"bn{i}", nn.BatchNorm2d(c_out, dtype=dtype)),
            (f"relu{i}", nn.ReLU()),
            (f"up{i}", nn.Upsample2()),
        ]
    layers += [
        ("tconv_out", nn.ConvTranspose2d(f3, 1, rng, init="glorot", dtype=dtype)),
        ("sigmoid", nn.Sigmoid()),
    ]
    return nn.Sequential(layers)


class MultiDecoderModel:
    """Shared encoder plus one reconstruction decoder per class."""

    def __init__(self, config: ModelConfig):
        self.config = config
        dtype = _DTYPES[config.dtype]
        rng = np.random.default_rng(config.seed)
        self.encoder = _build_encoder(config, rng, dtype)
        self.decoders = {c: _build_decoder(config, rng, dtype) for c in config.classes}
        self.epoch = 0
        self.loss_history: list[float] = []

    @property
    def classes(self) -> tuple[str, ...]:
        return self.config.classes

    @property
    def dtype(self):
        return _DTYPES[self.config.dtype]

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        hw = self.config.input_hw
        if x.ndim == 2 and x.shape == (hw, hw):
            x = x[None, None]
        elif x.ndim == 3 and x.shape[1:] == (hw, hw):
            x = x[:, None]
        if x.ndim != 4 or x.shape[1:] != (1, hw, hw):
            raise ShapeError(f"expected [N, 1, {hw}, {hw}] input, got {x.shape}")
        return np.ascontiguousarray(x, dtype=self.dtype)

    def encode(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Latent codes [N, latent_dim] for a batch of images."""
        return self.encoder.forward(self._check_input(x), train=train)

    def decode(self, class_name: str, z: np.ndarray, train: bool = False) -> np.ndarray:
        """Reconstruction [N, 1, H, H] from latents through one class's decoder."""
        if class_name not in self.decoders:
            raise ValueError(f"unknown class {class_name!r}; model has {self.classes}")
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ShapeError(f"expected [N, {self.config.latent_dim}] latents, got {z.shape}")
        return self.decoders[class_name].forward(z.astype(self.dtype, copy=False), train=train)

    def reconstruction_errors(self, x: np.ndarray) -> dict[str, float]:
        """Per-class reconstruction MSE for a single image (eval mode)."""
        batch = self.reconstruction_errors_batch(x)
        if len(next(iter(batch.values()))) != 1:
            raise ShapeError("reconstruction_errors takes a single image; use the batch variant")
        return {c: float(v[0]) for c, v in batch.items()}

    def reconstruction_errors_batch(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Per-class, per-sample reconstruction MSE over a batch (eval mode)."""
        x = self._check_input(x)
        z = self.encoder.forward(x, train=False)
        errors = {}
        for c in self.classes:
            recon = self.decoders[c].forward(z, train=False)
            diff = recon - x
            errors[c] = (diff * diff).mean(axis=(1, 2, 3))
        return errors

    # -- parameter plumbing -------------------------------------------------

    def named_params(self) -> list[tuple[str, nn.Parameter]]:
        out = [(f"encoder/{n}", p) for n, p in self.encoder.params()]
        for c in self.classes:
            out.extend((f"decoder:{c}/{n}", p) for n, p in self.decoders[c].params())
        return out

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"encoder/{n}", b) for n, b in self.encoder.buffers()]
        for c in self.classes:
            out.extend((f"decoder:{c}/{n}", b) for n, b in self.decoders[c].buffers())
        return out

    def zero_grad(self) -> None:
        for _, p in self.named_params():
            p.zero_grad()

    def set_update_stats(self, enabled: bool) -> None:
        self.encoder.set_update_stats(enabled)
        for dec in self.decoders.values():
            dec.set_update_stats(enabled)

    def load_arrays(self, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray]) -> None:
        """Install parameter/buffer arrays by path (checkpoint restore)."""
        own = dict(self.named_params())
        if set(own) != set(params):
            missing = set(own) ^ set(params)
            raise ConfigurationError(f"checkpoint parameter paths do not match model: {sorted(missing)}")
        for name, p in own.items():
            if p.data.shape != params[name].shape:
                raise ShapeError(f"parameter {name} shape {params[name].shape} != {p.data.shape}")
            p.data = params[name].astype(self.dtype, copy=True)
            p.grad = np.zeros_like(p.data)
        bn_layers = self._bn_layers()
        for path, layer in bn_layers.items():
            rm, rv = buffers[f"{path}/running_mean"], buffers[f"{path}/running_var"]
            layer.set_buffers(rm.astype(self.dtype, copy=True), rv.astype(self.dtype, copy=True))

    def _bn_layers(self) -> dict[str, nn._BatchNorm]:
        out = {}
        for lname, layer in self.encoder.layers:
            if isinstance(layer, nn._BatchNorm):
                out[f"encoder/{lname}"] = layer
        for c in self.classes:
            for lname, layer in self.decoders[c].layers:
                if isinstance(layer, nn._BatchNorm):
                    out[f"decoder:{c}/{lname}"] = layer
        return out
