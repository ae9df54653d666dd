"""Joint training of the encoder and all class decoders.

Each optimizer step draws one batch per class, reconstructs every batch through
its own decoder, and descends on the sum of the per-class MSE losses.  The
encoder therefore accumulates gradient from every class while each decoder only
sees its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .model import MultiDecoderModel


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    # Optional cap on optimizer steps per epoch; None runs the full
    # min-class-size / batch_size schedule.
    steps_per_epoch: int | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2 (batch norm)")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError("optimizer must be 'adam' or 'sgd'")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigurationError("steps_per_epoch must be >= 1 when set")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "seed": self.seed,
            "shuffle": self.shuffle,
            "steps_per_epoch": self.steps_per_epoch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


class Sgd:
    def __init__(self, params, lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for _, p in self.params:
            p.data -= (self.lr * p.grad).astype(p.data.dtype, copy=False)


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in params]
        self.v = [np.zeros_like(p.data) for _, p in params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for (name, p), m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps))
            p.data -= update.astype(p.data.dtype, copy=False)


def make_optimizer(model: MultiDecoderModel, cfg: TrainConfig):
    params = model.named_params()
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    return Sgd(params, cfg.learning_rate)


def class_reconstruction_loss(model: MultiDecoderModel, class_name: str,
                              batch: np.ndarray, train: bool = True,
                              backward: bool = True) -> float:
    """One class's MSE term; backward accumulates grads into the encoder and
    that class's decoder only."""
    x = model._check_input(batch)
    z = model.encoder.forward(x, train=train)
    recon = model.decoders[class_name].forward(z, train=train)
    diff = recon - x
    loss = float((diff * diff).mean())
    if backward:
        grad = (2.0 / diff.size) * diff
        dz = model.decoders[class_name].backward(grad.astype(x.dtype, copy=False))
        model.encoder.backward(dz)
    return loss


def loss_eq1(model: MultiDecoderModel, batches: dict[str, np.ndarray],
             train: bool = True, backward: bool = True) -> float:
    """Summed per-class reconstruction MSE; gradients for all parameters.

    ``batches`` maps every model class to an equally sized image batch.  Class
    terms run sequentially (forward then backward per class) so the shared
    encoder's layer caches are consumed before the next class overwrites them.
    """
    if set(batches) != set(model.classes):
        raise ValueError(f"need one batch per class {model.classes}, got {sorted(batches)}")
    sizes = {len(b) for b in batches.values()}
    if len(sizes) != 1:
        raise ValueError(f"class batches must have equal size, got {sorted(sizes)}")
    if backward:
        model.zero_grad()
    total = 0.0
    for c in model.classes:
        total += class_reconstruction_loss(model, c, batches[c], train=train, backward=backward)
    return total


def train(model: MultiDecoderModel, data: dict[str, np.ndarray],
          cfg: TrainConfig, log=None) -> list[float]:
    """Train in place; returns per-epoch mean losses (also appended to the model).

    ``data`` maps each class to images [n, 1, H, H] in [0, 1].  Every epoch
    reshuffles each class stream independently and draws aligned batch triples;
    epoch length is min-class-size // batch_size unless capped.
    """
    if set(data) != set(model.classes):
        raise ValueError(f"need one dataset per class {model.classes}, got {sorted(data)}")
    n = cfg.batch_size
    sizes = {c: len(v) for c, v in data.items()}
    too_small = {c: s for c, s in sizes.items() if s < n}
    if too_small:
        raise ValueError(f"class datasets smaller than batch_size={n}: {too_small}")

    arrays = {c: np.ascontiguousarray(v, dtype=model.dtype) for c, v in data.items()}
    steps = min(sizes.values()) // n
    if cfg.steps_per_epoch is not None:
        steps = min(steps, cfg.steps_per_epoch)
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(model, cfg)

    history: list[float] = []
    for epoch in range(cfg.epochs):
        if cfg.shuffle:
            order = {c: rng.permutation(sizes[c]) for c in model.classes}
        else:
            order = {c: np.arange(sizes[c]) for c in model.classes}
        epoch_loss = 0.0
        for step in range(steps):
            batches = {
                c: arrays[c][order[c][step * n : (step + 1) * n]]
                for c in model.classes
            }
            loss = loss_eq1(model, batches, train=True, backward=True)
            optimizer.step()
            epoch_loss += loss
        mean_loss = epoch_loss / max(steps, 1)
        history.append(mean_loss)
        model.epoch += 1
        model.loss_history.append(mean_loss)
        if log is not None:
            log(f"epoch {model.epoch:3d}  steps {steps}  loss {mean_loss:.6f}")
    return history
