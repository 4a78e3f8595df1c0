"""Training configuration, learning-rate schedule and the plain supervised loop."""

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import nn
from .errors import ConfigError, TrainingDivergence

LOSS_KEYS = ("task", "ova", "cons", "ent", "pseu")
# every trainer draws its labelled batches from this stream, so strategies
# trained on the same seed see the same real batch sequence
REAL_STREAM = 11


@dataclass(frozen=True)
class TrainConfig:
    epochs_total: int = 50
    warmup_epochs: int = None          # default: 30% of epochs_total
    learning_rate: float = 0.1
    lr_decay_factor: float = 0.5
    lr_decay_interval: int = 17
    batch_size: int = 64
    momentum: float = 0.9
    loss_weights: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)   # task, ova, cons, ent, pseu
    inlier_threshold: float = 0.5
    weak_noise_std: float = 0.25
    strong_scale: float = 0.2
    strong_mask: float = 0.125
    refresh_pseudo_labels: bool = True
    drop_ova: bool = False
    drop_cons_ent: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.warmup_epochs is None:
            object.__setattr__(self, "warmup_epochs", max(1, round(0.3 * self.epochs_total)))
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
        if self.epochs_total < 0 or self.warmup_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if len(self.loss_weights) != 5 or min(self.loss_weights) <= 0:
            raise ConfigError("loss_weights must be five positive numbers")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ConfigError("learning_rate must be positive and batch_size >= 1")
        if not 0.0 < self.lr_decay_factor <= 1.0 or self.lr_decay_interval < 1:
            raise ConfigError("lr decay factor must lie in (0, 1], interval >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if not 0.0 < self.inlier_threshold < 1.0:
            raise ConfigError("inlier_threshold must lie in (0, 1)")
        if self.weak_noise_std < 0:
            raise ConfigError("weak_noise_std must be >= 0")
        if not 0.0 <= self.strong_mask < 1.0 or not 0.0 <= self.strong_scale <= 1.0:
            raise ConfigError("strong augmentation parameters out of range")

    def check_two_phase(self):
        if not 0 < self.warmup_epochs < self.epochs_total:
            raise ConfigError(
                f"need 0 < warmup_epochs < epochs_total, got "
                f"{self.warmup_epochs} / {self.epochs_total}"
            )

    def lr_at(self, epoch):
        """StepLR: decay by ``lr_decay_factor`` every ``lr_decay_interval`` epochs."""
        return self.learning_rate * self.lr_decay_factor ** (epoch // self.lr_decay_interval)

    @property
    def weights(self):
        return dict(zip(LOSS_KEYS, self.loss_weights))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def stream(seed, tag):
    """Independent generator for one consumer of a run's randomness."""
    return np.random.default_rng([int(seed), tag])


class _Cycler:
    """Endless reshuffled index stream over range(n)."""

    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, k):
        k = min(k, self.n)
        out = []
        while k:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            m = min(k, self.n - self.pos)
            out.append(self.order[self.pos:self.pos + m])
            self.pos += m
            k -= m
        return np.concatenate(out)


def fit_supervised(features, labels, model_config, train_config):
    """Minimise task cross-entropy with momentum SGD and StepLR."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    state = nn.init_model(model_config)
    n = features.shape[0]
    if n == 0:
        return state
    cyc = _Cycler(n, stream(train_config.seed, REAL_STREAM))
    bs = train_config.batch_size
    for epoch in range(train_config.epochs_total):
        lr = train_config.lr_at(epoch)
        for _ in range(-(-n // bs)):
            idx = cyc.take(bs)
            value, grad = nn.value_and_grad(
                state, features[idx], nn.LossSpec("task", labels=labels[idx])
            )
            if not np.isfinite(value):
                raise TrainingDivergence(f"non-finite task loss in epoch {epoch + 1}")
            state = nn.sgd_step(state, grad, lr, train_config.momentum)
    return state
