"""Controllable real and synthetic data sources.

Real data is a class-conditional Gaussian mixture.  The synthetic source
draws from the same mixture and then degrades it with explicit knobs:
feature noise, label corruption, partial class coverage, mode dropout
and unconditional labelling.  Every sample carries its latent generating
class so evaluation code can score pseudo-labels; training code must only
see ``features`` (and ``conditions`` where the method is allowed to).
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ShapeError

SPLITS = ("train", "standard_test", "test")

# stream tags keep real and synthetic draws independent under equal seeds
_REAL_STREAM = 0x5EA1
_SYN_STREAM = 0x5F17


def as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class RealSpec:
    num_classes: int = 6
    feature_dim: int = 16
    modes_per_class: int = 3
    class_prior: tuple = None
    mode_separation: float = 1.125
    within_mode_std: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        if self.modes_per_class < 1:
            raise ConfigError("modes_per_class must be >= 1")
        if self.mode_separation <= 0 or self.within_mode_std <= 0:
            raise ConfigError("mode_separation and within_mode_std must be positive")
        prior = self.class_prior
        if prior is None:
            prior = (1.0 / self.num_classes,) * self.num_classes
        prior = tuple(float(p) for p in prior)
        if len(prior) != self.num_classes:
            raise ConfigError("class_prior length must equal num_classes")
        if min(prior) < 0 or abs(sum(prior) - 1.0) > 1e-12:
            raise ConfigError("class_prior must be a probability vector")
        object.__setattr__(self, "class_prior", prior)

    def centers(self):
        """Mode centres, shape (C, K, d).

        Scaled so the expected distance between two centres equals
        ``mode_separation``.
        """
        rng = np.random.default_rng([self.seed, 0xCE47])
        scale = self.mode_separation / np.sqrt(2.0 * self.feature_dim)
        return scale * rng.standard_normal(
            (self.num_classes, self.modes_per_class, self.feature_dim)
        )


@dataclass(frozen=True)
class GeneratorSpec:
    base: RealSpec = field(default_factory=RealSpec)
    affinity_noise_std: float = 0.0
    label_corruption_rate: float = 0.0
    class_coverage: tuple = None
    mode_dropout: float = 0.0
    conditional: bool = True
    seed: int = 0

    def __post_init__(self):
        cov = self.class_coverage
        if cov is None:
            cov = tuple(range(self.base.num_classes))
        cov = tuple(sorted({int(c) for c in cov}))
        if not cov:
            raise ConfigError("class_coverage must not be empty")
        if cov[0] < 0 or cov[-1] >= self.base.num_classes:
            raise ConfigError("class_coverage entries out of range")
        object.__setattr__(self, "class_coverage", cov)
        if self.affinity_noise_std < 0:
            raise ConfigError("affinity_noise_std must be >= 0")
        if not 0.0 <= self.label_corruption_rate <= 1.0:
            raise ConfigError("label_corruption_rate must lie in [0, 1]")
        if not 0.0 <= self.mode_dropout <= 1.0:
            raise ConfigError("mode_dropout must lie in [0, 1]")

    def kept_modes(self):
        """Boolean (C, K) mask of the modes this generator can emit."""
        k = self.base.modes_per_class
        n_drop = min(int(np.floor(self.mode_dropout * k)), k - 1)
        rng = np.random.default_rng([self.seed, 0xD209])
        mask = np.zeros((self.base.num_classes, k), dtype=bool)
        for c in self.class_coverage:
            keep = rng.permutation(k)[: k - n_drop]
            mask[c, keep] = True
        return mask


@dataclass
class Dataset:
    features: np.ndarray
    conditions: np.ndarray
    latent: np.ndarray
    synthetic: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError("features must be a 2-D array")
        n = self.features.shape[0]
        self.conditions = np.asarray(self.conditions, dtype=np.int64).reshape(n)
        self.latent = np.asarray(self.latent, dtype=np.int64).reshape(n)
        self.synthetic = np.asarray(self.synthetic, dtype=bool).reshape(n)
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}")

    def __len__(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def subset(self, idx, split=None):
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.conditions[idx], self.latent[idx],
                       self.synthetic[idx], split or self.split)

    def relabel(self, conditions):
        return replace(self, conditions=np.asarray(conditions, dtype=np.int64).copy())

    @classmethod
    def empty(cls, feature_dim, split="train"):
        return cls(np.zeros((0, feature_dim)), [], [], [], split)

    @staticmethod
    def concat(parts, split="train"):
        parts = list(parts)
        return Dataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.conditions for p in parts]),
            np.concatenate([p.latent for p in parts]),
            np.concatenate([p.synthetic for p in parts]),
            split,
        )

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for i in range(len(self)):
                row = {
                    "features": [float(v) for v in self.features[i]],
                    "condition": int(self.conditions[i]),
                    "latent": int(self.latent[i]),
                    "source": "synthetic" if self.synthetic[i] else "real",
                }
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def from_jsonl(cls, path, split="train", feature_dim=None):
        feats, cond, lat, syn = [], [], [], []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                row = json.loads(line)
                if set(row) != {"features", "condition", "latent", "source"}:
                    raise ConfigError(f"{path}:{lineno}: unexpected keys {sorted(row)}")
                if row["source"] not in ("real", "synthetic"):
                    raise ConfigError(f"{path}:{lineno}: bad source {row['source']!r}")
                feats.append(row["features"])
                cond.append(row["condition"])
                lat.append(row["latent"])
                syn.append(row["source"] == "synthetic")
        if not feats:
            if feature_dim is None:
                raise ConfigError(f"{path}: empty dataset needs an explicit feature_dim")
            return cls.empty(feature_dim, split)
        return cls(np.array(feats, dtype=np.float64), cond, lat, syn, split)


def make_real_dataset(spec, n, seed, split="train"):
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng([int(seed), _REAL_STREAM])
    centers = spec.centers()
    y = rng.choice(spec.num_classes, size=n, p=np.array(spec.class_prior))
    mode = rng.integers(spec.modes_per_class, size=n)
    x = centers[y, mode] + spec.within_mode_std * rng.standard_normal((n, spec.feature_dim))
    return Dataset(x, y, y, np.zeros(n, dtype=bool), split)


def sample_synthetic(gen, n, seed, split="train"):
    if n < 0:
        raise ConfigError("n must be >= 0")
    base = gen.base
    if n == 0:
        return Dataset.empty(base.feature_dim, split)
    rng = np.random.default_rng([int(seed), _SYN_STREAM])
    prior = np.zeros(base.num_classes)
    cov = np.array(gen.class_coverage)
    prior[cov] = np.array(base.class_prior)[cov]
    if prior.sum() <= 0:
        raise ConfigError("covered classes have zero prior mass")
    prior /= prior.sum()
    kept = gen.kept_modes()
    centers = base.centers()

    y = rng.choice(base.num_classes, size=n, p=prior)
    # uniform over this class's kept modes
    u = rng.random(n)
    n_kept = kept.sum(axis=1)[y]
    rank = np.minimum((u * n_kept).astype(np.int64), n_kept - 1)
    mode_order = np.argsort(~kept, axis=1, kind="stable")  # kept modes first
    mode = mode_order[y, rank]
    x = centers[y, mode] + base.within_mode_std * rng.standard_normal((n, base.feature_dim))
    if gen.affinity_noise_std > 0:
        x = x + gen.affinity_noise_std * rng.standard_normal((n, base.feature_dim))

    if gen.conditional:
        cond = y.copy()
        flip = rng.random(n) < gen.label_corruption_rate
        # uniform over the C-1 other classes
        shift = rng.integers(1, base.num_classes, size=n)
        cond[flip] = (y[flip] + shift[flip]) % base.num_classes
    else:
        cond = rng.choice(base.num_classes, size=n, p=np.array(base.class_prior))
    return Dataset(x, cond, y, np.ones(n, dtype=bool), split)


def augment_weak(x, noise_std, seed):
    """Additive isotropic Gaussian noise."""
    if noise_std < 0:
        raise ConfigError("noise_std must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if noise_std == 0:
        return x.copy()
    return x + noise_std * as_rng(seed).standard_normal(x.shape)


def augment_strong(x, scale_range, mask_fraction, seed):
    """Random global rescale in [1-a, 1+a], then zero floor(m*d) coordinates.

    Works on a single vector or row-wise on a batch.
    """
    if not 0.0 <= mask_fraction < 1.0:
        raise ConfigError("mask_fraction must lie in [0, 1)")
    if not 0.0 <= scale_range <= 1.0:
        raise ConfigError("scale_range must lie in [0, 1]")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    n, d = xb.shape
    rng = as_rng(seed)
    scale = rng.uniform(1.0 - scale_range, 1.0 + scale_range, size=(n, 1))
    out = xb * scale
    k = int(np.floor(mask_fraction * d))
    if k:
        drop = np.argsort(rng.random((n, d)), axis=1)[:, :k]
        np.put_along_axis(out, drop, 0.0, axis=1)
    return out[0] if single else out
