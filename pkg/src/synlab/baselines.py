"""Comparison strategies and accuracy evaluation.

All strategies report accuracy on real test data.  ``kept_fraction`` is
the share of synthetic samples a strategy trained on (0 for real-only).
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels, nn
from .errors import ContractError, ShapeError
from .syncheck import assign_pseudo_labels, train_syncheck
from .testbed import Dataset
from .training import fit_supervised

LEADERBOARD_COLUMNS = ("strategy", "seed", "accuracy", "kept_fraction", "config_hash", "status")


@dataclass
class StrategyResult:
    strategy: str
    test_accuracy: float
    kept_fraction: float
    seed: int
    state: object = None
    extra: dict = None


@dataclass
class FilterResult:
    dataset: Dataset
    kept_mask: np.ndarray

    @property
    def kept_fraction(self):
        n = self.kept_mask.size
        return float(self.kept_mask.sum() / n) if n else 0.0


def evaluate_accuracy(state, real_test):
    """Fraction of argmax predictions equal to the labels (ties -> lowest index)."""
    if len(real_test) == 0:
        raise ContractError("empty test set")
    if real_test.feature_dim != state.config.input_dim:
        raise ShapeError("test features do not match the model input width")
    return float(np.mean(nn.predict(state, real_test.features) == real_test.conditions))


def _fit(train, model_config, train_config):
    return fit_supervised(train.features, train.conditions, model_config, train_config)


def train_real_only(real, real_test, model_config, train_config):
    state = _fit(real, model_config, train_config)
    return StrategyResult("real_only", evaluate_accuracy(state, real_test), 0.0,
                          train_config.seed, state)


def train_mixture(real, synthetic, real_test, model_config, train_config, name="mixture"):
    """Union of real and synthetic data, conditions used as labels."""
    train = Dataset.concat([real, synthetic]) if len(synthetic) else real
    state = _fit(train, model_config, train_config)
    return StrategyResult(name, evaluate_accuracy(state, real_test),
                          1.0 if len(synthetic) else 0.0, train_config.seed, state)


def filter_similarity(real, synthetic, threshold):
    """Keep synthetic samples whose best cosine similarity to a real sample
    with the same condition reaches ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ContractError("similarity threshold must lie in (0, 1)")
    if len(synthetic) == 0:
        return FilterResult(synthetic, np.zeros(0, dtype=bool))
    best = _kernels.max_cosine_same_class(
        np.ascontiguousarray(synthetic.features), synthetic.conditions,
        np.ascontiguousarray(real.features), real.conditions)
    keep = best >= threshold
    return FilterResult(synthetic.subset(np.flatnonzero(keep)), keep)


def filter_trts(real, synthetic, model_config, train_config, state=None):
    """Keep synthetic samples whose real-trained prediction equals their condition.

    ``state`` lets callers reuse an existing real-data model.
    """
    if state is None:
        state = _fit(real, model_config, train_config)
    if len(synthetic) == 0:
        return FilterResult(synthetic, np.zeros(0, dtype=bool)), state
    keep = nn.predict(state, synthetic.features) == synthetic.conditions
    return FilterResult(synthetic.subset(np.flatnonzero(keep)), keep), state


def train_filtered(real, filtered, real_test, model_config, train_config, name):
    res = train_mixture(real, filtered.dataset, real_test, model_config, train_config, name)
    res.kept_fraction = filtered.kept_fraction
    return res


def train_syncheck_strategy(real, synthetic, real_test, model_config, train_config,
                            track_test=False):
    """``track_test`` logs per-epoch test accuracy in the history."""
    state, history = train_syncheck(real, synthetic, model_config, train_config,
                                    real_test=real_test if track_test else None)
    inl = history.final_inliers
    kept = len(inl) / len(synthetic) if len(synthetic) else 0.0
    return StrategyResult("syncheck", evaluate_accuracy(state, real_test), kept,
                          train_config.seed, state, {"history": history})


def filter_then_condition_label(real, synthetic, real_test, model_config, train_config,
                                syncheck_state):
    """SynCheck's inlier filter, but accepted samples keep their conditions as labels."""
    inl = assign_pseudo_labels(syncheck_state, synthetic, train_config.inlier_threshold)
    accepted = synthetic.subset(inl.indices)
    res = train_mixture(real, accepted, real_test, model_config, train_config,
                        "filter_condlabel")
    res.kept_fraction = len(inl) / len(synthetic) if len(synthetic) else 0.0
    return res


def append_leaderboard(path, rows):
    """Append rows (dicts keyed by LEADERBOARD_COLUMNS); header written once."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LEADERBOARD_COLUMNS)
        if new:
            w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in LEADERBOARD_COLUMNS})
