"""Margin-based affinity (TR) and diversity (TS) scores.

A model trained on one side (real for TR, synthetic for TS) is evaluated
on the other; the resulting margin distribution is shifted by the gap
between the train-set mean margin and a held-in standard-test mean
margin, then compared to the train margins with Jensen-Shannon
divergence.  Smaller is better; the maximum is ln 2.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, nn
from .errors import ContractError, ShapeError
from .training import fit_supervised, stream

NBINS = 64
EDGES = np.linspace(-1.0, 1.0, NBINS + 1)
STANDARD_TEST_FRACTION = 0.10
LN2 = float(np.log(2.0))


def margin(probs, label):
    """Confidence of ``label`` minus the largest other confidence."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size < 2:
        raise ContractError("margin needs a probability vector over >= 2 classes")
    if not 0 <= label < probs.size:
        raise ContractError("label out of range")
    return float(probs[label] - np.delete(probs, label).max())


@dataclass
class MarginRecords:
    """Per-sample margins, structure-of-arrays."""

    margins: np.ndarray
    labels: np.ndarray
    role: str
    class_trained: np.ndarray = None

    def __post_init__(self):
        self.margins = np.asarray(self.margins, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.class_trained is None:
            self.class_trained = np.ones(self.margins.shape, dtype=bool)

    def __len__(self):
        return self.margins.shape[0]

    def select(self, mask):
        return MarginRecords(self.margins[mask], self.labels[mask], self.role,
                             self.class_trained[mask])


def collect_margins(state, dataset, role, labels=None, trained_classes=None):
    """One margin per sample; labels default to the dataset's conditions."""
    if dataset.feature_dim != state.config.input_dim:
        raise ShapeError(
            f"dataset has {dataset.feature_dim} features, model expects "
            f"{state.config.input_dim}"
        )
    labels = dataset.conditions if labels is None else np.asarray(labels, dtype=np.int64)
    if len(dataset) == 0:
        return MarginRecords(np.zeros(0), np.zeros(0, dtype=np.int64), role)
    probs = nn.forward(state, dataset.features).task_probs
    m = _kernels.margins(np.ascontiguousarray(probs), labels)
    trained = None
    if trained_classes is not None:
        trained = np.isin(labels, np.asarray(sorted(trained_classes), dtype=np.int64))
    return MarginRecords(m, labels, role, trained)


def calibrate(train, standard_test, test):
    """Shift test margins by mean(train) - mean(standard_test), clamp to [-1, 1]."""
    if len(train) == 0 or len(standard_test) == 0 or len(test) == 0:
        raise ContractError("calibration needs non-empty train, standard-test and test margins")
    offset = float(train.margins.mean() - standard_test.margins.mean())
    shifted = np.clip(test.margins + offset, -1.0, 1.0)
    return MarginRecords(shifted, test.labels, test.role, test.class_trained), offset


@dataclass
class MarginDistribution:
    bin_edges: np.ndarray
    counts: np.ndarray
    mean: float
    calibration_offset: float = 0.0

    @property
    def n(self):
        return int(self.counts.sum())

    def normalized(self):
        return self.counts / self.counts.sum()


def histogram(records, edges=EDGES, calibration_offset=0.0):
    """Uniform bins over [-1, 1]; +1 falls in the last bin."""
    values = records.margins if isinstance(records, MarginRecords) else np.asarray(records, float)
    if values.size == 0:
        raise ContractError("histogram of an empty margin set")
    counts = _kernels.histogram_counts(np.ascontiguousarray(values), np.asarray(edges, float))
    return MarginDistribution(np.asarray(edges, float), counts, float(values.mean()),
                              float(calibration_offset))


def _kl_to_mix(a, m):
    nz = a > 0
    return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))


def js_divergence(p, q):
    """Jensen-Shannon divergence (natural log) of two binned distributions."""
    if not np.array_equal(p.bin_edges, q.bin_edges):
        raise ContractError("histograms use different bin edges")
    if p.n == 0 or q.n == 0:
        raise ContractError("JS divergence of an empty histogram")
    a, b = p.normalized(), q.normalized()
    m = 0.5 * (a + b)
    # rounding can leave the sum an ulp outside [0, ln 2] (e.g. disjoint supports)
    return min(max(0.5 * (_kl_to_mix(a, m) + _kl_to_mix(b, m)), 0.0), LN2)


def pearson(xs, ys):
    """Sample Pearson r and its t statistic r * sqrt((n-2)/(1-r^2))."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError("pearson needs two 1-D sequences of equal length")
    n = x.size
    if n < 3:
        raise ContractError("pearson needs at least 3 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ContractError("correlation undefined: zero variance")
    r = float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        return r, float(np.copysign(np.inf, r))
    return r, float(r * np.sqrt((n - 2) / (1.0 - r * r)))


def split_standard_test(n, seed, fraction=STANDARD_TEST_FRACTION):
    """Seeded shuffle; returns (fit indices, standard-test indices)."""
    order = stream(seed, 7).permutation(n)
    k = max(1, int(round(fraction * n)))
    if k >= n:
        raise ContractError("training set too small to reserve a standard-test slice")
    return np.sort(order[k:]), np.sort(order[:k])


@dataclass
class QualityPart:
    """Outcome of one TR or TS evaluation."""

    setup: str
    js: float
    js_raw: float
    offset: float
    per_class_js: dict
    n_train: int
    n_test: int
    train_hist: MarginDistribution = field(repr=False)
    test_hist: MarginDistribution = field(repr=False)
    test_hist_raw: MarginDistribution = field(repr=False)
    trained_classes: tuple = ()
    state: object = field(default=None, repr=False)


def _score(setup, state, train_x, train_y, std_x, std_y, test_ds, test_labels, trained):
    from .testbed import Dataset

    tr = collect_margins(state, Dataset(train_x, train_y, train_y, np.zeros(len(train_y))),
                         "train", trained_classes=trained)
    st = collect_margins(state, Dataset(std_x, std_y, std_y, np.zeros(len(std_y))),
                         "standard_test", trained_classes=trained)
    te = collect_margins(state, test_ds, "test", labels=test_labels, trained_classes=trained)
    if len(te) == 0:
        raise ContractError("no test samples to score")
    cal, offset = calibrate(tr, st, te)
    h_tr = histogram(tr)
    h_cal = histogram(cal, calibration_offset=offset)
    h_raw = histogram(te)
    per_class = {}
    for c in np.unique(cal.labels):
        sel = cal.select(cal.labels == c)
        per_class[int(c)] = js_divergence(h_tr, histogram(sel, calibration_offset=offset))
    return QualityPart(setup, js_divergence(h_tr, h_cal), js_divergence(h_tr, h_raw), offset,
                       per_class, len(tr) + len(st), len(te), h_tr, h_cal, h_raw,
                       tuple(sorted(trained)), state)


def tr_quality(real_train, synthetic, model_config, train_config):
    """Affinity: train on real, score synthetic samples against their conditions."""
    fit_idx, std_idx = split_standard_test(len(real_train), train_config.seed)
    x, y = real_train.features, real_train.conditions
    state = fit_supervised(x[fit_idx], y[fit_idx], model_config, train_config)
    trained = set(np.unique(y[fit_idx]).tolist())
    return _score("tr", state, x[fit_idx], y[fit_idx], x[std_idx], y[std_idx],
                  synthetic, synthetic.conditions, trained)


def ts_quality(synthetic, real_test, model_config, train_config):
    """Diversity: train on synthetic (conditions as labels), score real test data."""
    fit_idx, std_idx = split_standard_test(len(synthetic), train_config.seed)
    x, y = synthetic.features, synthetic.conditions
    state = fit_supervised(x[fit_idx], y[fit_idx], model_config, train_config)
    trained = set(np.unique(y).tolist())
    return _score("ts", state, x[fit_idx], y[fit_idx], x[std_idx], y[std_idx],
                  real_test, real_test.conditions, trained)


@dataclass
class QualityReport:
    tr: QualityPart
    ts: QualityPart

    @property
    def js_tr(self):
        return self.tr.js

    @property
    def js_ts(self):
        return self.ts.js

    def to_dict(self):
        return {
            "js_tr": self.tr.js,
            "js_ts": self.ts.js,
            "js_tr_uncalibrated": self.tr.js_raw,
            "js_ts_uncalibrated": self.ts.js_raw,
            "offset_tr": self.tr.offset,
            "offset_ts": self.ts.offset,
            "per_class_js": {
                "tr": {str(k): v for k, v in sorted(self.tr.per_class_js.items())},
                "ts": {str(k): v for k, v in sorted(self.ts.per_class_js.items())},
            },
            "ts_trained_classes": list(self.ts.trained_classes),
            "n_train": {"tr": self.tr.n_train, "ts": self.ts.n_train},
            "n_test": {"tr": self.tr.n_test, "ts": self.ts.n_test},
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def write_histogram_csv(part, path):
    """bin_left, bin_right, count_train, count_test_calibrated (+ raw counts)."""
    edges = part.train_hist.bin_edges
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count_train", "count_test_calibrated",
                    "count_test_raw"])
        for i in range(len(edges) - 1):
            w.writerow([f"{edges[i]:.6f}", f"{edges[i + 1]:.6f}", int(part.train_hist.counts[i]),
                        int(part.test_hist.counts[i]), int(part.test_hist_raw.counts[i])])
