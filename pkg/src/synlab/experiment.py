"""Testbed presets and single-run orchestration shared by the CLI and tests."""

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import baselines
from .errors import ConfigError
from .nn import ModelConfig
from .quality import QualityReport, tr_quality, ts_quality
from .testbed import GeneratorSpec, RealSpec, make_real_dataset, sample_synthetic
from .training import TrainConfig

# Quality probes train briefly: a memorising model's train margins pile up at
# +1 and no mean shift can line them up with held-out margins.
QUALITY_TRAIN = TrainConfig(epochs_total=10, lr_decay_interval=4)

STRATEGIES = ("real_only", "mixture", "ssim_filter", "trts_filter", "syncheck",
              "filter_condlabel")

# partial coverage + feature noise; in-domain: full coverage + mislabeling
PRESETS = {
    "cross_domain": dict(class_coverage=(0, 1, 2, 3, 4), affinity_noise_std=0.05,
                         label_corruption_rate=0.2),
    "in_domain": dict(class_coverage=None, affinity_noise_std=0.0,
                      label_corruption_rate=0.3),
    "custom": dict(),
}


@dataclass(frozen=True)
class TestbedConfig:
    num_classes: int = 6
    feature_dim: int = 16
    modes_per_class: int = 3
    mode_separation: float = 1.125
    within_mode_std: float = 0.25
    n_real: int = 2000
    n_test: int = 2000
    volume: float = 1.0
    affinity_noise_std: float = 0.0
    label_corruption_rate: float = 0.0
    class_coverage: tuple = None
    mode_dropout: float = 0.0
    conditional: bool = True
    world_seed: int = 0

    __test__ = False

    def __post_init__(self):
        if self.volume < 0:
            raise ConfigError("volume must be non-negative")
        if self.n_real < 2 or self.n_test < 1:
            raise ConfigError("n_real must be >= 2 and n_test >= 1")
        if self.class_coverage is not None:
            object.__setattr__(self, "class_coverage", tuple(self.class_coverage))

    @classmethod
    def preset(cls, name, **overrides):
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
        known = {f.name for f in fields(cls)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown testbed keys: {sorted(unknown)}")
        return cls(**{**PRESETS[name], **overrides})

    def real_spec(self):
        return RealSpec(self.num_classes, self.feature_dim, self.modes_per_class, None,
                        self.mode_separation, self.within_mode_std, self.world_seed)

    def generator(self):
        return GeneratorSpec(self.real_spec(), self.affinity_noise_std,
                             self.label_corruption_rate, self.class_coverage,
                             self.mode_dropout, self.conditional, self.world_seed)

    def n_synthetic(self):
        return int(round(self.volume * self.n_real))

    def to_dict(self):
        d = asdict(self)
        if d["class_coverage"] is not None:
            d["class_coverage"] = list(d["class_coverage"])
        return d


@dataclass
class RunData:
    real_train: object
    real_test: object
    synthetic: object


def build_data(tb, seed):
    """Real train/test and synthetic draws for one seed.

    The mixture itself (mode centres, dropped modes) depends only on
    ``world_seed``; ``seed`` drives the samples.
    """
    spec = tb.real_spec()
    real = make_real_dataset(spec, tb.n_real, 3 * seed, "train")
    test = make_real_dataset(spec, tb.n_test, 3 * seed + 1, "test")
    syn = sample_synthetic(tb.generator(), tb.n_synthetic(), 3 * seed + 2, "train")
    return RunData(real, test, syn)


def input_scale_for(real):
    """1 / global std of the real training features (1.0 if degenerate)."""
    sd = float(np.std(real.features)) if len(real) else 0.0
    return 1.0 / sd if sd > 0 else 1.0


def model_config_for(tb, hidden_dims, seed, real=None):
    scale = 1.0 if real is None else input_scale_for(real)
    return ModelConfig(tb.feature_dim, tuple(hidden_dims), tb.num_classes, seed, scale)


def run_strategy(name, data, model_cfg, train_cfg, similarity_threshold=0.9, cache=None,
                 track_test=False):
    """One strategy on one seed's data.  ``cache`` shares models between
    strategies (real-only model for TRTS, SynCheck model for filter_condlabel)."""
    cache = {} if cache is None else cache
    real, test, syn = data.real_train, data.real_test, data.synthetic
    if name == "real_only":
        res = baselines.train_real_only(real, test, model_cfg, train_cfg)
        cache["real_state"] = res.state
        return res
    if name == "mixture":
        return baselines.train_mixture(real, syn, test, model_cfg, train_cfg)
    if name == "ssim_filter":
        filt = baselines.filter_similarity(real, syn, similarity_threshold)
        return baselines.train_filtered(real, filt, test, model_cfg, train_cfg, "ssim_filter")
    if name == "trts_filter":
        filt, state = baselines.filter_trts(real, syn, model_cfg, train_cfg,
                                            cache.get("real_state"))
        cache["real_state"] = state
        return baselines.train_filtered(real, filt, test, model_cfg, train_cfg, "trts_filter")
    if name == "syncheck":
        res = baselines.train_syncheck_strategy(real, syn, test, model_cfg, train_cfg,
                                                track_test)
        cache["syncheck_state"] = res.state
        return res
    if name == "filter_condlabel":
        state = cache.get("syncheck_state")
        if state is None:
            state = run_strategy("syncheck", data, model_cfg, train_cfg, cache=cache).state
        return baselines.filter_then_condition_label(real, syn, test, model_cfg, train_cfg,
                                                     state)
    raise ConfigError(f"unknown strategy {name!r}; expected one of {STRATEGIES}")


def quality_report(data, model_cfg, train_cfg, synthetic=None):
    """TR and TS scores; ``train_cfg`` is normally a seeded ``QUALITY_TRAIN``."""
    syn = data.synthetic if synthetic is None else synthetic
    return QualityReport(tr_quality(data.real_train, syn, model_cfg, train_cfg),
                         ts_quality(syn, data.real_test, model_cfg, train_cfg))


def with_seed(train_cfg, seed):
    return replace(train_cfg, seed=seed)


def axis_testbed(tb, axis, value):
    """Testbed for one sweep point; ablations other than ``unconditional``
    leave the data untouched."""
    if axis == "noise":
        return replace(tb, affinity_noise_std=float(value))
    if axis == "volume":
        return replace(tb, volume=float(value))
    if axis == "coverage":
        return replace(tb, class_coverage=tuple(value))
    if axis == "ablation":
        return replace(tb, conditional=False) if value == "unconditional" else tb
    raise ConfigError(f"unknown sweep axis {axis!r}")


def axis_train(train_cfg, axis, value):
    if axis == "ablation" and value in ("drop_ova", "drop_cons_ent"):
        return replace(train_cfg, **{value: True})
    return train_cfg


def value_label(axis, value):
    if axis == "coverage":
        return "|".join(str(c) for c in value)
    if axis == "ablation":
        return str(value)
    return repr(float(value))


def sweep_point(axis, value, seed, tb, hidden_dims, train_cfg, strategies,
                similarity_threshold=0.9, quality_cfg=QUALITY_TRAIN):
    """All rows for one (axis value, seed).

    Quality knob axes also score the synthetic set (js_tr, js_ts) and add a
    ``tstr`` row: the TS model's accuracy on real test data.  The ablation
    axis trains SynCheck only.  Failures become rows with a status message.
    """
    tb = axis_testbed(tb, axis, value)
    tc = with_seed(axis_train(train_cfg, axis, value), seed)
    data = build_data(tb, seed)
    mc = model_config_for(tb, hidden_dims, seed, data.real_train)
    label = value_label(axis, value)
    rows = []
    js_tr = js_ts = float("nan")

    def row(strategy, acc, status="ok"):
        return {"axis": axis, "value": label, "seed": seed, "strategy": strategy,
                "accuracy": acc, "js_tr": js_tr, "js_ts": js_ts, "status": status}

    if axis == "ablation":
        # conditions change only under "unconditional"; mixture shows the contrast
        strategies = ("syncheck", "mixture") if value == "unconditional" else ("syncheck",)
    elif len(data.synthetic):
        try:
            rep = quality_report(data, mc, with_seed(quality_cfg, seed))
            js_tr, js_ts = rep.js_tr, rep.js_ts
            rows.append(row("tstr", baselines.evaluate_accuracy(rep.ts.state, data.real_test)))
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            rows.append(row("tstr", float("nan"), _status(exc)))
    cache = {}
    for name in strategies:
        try:
            res = run_strategy(name, data, mc, tc, similarity_threshold, cache)
            rows.append(row(name, res.test_accuracy))
        except Exception as exc:  # noqa: BLE001
            rows.append(row(name, float("nan"), _status(exc)))
    return rows


def _status(exc):
    msg = str(exc).replace("\n", " ").replace(",", ";")
    return f"failed: {type(exc).__name__}: {msg}"[:200]
