"""Experiment configuration: one JSON document, unknown keys rejected.

Layout (every section optional)::

    {
      "preset": "in_domain",
      "testbed": {... TestbedConfig overrides ...},
      "model": {"hidden_dims": [64]},
      "train": {... TrainConfig fields ...},
      "quality_train": {... TrainConfig fields for the TR/TS probes ...},
      "strategies": ["real_only", "mixture", ...],
      "similarity_threshold": 0.9,
      "seeds": [0, 1, 2, 3, 4],
      "sweep": {"strategies": [...], "noise": [...], "volume": [...],
                "coverage": [[...], ...], "ablation": [...]},
      "verify": {"n_instances": 1000, "seed": 0, "tv_constant": 2.0,
                 "lemma_per_grid": 25, "noise_rates": [...], "instances_file": null},
      "out": "runs/example"
    }
"""

import hashlib
import json
from dataclasses import dataclass, field, fields, replace

from . import __version__
from .errors import ConfigError
from .experiment import PRESETS, QUALITY_TRAIN, STRATEGIES, TestbedConfig
from .training import TrainConfig

TOP_KEYS = ("preset", "testbed", "model", "train", "quality_train", "strategies", "similarity_threshold",
            "seeds", "sweep", "verify", "out")
SWEEP_AXES = ("noise", "volume", "coverage", "ablation")
ABLATIONS = ("full", "drop_ova", "drop_cons_ent", "unconditional")
DEFAULT_STRATEGIES = ("real_only", "mixture", "ssim_filter", "trts_filter", "syncheck")
VERIFY_KEYS = ("n_instances", "seed", "tv_constant", "lemma_per_grid", "noise_rates",
               "instances_file")


def _strict(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _strategies(names, where):
    if not isinstance(names, (list, tuple)) or not names:
        raise ConfigError(f"{where} must be a non-empty list")
    bad = [s for s in names if s not in STRATEGIES]
    if bad:
        raise ConfigError(f"unknown strategies in {where}: {bad}; expected {list(STRATEGIES)}")
    return tuple(names)


@dataclass(frozen=True)
class SweepConfig:
    strategies: tuple = ("real_only", "mixture", "syncheck")
    noise: tuple = None
    volume: tuple = None
    coverage: tuple = None
    ablation: tuple = None

    @classmethod
    def from_dict(cls, d):
        _strict(d, ("strategies",) + SWEEP_AXES, "sweep")
        kw = {}
        if "strategies" in d:
            kw["strategies"] = _strategies(d["strategies"], "sweep.strategies")
        for axis in SWEEP_AXES:
            if axis not in d:
                continue
            vals = d[axis]
            if not isinstance(vals, list) or not vals:
                raise ConfigError(f"sweep axis {axis!r} must be a non-empty list")
            if axis in ("noise", "volume"):
                vals = tuple(float(v) for v in vals)
                if min(vals) < 0:
                    raise ConfigError(f"sweep axis {axis!r} values must be non-negative")
            elif axis == "coverage":
                if not all(isinstance(v, list) and v for v in vals):
                    raise ConfigError("coverage axis entries must be non-empty class lists")
                vals = tuple(tuple(int(c) for c in v) for v in vals)
            else:
                bad = [v for v in vals if v not in ABLATIONS]
                if bad:
                    raise ConfigError(f"unknown ablations {bad}; expected {list(ABLATIONS)}")
                vals = tuple(vals)
            kw[axis] = vals
        return cls(**kw)

    def axes(self):
        return [a for a in SWEEP_AXES if getattr(self, a) is not None]

    def to_dict(self):
        d = {"strategies": list(self.strategies)}
        for a in self.axes():
            v = getattr(self, a)
            d[a] = [list(x) for x in v] if a == "coverage" else list(v)
        return d


@dataclass(frozen=True)
class VerifyConfig:
    n_instances: int = 1000
    seed: int = 0
    tv_constant: float = 2.0
    lemma_per_grid: int = 25
    noise_rates: tuple = (0.1, 0.25, 0.5)
    instances_file: str = None

    @classmethod
    def from_dict(cls, d):
        _strict(d, VERIFY_KEYS, "verify")
        d = dict(d)
        if "noise_rates" in d:
            d["noise_rates"] = tuple(float(r) for r in d["noise_rates"])
        cfg = cls(**d)
        if cfg.n_instances < 1 or cfg.lemma_per_grid < 1:
            raise ConfigError("verify counts must be >= 1")
        return cfg

    def to_dict(self):
        return {f.name: (list(getattr(self, f.name)) if f.name == "noise_rates"
                         else getattr(self, f.name)) for f in fields(self)}


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "in_domain"
    testbed: TestbedConfig = None
    hidden_dims: tuple = (64,)
    train: TrainConfig = field(default_factory=TrainConfig)
    quality_train: TrainConfig = QUALITY_TRAIN
    strategies: tuple = DEFAULT_STRATEGIES
    similarity_threshold: float = 0.9
    seeds: tuple = (0, 1, 2, 3, 4)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    out: str = "runs/default"

    @classmethod
    def from_dict(cls, d):
        _strict(d, TOP_KEYS, "config")
        preset = d.get("preset", "in_domain")
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        tb_over = d.get("testbed", {})
        _strict(tb_over, [f.name for f in fields(TestbedConfig)], "testbed")
        try:
            testbed = TestbedConfig.preset(preset, **tb_over)
        except TypeError as exc:
            raise ConfigError(f"bad testbed value: {exc}") from exc
        model = d.get("model", {})
        _strict(model, ("hidden_dims",), "model")
        hidden = tuple(int(h) for h in model.get("hidden_dims", (64,)))
        if any(h < 1 for h in hidden):
            raise ConfigError("hidden_dims must be positive")
        train = _train_section(d, "train", {})
        qdefault = {"epochs_total": QUALITY_TRAIN.epochs_total,
                    "lr_decay_interval": QUALITY_TRAIN.lr_decay_interval}
        quality_train = _train_section(d, "quality_train", qdefault)
        strategies = _strategies(d.get("strategies", list(DEFAULT_STRATEGIES)), "strategies")
        thr = float(d.get("similarity_threshold", 0.9))
        if not 0.0 < thr < 1.0:
            raise ConfigError("similarity_threshold must lie in (0, 1)")
        seeds = d.get("seeds", [0, 1, 2, 3, 4])
        seeds = parse_seeds(seeds)
        sweep = SweepConfig.from_dict(d.get("sweep", {}))
        verify = VerifyConfig.from_dict(d.get("verify", {}))
        out = d.get("out", "runs/default")
        if not isinstance(out, str) or not out:
            raise ConfigError("out must be a non-empty path string")
        return cls(preset, testbed, hidden, train, quality_train, strategies, thr, seeds, sweep,
                   verify, out)

    def with_overrides(self, seeds=None, out=None):
        kw = {}
        if seeds is not None:
            kw["seeds"] = parse_seeds(seeds)
        if out is not None:
            kw["out"] = out
        return replace(self, **kw) if kw else self

    def to_dict(self):
        """Fully resolved config (defaults filled in)."""
        return {
            "preset": self.preset,
            "testbed": self.testbed.to_dict(),
            "model": {"hidden_dims": list(self.hidden_dims)},
            "train": _train_dict(self.train),
            "quality_train": _train_dict(self.quality_train),
            "strategies": list(self.strategies),
            "similarity_threshold": self.similarity_threshold,
            "seeds": list(self.seeds),
            "sweep": self.sweep.to_dict(),
            "verify": self.verify.to_dict(),
        }

    def config_hash(self):
        """sha256 over the resolved config; the output path is excluded."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256((__version__ + blob).encode()).hexdigest()[:16]


def _train_section(d, key, defaults):
    sec = d.get(key, {})
    _strict(sec, [f.name for f in fields(TrainConfig)], key)
    if "seed" in sec:
        raise ConfigError(f"{key}.seed is set per run from the seeds list")
    return TrainConfig.from_dict({**defaults, **sec})


def _train_dict(cfg):
    out = cfg.to_dict()
    out.pop("seed")
    out["loss_weights"] = list(out["loss_weights"])
    return out


def parse_seeds(seeds):
    if isinstance(seeds, str):
        try:
            seeds = [int(s) for s in seeds.replace(" ", "").split(",") if s]
        except ValueError as exc:
            raise ConfigError(f"bad seed list {seeds!r}") from exc
    if not isinstance(seeds, (list, tuple)) or not seeds:
        raise ConfigError("seeds must be a non-empty list of integers")
    if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in seeds):
        raise ConfigError("seeds must be non-negative integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    return tuple(seeds)


def load_config(path=None):
    if path is None:
        return ExperimentConfig.from_dict({})
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(d)
