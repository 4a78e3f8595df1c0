"""Quality-guided semi-supervised training on real plus synthetic data.

Warm-up epochs fit the task head and the one-vs-all detectors on labeled
real batches, while unlabeled synthetic batches contribute a
noise-consistency term and a detector-entropy term.  Afterwards, each
epoch re-scores every synthetic sample: the task head proposes a class,
that class's detector decides whether the sample is an inlier, and
accepted samples are trained against their pseudo-label under strong
augmentation.

Synthetic generation conditions are never read here.  ``latent`` labels
are only used to log pseudo-label precision.
"""

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import TrainingDivergence
from .losses import l_cons, l_ent, l_ova, l_pseu_from_output, l_task  # noqa: F401
from .testbed import Dataset, augment_strong, augment_weak
from .training import LOSS_KEYS, REAL_STREAM, TrainConfig, _Cycler, stream  # noqa: F401

HISTORY_COLUMNS = ("epoch", "l_task", "l_ova", "l_cons", "l_ent", "l_pseu",
                   "inlier_count", "inlier_precision", "test_accuracy")


@dataclass
class InlierSet:
    indices: np.ndarray
    pseudo_labels: np.ndarray
    acceptance_probs: np.ndarray
    n_total: int = 0

    def __len__(self):
        return int(self.indices.size)

    def label_map(self):
        return dict(zip(self.indices.tolist(), self.pseudo_labels.tolist()))

    def precision(self, latent):
        """Fraction of pseudo-labels matching the latent generating class."""
        if len(self) == 0:
            return float("nan")
        return float(np.mean(self.pseudo_labels == np.asarray(latent)[self.indices]))


def _features(data):
    return data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)


def assign_pseudo_labels(state, synthetic, tau):
    """argmax class from the task head; accept iff that class's detector
    gives p_inlier >= tau.  Ties resolve to the lowest class index."""
    x = _features(synthetic)
    n = x.shape[0]
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return InlierSet(empty, empty, np.zeros(0), 0)
    out = nn.forward(state, x)
    yhat = np.argmax(out.task_probs, axis=1)
    p_in = out.detector_probs[np.arange(n), yhat, 0]
    keep = np.flatnonzero(p_in >= tau)
    return InlierSet(keep, yhat[keep], p_in[keep], n)


def l_pseu(state, inliers, synthetic, strong_aug, seed):
    """Cross-entropy of strongly augmented inliers against their pseudo-labels.

    ``strong_aug`` is (scale_range, mask_fraction).  Empty sets give 0.
    """
    if len(inliers) == 0:
        return 0.0
    scale, mask = strong_aug
    xa = augment_strong(_features(synthetic)[inliers.indices], scale, mask, seed)
    return l_pseu_from_output(nn.forward(state, xa), inliers.pseudo_labels)


@dataclass
class EpochRecord:
    epoch: int
    l_task: float
    l_ova: float
    l_cons: float
    l_ent: float
    l_pseu: float
    inlier_count: int
    inlier_precision: float
    test_accuracy: float
    total: float = 0.0
    lr: float = 0.0


@dataclass
class History:
    epochs: list = field(default_factory=list)
    steps: list = field(default_factory=list)      # per-step component dicts, if requested
    final_inliers: InlierSet = None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for rec in self.epochs:
                d = asdict(rec)
                w.writerow([_fmt(d[c]) for c in HISTORY_COLUMNS])

    def rows(self):
        return [asdict(r) for r in self.epochs]


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "nan" if v != v else repr(float(v))


def _accuracy(state, data):
    return float(np.mean(nn.predict(state, data.features) == data.conditions))


def train_syncheck(real, synthetic, model_config, train_config, real_test=None,
                   record_steps=False):
    """Two-phase training; returns (ModelState, History)."""
    train_config.check_two_phase()
    cfg = train_config
    lam = cfg.weights
    xr, yr = real.features, real.conditions
    xs = synthetic.features
    latent = synthetic.latent
    n_r, n_s = xr.shape[0], xs.shape[0]

    state = nn.init_model(model_config)
    real_cyc = _Cycler(n_r, stream(cfg.seed, REAL_STREAM))
    syn_cyc = _Cycler(n_s, stream(cfg.seed, 12)) if n_s else None
    weak_rng = stream(cfg.seed, 13)
    strong_rng = stream(cfg.seed, 14)
    bs = cfg.batch_size
    steps_per_epoch = -(-max(n_r, n_s) // bs)
    history = History()

    accepted = np.zeros(n_s, dtype=bool)
    pseudo = np.zeros(n_s, dtype=np.int64)
    inliers = None
    for epoch in range(cfg.epochs_total):
        lr = cfg.lr_at(epoch)
        phase2 = epoch >= cfg.warmup_epochs
        if phase2 and n_s and (inliers is None or cfg.refresh_pseudo_labels):
            inliers = assign_pseudo_labels(state, xs, cfg.inlier_threshold)
            accepted[:] = False
            accepted[inliers.indices] = True
            pseudo[inliers.indices] = inliers.pseudo_labels
        sums = dict.fromkeys(LOSS_KEYS, 0.0)
        for step in range(steps_per_epoch):
            comp = dict.fromkeys(LOSS_KEYS, 0.0)
            ridx = real_cyc.take(bs)
            specs = [nn.LossSpec("task", labels=yr[ridx], weight=lam["task"])]
            if not cfg.drop_ova:
                specs.append(nn.LossSpec("ova", labels=yr[ridx], weight=lam["ova"]))
            vals, grad = nn.value_and_grad_many(state, xr[ridx], specs)
            for s, v in zip(specs, vals):
                comp[s.name] = v

            if n_s:
                sidx = syn_cyc.take(bs)
                xb = xs[sidx]
                if not cfg.drop_cons_ent:
                    twin = augment_weak(xb, cfg.weak_noise_std, weak_rng)
                    specs = [nn.LossSpec("cons", twin=twin, weight=lam["cons"]),
                             nn.LossSpec("ent", weight=lam["ent"])]
                    vals, g = nn.value_and_grad_many(state, xb, specs)
                    grad += g
                    comp["cons"], comp["ent"] = vals
                if phase2:
                    acc = sidx[accepted[sidx]]
                    if acc.size:
                        xa = augment_strong(xs[acc], cfg.strong_scale, cfg.strong_mask, strong_rng)
                        v, g = nn.value_and_grad(
                            state, xa, nn.LossSpec("pseu", labels=pseudo[acc], weight=1.0))
                        grad += lam["pseu"] * g
                        comp["pseu"] = v

            total = sum(lam[k] * comp[k] for k in LOSS_KEYS)
            if not np.isfinite(total):
                raise TrainingDivergence(
                    f"non-finite loss in epoch {epoch + 1}, step {step + 1}: {comp}")
            try:
                state = nn.sgd_step(state, grad, lr, cfg.momentum)
            except TrainingDivergence as exc:
                raise TrainingDivergence(f"epoch {epoch + 1}, step {step + 1}: {exc}") from exc
            for k in LOSS_KEYS:
                sums[k] += comp[k]
            if record_steps:
                history.steps.append(dict(comp, total=total, epoch=epoch + 1))

        means = {k: sums[k] / steps_per_epoch for k in LOSS_KEYS}
        if phase2 and inliers is not None:
            count, prec = len(inliers), inliers.precision(latent)
        else:
            count, prec = 0, float("nan")
        test_acc = _accuracy(state, real_test) if real_test is not None else float("nan")
        history.epochs.append(EpochRecord(
            epoch + 1, means["task"], means["ova"], means["cons"], means["ent"], means["pseu"],
            count, prec, test_acc, sum(lam[k] * means[k] for k in LOSS_KEYS), lr))

    history.final_inliers = assign_pseudo_labels(state, xs, cfg.inlier_threshold)
    return state, history


def filtered_dataset(synthetic, inliers):
    """Accepted synthetic samples with pseudo-labels in place of conditions."""
    sub = synthetic.subset(inliers.indices)
    return sub.relabel(inliers.pseudo_labels)
