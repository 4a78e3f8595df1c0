"""Exact checks of the train/test loss bounds on small discrete spaces.

Joints are |X| x |Y| probability tables.  Everything is computed by
enumeration, so no sampling error enters any comparison.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractError

MAX_X, MAX_Y = 16, 8
TOL = 1e-12


@dataclass(frozen=True)
class DiscreteJoint:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ContractError("joint must be a 2-D |X| x |Y| table")
        if p.shape[0] > MAX_X or p.shape[1] > MAX_Y:
            raise ContractError(f"joint larger than {MAX_X} x {MAX_Y}")
        if p.min() < 0 or abs(p.sum() - 1.0) > TOL:
            raise ContractError("joint must be non-negative and sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def shape(self):
        return self.probs.shape

    def px(self):
        return self.probs.sum(axis=1)

    def py(self):
        return self.probs.sum(axis=0)

    def y_given_x(self):
        """Rows with p(x) = 0 are left as zeros."""
        px = self.px()
        out = np.zeros_like(self.probs)
        nz = px > 0
        out[nz] = self.probs[nz] / px[nz, None]
        return out

    def x_given_y(self):
        py = self.py()
        out = np.zeros_like(self.probs)
        nz = py > 0
        out[:, nz] = self.probs[:, nz] / py[nz]
        return out


def random_joint(rng, nx, ny):
    """Symmetric Dirichlet(1) over the joint table."""
    return DiscreteJoint(rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny))


def random_matched_pair(rng, nx, ny):
    """Two joints sharing the label marginal p(y) but with independent p(x|y)."""
    p = random_joint(rng, nx, ny)
    cond = rng.dirichlet(np.ones(nx), size=ny).T          # columns are p_theta(x|y)
    q = cond * p.py()[None, :]
    return p, DiscreteJoint(q / q.sum())


def total_variation(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ContractError(f"support size mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def zero_one_loss(ny):
    return 1.0 - np.eye(ny)


def _loss_matrix(loss, ny):
    if loss is None:
        return zero_one_loss(ny)
    loss = np.asarray(loss, dtype=np.float64)
    if loss.shape != (ny, ny):
        raise ContractError("loss must be a |Y| x |Y| matrix L[y, y_hat]")
    return loss


def _expected(outer, inner_cond, classifier, loss):
    """sum_x outer(x) sum_y inner(y|x) L[y, f(x)], skipping outer(x) = 0."""
    classifier = np.asarray(classifier, dtype=np.int64)
    nx, ny = inner_cond.shape
    if classifier.shape != (nx,):
        raise ContractError("classifier must assign one label per x")
    L = _loss_matrix(loss, ny)
    total = 0.0
    for x in range(nx):
        if outer[x] > 0:
            total += outer[x] * float(inner_cond[x] @ L[:, classifier[x]])
    return total


def trts_expected_loss(p, p_theta, classifier, loss=None):
    """E_{p_theta(x)} E_{p(y|x)} L(y, f(x)): train on real, test on synthetic."""
    return _expected(p_theta.px(), p.y_given_x(), classifier, loss)


def tstr_expected_loss(p, p_theta, classifier, loss=None):
    """E_{p(x)} E_{p_theta(y|x)} L(y, f(x)): train on synthetic, test on real."""
    return _expected(p.px(), p_theta.y_given_x(), classifier, loss)


def bayes_classifier(joint, loss=None):
    """Pointwise argmin of E_{p(y|x)}[L(y, .)]; ties go to the lowest label."""
    L = _loss_matrix(loss, joint.shape[1])
    return np.argmin(joint.y_given_x() @ L, axis=1)


def bayes_risk(joint, loss=None):
    return _expected(joint.px(), joint.y_given_x(), bayes_classifier(joint, loss), loss)


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    holds: bool
    vacuous: bool = False

    @property
    def slack(self):
        return self.rhs - self.lhs


def tv_bound_check(p, p_theta, h, constant=2.0):
    """|E_{p_theta(x)} h - E_{p(x)} h| <= constant * TV(marginals) * sup|h|."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (p.shape[0],):
        raise ContractError("h must have one value per x")
    if h.min() < 0 or h.max() > 1:
        raise ContractError("h must be bounded in [0, 1]")
    lhs = abs(float(p_theta.px() @ h - p.px() @ h))
    rhs = constant * total_variation(p_theta.px(), p.px()) * float(np.abs(h).max())
    return BoundCheck(lhs, rhs, lhs <= rhs + TOL)


def conditional_tv_bound_check(p, p_theta):
    """TV(p_theta(x), p(x)) <= E_{p(y)} TV(p_theta(x|y), p(x|y)).

    A label with p(y) > 0 but p_theta(y) = 0 has no synthetic conditional;
    such instances are flagged vacuous rather than scored.
    """
    py, qy = p.py(), p_theta.py()
    if np.any((py > 0) & (qy <= 0)):
        return BoundCheck(np.nan, np.nan, True, vacuous=True)
    cp, cq = p.x_given_y(), p_theta.x_given_y()
    rhs = 0.0
    for y in range(p.shape[1]):
        if py[y] > 0:
            rhs += py[y] * total_variation(cq[:, y], cp[:, y])
    lhs = total_variation(p_theta.px(), p.px())
    return BoundCheck(lhs, rhs, lhs <= rhs + TOL)


def classifier_losses(outer, inner_cond, loss=None):
    """Expected loss of all |Y|^|X| classifiers (base-|Y| digit order)."""
    L = _loss_matrix(loss, inner_cond.shape[1])
    cost = np.ascontiguousarray(outer[:, None] * (inner_cond @ L))
    return _kernels.enumerate_classifier_losses(cost)


def decode_classifier(index, nx, ny):
    digits = np.empty(nx, dtype=np.int64)
    for x in range(nx - 1, -1, -1):
        digits[x] = index % ny
        index //= ny
    return digits


def lemma_optimality_check(joint, loss=None):
    """Pointwise-argmin classifier attains the minimum over all classifiers."""
    nx, ny = joint.shape
    if ny ** nx > 10 ** 6:
        raise ContractError("instance too large for exhaustive enumeration")
    all_losses = classifier_losses(joint.px(), joint.y_given_x(), loss)
    best = float(all_losses.min())
    pointwise = _expected(joint.px(), joint.y_given_x(), bayes_classifier(joint, loss), loss)
    return BoundCheck(pointwise, best, pointwise <= best + TOL)


def label_noise_mix(joint, rate):
    """Keep p(x); blend p(y|x) with the uniform label distribution at ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ContractError("rate must lie in [0, 1]")
    ny = joint.shape[1]
    cond = (1.0 - rate) * joint.y_given_x() + rate / ny
    q = joint.px()[:, None] * cond
    return DiscreteJoint(q / q.sum())


def noise_robustness_check(joint, rate):
    """TSTR-optimal decisions under label noise match the clean Bayes decisions.

    Only x with a unique argmax of p(y|x) (and p(x) > 0) are compared.
    Returns (n_compared, n_agree).
    """
    noisy = label_noise_mix(joint, rate)
    cond = joint.y_given_x()
    clean = bayes_classifier(joint)
    tstr_opt = np.argmin(noisy.y_given_x() @ zero_one_loss(joint.shape[1]), axis=1)
    srt = np.sort(cond, axis=1)
    unique = (joint.px() > 0) & (srt[:, -1] - srt[:, -2] > 1e-9)
    return int(unique.sum()), int((clean[unique] == tstr_opt[unique]).sum())


class _Tally:
    def __init__(self, asserted=True):
        self.n = self.failed = self.vacuous = 0
        self.worst = np.inf
        self.asserted = asserted

    def add(self, check):
        if check.vacuous:
            self.vacuous += 1
            return
        self.n += 1
        self.failed += not check.holds
        self.worst = min(self.worst, check.slack)

    def to_dict(self):
        return {
            "n": self.n,
            "passed": self.n - self.failed,
            "failed": self.failed,
            "vacuous": self.vacuous,
            "worst_slack": None if self.n == 0 else float(self.worst),
            "asserted": self.asserted,
        }


def load_instances(path):
    """Read hand-written TV-bound instances.

    File layout: {"tv_constant": c (optional), "instances": [{"p": [[..]],
    "p_theta": [[..]], "h": [..]}, ...]}.  Returns (triples, constant or None).
    """
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or set(doc) - {"tv_constant", "instances"}:
        raise ContractError(f"{path}: expected keys tv_constant, instances")
    triples = []
    for i, inst in enumerate(doc.get("instances", [])):
        if set(inst) != {"p", "p_theta", "h"}:
            raise ContractError(f"{path}: instance {i} needs exactly p, p_theta, h")
        triples.append((DiscreteJoint(np.array(inst["p"], dtype=np.float64)),
                        DiscreteJoint(np.array(inst["p_theta"], dtype=np.float64)),
                        np.array(inst["h"], dtype=np.float64)))
    const = doc.get("tv_constant")
    return triples, None if const is None else float(const)


def verify_all(n_instances=1000, seed=0, tv_constant=2.0, lemma_per_grid=25,
               noise_rates=(0.1, 0.25, 0.5), extra_instances=(), extra_constant=None):
    """Run every bound/optimality check; returns a JSON-ready summary.

    ``extra_instances`` is an iterable of (p, p_theta, h) triples checked
    against the TV bound with ``extra_constant`` (default ``tv_constant``).
    """
    rng = np.random.default_rng(seed)
    tallies = {
        "tv_bound": _Tally(),
        "tv_bound_zero_one": _Tally(),
        "conditional_tv": _Tally(),
        "conditional_tv_unmatched_prior": _Tally(asserted=False),
        "lemma_optimality": _Tally(),
        "noise_robustness": _Tally(),
        "extra_instances": _Tally(),
    }
    for _ in range(n_instances):
        nx, ny = int(rng.integers(2, MAX_X + 1)), int(rng.integers(2, MAX_Y + 1))
        p, q = random_joint(rng, nx, ny), random_joint(rng, nx, ny)
        tallies["tv_bound"].add(tv_bound_check(p, q, rng.random(nx), tv_constant))
        f = rng.integers(ny, size=nx)
        # h(x) = E_{p(y|x)}[0-1 loss of f(x)]
        h01 = np.clip(1.0 - p.y_given_x()[np.arange(nx), f], 0.0, 1.0)
        tallies["tv_bound_zero_one"].add(tv_bound_check(p, q, h01, tv_constant))
        pm, qm = random_matched_pair(rng, nx, ny)
        tallies["conditional_tv"].add(conditional_tv_bound_check(pm, qm))
        tallies["conditional_tv_unmatched_prior"].add(conditional_tv_bound_check(p, q))
    for nx in range(1, 5):
        for ny in range(2, 4):
            for _ in range(lemma_per_grid):
                tallies["lemma_optimality"].add(lemma_optimality_check(random_joint(rng, nx, ny)))
    for _ in range(n_instances // 10):
        joint = random_joint(rng, int(rng.integers(2, 9)), int(rng.integers(2, 6)))
        for rate in noise_rates:
            n, agree = noise_robustness_check(joint, rate)
            tallies["noise_robustness"].add(BoundCheck(float(n - agree), 0.0, n == agree))
    c_extra = tv_constant if extra_constant is None else extra_constant
    for p, q, h in extra_instances:
        tallies["extra_instances"].add(tv_bound_check(p, q, h, c_extra))

    checks = {k: t.to_dict() for k, t in tallies.items()}
    all_hold = all(c["failed"] == 0 for c in checks.values() if c["asserted"])
    return {
        "seed": int(seed),
        "n_instances": int(n_instances),
        "tv_constant": float(tv_constant),
        "extra_constant": float(c_extra),
        "checks": checks,
        "all_hold": bool(all_hold),
    }
