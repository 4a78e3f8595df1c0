"""MLP backbone with a task head and per-class one-vs-all detector heads.

Parameters live in one flat float64 vector laid out as

    backbone layer 0 (W, b), ..., backbone layer L-1 (W, b),
    task head (W: h x C, b: C),
    detector heads (W: h x 2C, b: 2C)

Detector j owns output columns (2j, 2j+1); column 2j is the inlier
channel and 2j+1 the outlier channel.
"""

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .errors import ConfigError, ContractError, ShapeError, TrainingDivergence

LOSS_NAMES = ("task", "ova", "cons", "ent", "pseu", "const")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dims: tuple = ()
    num_classes: int = 2
    seed: int = 0
    input_scale: float = 1.0     # fixed multiplier applied to inputs before layer 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "input_scale", float(self.input_scale))
        if not (np.isfinite(self.input_scale) and self.input_scale > 0):
            raise ConfigError(f"input_scale must be positive, got {self.input_scale}")
        if int(self.input_dim) < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if int(self.num_classes) < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden dims must be >= 1, got {self.hidden_dims}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

    @property
    def feature_dim(self):
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim

    def layer_shapes(self):
        dims = (self.input_dim,) + self.hidden_dims
        shapes = [(dims[i], dims[i + 1]) for i in range(len(self.hidden_dims))]
        shapes.append((self.feature_dim, self.num_classes))
        shapes.append((self.feature_dim, 2 * self.num_classes))
        return shapes

    @property
    def n_params(self):
        return sum(i * o + o for i, o in self.layer_shapes())


@dataclass
class ModelState:
    config: ModelConfig
    params: np.ndarray
    velocity: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        if self.params.shape != (self.config.n_params,):
            raise ShapeError(
                f"expected {self.config.n_params} parameters, got {self.params.shape}"
            )
        if self.velocity is None:
            self.velocity = np.zeros_like(self.params)

    def copy(self):
        return ModelState(self.config, self.params.copy(), self.velocity.copy(), self.step_count)


@dataclass(frozen=True)
class ForwardOutput:
    task_probs: np.ndarray        # (n, C)
    detector_probs: np.ndarray    # (n, C, 2); [..., 0] inlier, [..., 1] outlier
    task_logprobs: np.ndarray = field(repr=False, default=None)
    detector_logprobs: np.ndarray = field(repr=False, default=None)

    @property
    def p_inlier(self):
        return self.detector_probs[..., 0]


@dataclass(frozen=True)
class LossSpec:
    """Which loss to differentiate and the extra inputs it needs.

    ``labels`` are class labels (task/ova) or pseudo-labels (pseu);
    ``twin`` is the perturbed copy of the batch for ``cons``.
    """

    name: str
    labels: np.ndarray = None
    twin: np.ndarray = None
    weight: float = 1.0
    constant: float = 0.0


def unpack(params, config):
    """Split a flat vector into [(W, b), ...] views (no copies)."""
    out = []
    pos = 0
    for fan_in, fan_out in config.layer_shapes():
        w = params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = params[pos:pos + fan_out]
        pos += fan_out
        out.append((w, b))
    return out


def init_model(config):
    """Seeded uniform fan-in initialisation; biases start at zero."""
    rng = np.random.default_rng(config.seed)
    params = np.zeros(config.n_params)
    layers = unpack(params, config)
    n_backbone = len(config.hidden_dims)
    for i, (w, _) in enumerate(layers):
        fan_in = w.shape[0]
        # He-uniform for ReLU layers, 1/sqrt(fan_in) for the linear heads
        bound = np.sqrt(6.0 / fan_in) if i < n_backbone else 1.0 / np.sqrt(fan_in)
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return ModelState(config, params)


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_batch(config, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ShapeError(f"batch must be (n, {config.input_dim}), got {x.shape}")
    return x


def _forward_cached(state, x):
    config = state.config
    layers = unpack(state.params, config)
    if config.input_scale != 1.0:
        x = x * config.input_scale
    acts = [x]
    pre = []
    h = x
    for w, b in layers[:-2]:
        a = h @ w + b
        pre.append(a)
        h = np.maximum(a, 0.0)
        acts.append(h)
    (wt, bt), (wd, bd) = layers[-2], layers[-1]
    zt = h @ wt + bt
    zd = (h @ wd + bd).reshape(x.shape[0], config.num_classes, 2)
    lt = _log_softmax(zt)
    ld = _log_softmax(zd)
    out = ForwardOutput(np.exp(lt), np.exp(ld), lt, ld)
    return out, (layers, acts, pre)


def forward(state, batch):
    x = _check_batch(state.config, batch)
    out, _ = _forward_cached(state, x)
    return out


def _backprop(config, cache, d_task, d_det):
    layers, acts, pre = cache
    grads = []
    n = acts[0].shape[0]
    h = acts[-1]
    d_det2 = d_det.reshape(n, 2 * config.num_classes)
    (wt, _), (wd, _) = layers[-2], layers[-1]
    grads.append((h.T @ d_det2, d_det2.sum(axis=0)))
    grads.append((h.T @ d_task, d_task.sum(axis=0)))
    dh = d_task @ wt.T + d_det2 @ wd.T
    for i in range(len(layers) - 3, -1, -1):
        da = dh * (pre[i] > 0.0)
        grads.append((acts[i].T @ da, da.sum(axis=0)))
        if i:
            dh = da @ layers[i][0].T
    flat = []
    for gw, gb in reversed(grads):
        flat.append(gw.ravel())
        flat.append(gb)
    return np.concatenate(flat)


def _head_terms(spec, out):
    if spec.name in ("task", "pseu"):
        value, dt = losses.task_loss_grad(out, spec.labels)
        return value, dt, None
    if spec.name == "ova":
        value, dd = losses.ova_loss_grad(out, spec.labels)
        return value, None, dd
    value, dd = losses.entropy_loss_grad(out)
    return value, None, dd


def value_and_grad_many(state, batch, specs):
    """Several losses on one batch, sharing a single forward pass.

    Returns (unweighted values, gradient of sum_i weight_i * value_i).
    """
    config = state.config
    for spec in specs:
        if spec.name not in LOSS_NAMES:
            raise ContractError(f"unknown loss {spec.name!r}; expected one of {LOSS_NAMES}")
    values = []
    grad = np.zeros(config.n_params)
    live = [s for s in specs if s.name != "const"]
    if not live:
        return [float(s.constant) for s in specs], grad
    x = _check_batch(config, batch)
    out, cache = _forward_cached(state, x)
    d_task = np.zeros_like(out.task_probs)
    d_det = np.zeros_like(out.detector_probs)
    for spec in specs:
        w = spec.weight
        if spec.name == "const":
            values.append(float(spec.constant))
            continue
        if spec.name != "cons":
            value, dt, dd = _head_terms(spec, out)
            if dt is not None:
                d_task += w * dt
            if dd is not None:
                d_det += w * dd
            values.append(value)
            continue
        # cons: gradients flow through both the clean and the perturbed pass
        if spec.twin is None:
            raise ContractError("cons loss needs the perturbed twin batch")
        xt = _check_batch(config, spec.twin)
        if xt.shape != x.shape:
            raise ShapeError("twin batch must match the clean batch shape")
        out_t, cache_t = _forward_cached(state, xt)
        value, (dt_a, dd_a), (dt_b, dd_b) = losses.consistency_loss_grad(out, out_t)
        d_task += w * dt_a
        d_det += w * dd_a
        grad += _backprop(config, cache_t, w * dt_b, w * dd_b)
        values.append(value)
    grad += _backprop(config, cache, d_task, d_det)
    return values, grad


def value_and_grad(state, batch, spec):
    """Weighted loss value and its gradient w.r.t. the flat parameters."""
    values, grad = value_and_grad_many(state, batch, [spec])
    if spec.name == "const":
        return values[0], grad
    return spec.weight * values[0], grad


def backward(state, batch, spec):
    return value_and_grad(state, batch, spec)[1]


def sgd_step(state, gradients, lr, momentum=0.0):
    """Momentum SGD: v <- momentum * v + g; p <- p - lr * v."""
    gradients = np.asarray(gradients, dtype=np.float64)
    if gradients.shape != state.params.shape:
        raise ShapeError(f"gradient shape {gradients.shape} != {state.params.shape}")
    if not np.all(np.isfinite(gradients)):
        bad = np.flatnonzero(~np.isfinite(gradients))
        raise TrainingDivergence(
            f"non-finite gradient at step {state.step_count} "
            f"({bad.size} entries, first index {bad[0]})"
        )
    if lr < 0:
        raise ContractError("learning rate must be non-negative")
    if not 0.0 <= momentum < 1.0:
        raise ContractError("momentum must lie in [0, 1)")
    velocity = momentum * state.velocity + gradients
    params = state.params - lr * velocity
    return ModelState(state.config, params, velocity, state.step_count + 1)


def predict(state, batch):
    """Argmax of the task head; ties resolve to the lowest class index."""
    return np.argmax(forward(state, batch).task_probs, axis=1)
