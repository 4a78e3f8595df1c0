"""Loss values and their gradients w.r.t. head logits.

Each ``*_grad`` function returns the batch-mean loss together with
d(loss)/d(logits) for the heads it touches, ready for ``nn._backprop``.
The plain functions (``l_task`` and friends) return only the value.
"""

import numpy as np

from . import _kernels
from .errors import ContractError


def _labels(labels, n, num_classes):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ContractError(f"expected {n} labels, got shape {labels.shape}")
    labels = labels.astype(np.int64)
    if n and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractError("labels out of range")
    return labels


def _logs(out):
    lt = out.task_logprobs
    ld = out.detector_logprobs
    # outputs built by hand (tests) carry only probabilities
    if lt is None:
        with np.errstate(divide="ignore"):
            lt = np.log(out.task_probs)
    if ld is None:
        with np.errstate(divide="ignore"):
            ld = np.log(out.detector_probs)
    return lt, ld


def _softmax_backward(p, g):
    return p * (g - (p * g).sum(axis=-1, keepdims=True))


def _xlogx(q, logq):
    # 0 * log 0 = 0
    return np.where(q > 0.0, q * np.where(q > 0.0, logq, 0.0), 0.0)


def task_loss_grad(out, labels):
    p = out.task_probs
    n, c = p.shape
    y = _labels(labels, n, c)
    if n == 0:
        return 0.0, np.zeros_like(p)
    lt, _ = _logs(out)
    rows = np.arange(n)
    value = float(-lt[rows, y].mean())
    d = p.copy()
    d[rows, y] -= 1.0
    return value, d / n


def ova_loss_grad(out, labels):
    q = out.detector_probs
    n, c, _ = q.shape
    if c < 2:
        raise ContractError("one-vs-all loss needs at least two classes")
    y = _labels(labels, n, c)
    d = np.zeros_like(q)
    if n == 0:
        return 0.0, d
    _, ld = _logs(out)
    per_row, hard = _kernels.ova_terms(
        np.ascontiguousarray(ld[..., 0]), np.ascontiguousarray(ld[..., 1]), y
    )
    rows = np.arange(n)
    # -log q_in(y): softmax-CE gradient toward channel 0
    d[rows, y] = q[rows, y]
    d[rows, y, 0] -= 1.0
    # -log q_out(hardest negative): toward channel 1
    d[rows, hard] += q[rows, hard]
    d[rows, hard, 1] -= 1.0
    return float(per_row.mean()), d / n


def entropy_loss_grad(out):
    q = out.detector_probs
    n = q.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(q)
    _, ld = _logs(out)
    h = -_xlogx(q, ld).sum(axis=-1)              # (n, C)
    value = float(h.sum(axis=1).mean())
    safe_ld = np.where(q > 0.0, ld, 0.0)
    d = -q * (safe_ld + h[..., None])
    return value, d / n


def consistency_loss_grad(out_a, out_b):
    """Squared L2 gaps of detector pairs and task vectors, batch mean.

    Returns (value, (d_task_a, d_det_a), (d_task_b, d_det_b)).
    """
    pa, pb = out_a.task_probs, out_b.task_probs
    qa, qb = out_a.detector_probs, out_b.detector_probs
    if pa.shape != pb.shape:
        raise ContractError("consistency loss needs outputs of the same batch")
    n = pa.shape[0]
    if n == 0:
        z = (np.zeros_like(pa), np.zeros_like(qa))
        return 0.0, z, z
    dp = pa - pb
    dq = qa - qb
    value = float(((dq ** 2).sum(axis=(1, 2)) + (dp ** 2).sum(axis=1)).mean())
    gp = 2.0 * dp / n
    gq = 2.0 * dq / n
    grad_a = (_softmax_backward(pa, gp), _softmax_backward(qa, gq))
    grad_b = (_softmax_backward(pb, -gp), _softmax_backward(qb, -gq))
    return value, grad_a, grad_b


def l_task(output, labels):
    """Mean cross-entropy of the task head (natural log)."""
    return task_loss_grad(output, labels)[0]


def l_ova(output, labels):
    """-log p_inlier(label) - log p_outlier(hardest negative), batch mean."""
    return ova_loss_grad(output, labels)[0]


def l_cons(output_clean, output_noisy):
    return consistency_loss_grad(output_clean, output_noisy)[0]


def l_ent(output):
    """Summed binary entropy of the detector heads, batch mean."""
    return entropy_loss_grad(output)[0]


def l_pseu_from_output(output, pseudo_labels):
    """Cross-entropy of predictions on augmented inliers against pseudo-labels."""
    if len(pseudo_labels) == 0:
        return 0.0
    return task_loss_grad(output, pseudo_labels)[0]
