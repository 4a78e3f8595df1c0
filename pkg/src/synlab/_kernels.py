"""Hot inner loops with a numba path and a pure-numpy path.

Every kernel exists twice: ``*_numpy`` (vectorised numpy) and ``*_jit``
(explicit loops, compiled with ``numba.njit`` when numba is importable).
The public names at the bottom of the module point at one or the other.
Set ``SYNLAB_DISABLE_NUMBA=1`` before import to force the numpy path.

Both paths must agree bit-for-bit on integer outputs and to ~1e-12 on
floating outputs; ``tests/test_kernels.py`` pins that.
"""

import os

import numpy as np

_DISABLED = os.environ.get("SYNLAB_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_NUMBA = HAVE_NUMBA and not _DISABLED


# ---------------------------------------------------------------- histogram

def histogram_counts_numpy(values, edges):
    counts, _ = np.histogram(values, bins=edges)
    return counts.astype(np.int64)


@njit(cache=True)
def histogram_counts_jit(values, edges):
    nbins = edges.shape[0] - 1
    lo = edges[0]
    hi = edges[nbins]
    norm = nbins / (hi - lo)
    counts = np.zeros(nbins, dtype=np.int64)
    for i in range(values.shape[0]):
        v = values[i]
        if v < lo or v > hi:
            continue
        k = int((v - lo) * norm)
        if k >= nbins:
            k = nbins - 1
        # same edge correction np.histogram applies after the fast index guess
        if v < edges[k]:
            k -= 1
        elif v >= edges[k + 1] and k != nbins - 1:
            k += 1
        counts[k] += 1
    return counts


# ------------------------------------------------------------------ margins

def margins_numpy(probs, labels):
    n = probs.shape[0]
    rows = np.arange(n)
    own = probs[rows, labels]
    others = probs.copy()
    others[rows, labels] = -np.inf
    return own - others.max(axis=1)


@njit(cache=True)
def margins_jit(probs, labels):
    n, c = probs.shape
    out = np.empty(n)
    for i in range(n):
        y = labels[i]
        best = -np.inf
        for j in range(c):
            if j != y and probs[i, j] > best:
                best = probs[i, j]
        out[i] = probs[i, y] - best
    return out


# ------------------------------------------------- one-vs-all hardest negative

def ova_terms_numpy(logq_in, logq_out, labels):
    """Per-row OVA loss and the index of the hardest negative detector.

    The hardest negative is the j != y with the smallest outlier
    probability; ties go to the lowest index.
    """
    n = logq_in.shape[0]
    rows = np.arange(n)
    masked = logq_out.copy()
    masked[rows, labels] = np.inf
    hard = np.argmin(masked, axis=1)
    loss = -logq_in[rows, labels] - logq_out[rows, hard]
    return loss, hard.astype(np.int64)


@njit(cache=True)
def ova_terms_jit(logq_in, logq_out, labels):
    n, c = logq_in.shape
    loss = np.empty(n)
    hard = np.empty(n, dtype=np.int64)
    for i in range(n):
        y = labels[i]
        best = np.inf
        arg = -1
        for j in range(c):
            if j != y and logq_out[i, j] < best:
                best = logq_out[i, j]
                arg = j
        hard[i] = arg
        loss[i] = -logq_in[i, y] - best
    return loss, hard


# ---------------------------------------------- class-conditional similarity

def max_cosine_same_class_numpy(syn_x, syn_c, real_x, real_c):
    out = np.full(syn_x.shape[0], -np.inf)
    syn_n = syn_x / np.maximum(np.linalg.norm(syn_x, axis=1, keepdims=True), 1e-300)
    real_n = real_x / np.maximum(np.linalg.norm(real_x, axis=1, keepdims=True), 1e-300)
    for c in np.unique(syn_c):
        s_idx = np.flatnonzero(syn_c == c)
        r_idx = np.flatnonzero(real_c == c)
        if r_idx.size == 0:
            continue
        sims = syn_n[s_idx] @ real_n[r_idx].T
        out[s_idx] = sims.max(axis=1)
    return out


@njit(cache=True)
def max_cosine_same_class_jit(syn_x, syn_c, real_x, real_c):
    ns, d = syn_x.shape
    nr = real_x.shape[0]
    real_norm = np.empty(nr)
    for j in range(nr):
        acc = 0.0
        for k in range(d):
            acc += real_x[j, k] * real_x[j, k]
        real_norm[j] = max(np.sqrt(acc), 1e-300)
    out = np.full(ns, -np.inf)
    for i in range(ns):
        acc = 0.0
        for k in range(d):
            acc += syn_x[i, k] * syn_x[i, k]
        sn = max(np.sqrt(acc), 1e-300)
        best = -np.inf
        for j in range(nr):
            if real_c[j] != syn_c[i]:
                continue
            dot = 0.0
            for k in range(d):
                dot += syn_x[i, k] * real_x[j, k]
            sim = dot / (sn * real_norm[j])
            if sim > best:
                best = sim
        out[i] = best
    return out


# ------------------------------------------- exhaustive classifier enumeration

def enumerate_classifier_losses_numpy(cost):
    """Expected loss of every deterministic classifier x -> y_hat.

    ``cost[x, k]`` is the loss contribution of predicting k at x.  Row i of
    the result corresponds to the classifier whose predictions are the
    base-|Y| digits of i, most significant digit first (x = 0).
    """
    nx, ny = cost.shape
    grids = np.indices((ny,) * nx).reshape(nx, -1)
    return cost[np.arange(nx)[:, None], grids].sum(axis=0)


@njit(cache=True)
def enumerate_classifier_losses_jit(cost):
    nx, ny = cost.shape
    total = ny ** nx
    out = np.empty(total)
    digits = np.zeros(nx, dtype=np.int64)   # odometer, x = nx-1 is the fastest digit
    for i in range(total):
        acc = 0.0
        # accumulate in x order to match the numpy reduction
        for x in range(nx):
            acc += cost[x, digits[x]]
        out[i] = acc
        x = nx - 1
        while x >= 0:
            digits[x] += 1
            if digits[x] < ny:
                break
            digits[x] = 0
            x -= 1
    return out

if USE_NUMBA:
    histogram_counts = histogram_counts_jit
    margins = margins_jit
    ova_terms = ova_terms_jit
    enumerate_classifier_losses = enumerate_classifier_losses_jit
else:
    histogram_counts = histogram_counts_numpy
    margins = margins_numpy
    ova_terms = ova_terms_numpy
    enumerate_classifier_losses = enumerate_classifier_losses_numpy

# a matmul at heart: BLAS beats the explicit loops, so numpy on both paths
max_cosine_same_class = max_cosine_same_class_numpy
