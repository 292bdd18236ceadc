"""Independent oracles shared by the test modules."""

import numpy as np


def central_difference(f, array, h=1e-6):
    """Finite-difference gradient of scalar ``f()`` w.r.t. ``array`` (mutated in place)."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + h
        fp = f()
        array[idx] = orig - h
        fm = f()
        array[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def grads_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    """Relative agreement, with an absolute floor for entries near zero."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return bool(np.all((err <= atol) | (err <= rtol * scale)))


def mann_whitney_auc(scores, labels):
    """Fraction of (positive, negative) pairs ranked correctly, ties count 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def naive_multi_head(X, W_Q, W_K, W_V, W_O, h):
    """Per-head attention with explicit python loops over rows and columns."""
    L, d_model = X.shape
    d_k = d_model // h
    Q, K, V = X @ W_Q, X @ W_K, X @ W_V
    heads = []
    for j in range(h):
        cols = slice(j * d_k, (j + 1) * d_k)
        Qj, Kj, Vj = Q[:, cols], K[:, cols], V[:, cols]
        out = np.zeros((L, d_k))
        for i in range(L):
            scores = np.array([np.dot(Qj[i], Kj[t]) / np.sqrt(d_k) for t in range(L)])
            w = np.exp(scores - scores.max())
            w = w / w.sum()
            for t in range(L):
                out[i] += w[t] * Vj[t]
        heads.append(out)
    return np.concatenate(heads, axis=1) @ W_O


def random_graph_loss(rng, depth):
    """Build a random composition of primitives over small leaves.

    Returns ``(leaves, build)`` where ``build()`` recomputes the scalar loss
    from the current leaf data so the same graph can be re-run under
    finite-difference perturbation.
    """
    from incident_detect import autodiff as ad

    m, n = 3, 4
    leaves = [
        ad.Tensor(rng.uniform(0.2, 0.9, size=(m, n)), requires_grad=True),
        ad.Tensor(rng.uniform(-1, 1, size=(n, n)), requires_grad=True),
        ad.Tensor(rng.uniform(-1, 1, size=(n,)), requires_grad=True),
    ]
    choices = [int(c) for c in rng.integers(0, 9, size=depth)]

    def build():
        x, w, b = leaves
        h = x
        for c in choices:
            if c == 0:
                h = ad.matmul(h, w)
            elif c == 1:
                h = ad.add(h, b)
            elif c == 2:
                h = ad.tanh(h)
            elif c == 3:
                h = ad.sigmoid(h)
            elif c == 4:
                h = ad.softmax_rows(h)
            elif c == 5:
                h = ad.mul(h, x)
            elif c == 6:
                h = ad.layer_norm_rows(h)
            elif c == 7:
                h = ad.log_op(ad.sigmoid(h))
            else:
                h = ad.concat_cols([ad.slice_cols(h, 0, 2), ad.slice_cols(ad.sub(h, b), 2, n)])
        return ad.mean(ad.mul(h, h))

    return leaves, build
