"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import numpy as np

from lrsa.numerics import Parameter, no_grad


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def naive_softmax(row):
    row = np.asarray(row, dtype=float)
    e = np.exp(row - row.max())
    return e / e.sum()


def naive_attention(Q, K, V):
    d = Q.shape[1]
    out = np.zeros((Q.shape[0], V.shape[1]))
    for i in range(Q.shape[0]):
        scores = np.array([Q[i] @ K[j] / np.sqrt(d) for j in range(K.shape[0])])
        w = naive_softmax(scores)
        out[i] = sum(w[j] * V[j] for j in range(V.shape[0]))
    return out


def block_attention(H, H_L, wq, wk, wv):
    """Per-block sums under one shared normalization.

    The feature rows get Σ_j∈H a_ij V_j + Σ_j∈H_L a_ij V_j with the weights a
    normalized over both blocks together; the rationale rows likewise.
    """
    d = H.shape[1]
    Q_H, Q_L = H @ wq, H_L @ wq
    K_H, K_L = H @ wk, H_L @ wk
    V_H, V_L = H @ wv, H_L @ wv

    def rows(Q):
        s_self = np.exp(Q @ K_H.T / np.sqrt(d))
        s_cross = np.exp(Q @ K_L.T / np.sqrt(d))
        z = s_self.sum(axis=1, keepdims=True) + s_cross.sum(axis=1, keepdims=True)
        return (s_self / z) @ V_H + (s_cross / z) @ V_L

    return rows(Q_H), rows(Q_L)


def finite_difference(loss_fn, params: list[Parameter], eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of a scalar loss with respect to every parameter entry."""
    grads = {}
    with no_grad():
        for p in params:
            g = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + eps
                up = loss_fn()
                flat[i] = old - eps
                down = loss_fn()
                flat[i] = old
                g.reshape(-1)[i] = (up - down) / (2 * eps)
            grads[p.name] = g
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """‖a − n‖ / max(‖a‖ + ‖n‖, floor).

    The floor only matters when both sides vanish (embedding rows of tokens the
    loss never touches), where a pure ratio is undefined.
    """
    num = np.linalg.norm(analytic - numeric)
    return float(num / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor))
