"""Numpy fallback for the compiled E-step kernel (same signature and semantics)."""
import numpy as np

_CHUNK = 8192


def estep_sums(X, idx, log_w, wmeans, whiten):
    g, d = wmeans.shape
    r_sum = np.zeros(g)
    ry_sum = np.zeros((g, d))
    lse_sum = 0.0
    for start in range(0, len(idx), _CHUNK):
        Y = X[idx[start:start + _CHUNK]]
        Z = Y @ whiten.T
        sq = ((Z[:, None, :] - wmeans[None, :, :]) ** 2).sum(axis=2)
        lp = log_w[None, :] - 0.5 * sq
        top = lp.max(axis=1, keepdims=True)
        p = np.exp(lp - top)
        total = p.sum(axis=1, keepdims=True)
        R = p / total
        lse_sum += float((top[:, 0] + np.log(total[:, 0])).sum())
        r_sum += R.sum(axis=0)
        ry_sum += R.T @ Y
    return r_sum, ry_sum, lse_sum
