"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

Set STAGESUM_NO_NUMBA=1 to force the numpy fallback path (also used
automatically when numba is unavailable).  benchmarks/kernel_bench.py
compares both paths.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("STAGESUM_NO_NUMBA", "0") != "1"
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def _lcs_len_np(a, b):
    la, lb = len(a), len(b)
    if la == 0 or lb == 0:
        return 0
    prev = np.zeros(lb + 1, dtype=np.int64)
    cur = np.zeros(lb + 1, dtype=np.int64)
    for i in range(la):
        ai = a[i]
        for j in range(lb):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = max(prev[j + 1], cur[j])
        prev, cur = cur, prev
    return int(prev[lb])


def _scatter_copy_forward_np(att, ids, vocab_size):
    # ids < 0 marks pad positions, excluded from the scatter
    n_steps, n_src = att.shape
    out = np.zeros((n_steps, vocab_size), dtype=np.float64)
    valid = ids >= 0
    if valid.any():
        np.add.at(out.T, ids[valid], att[:, valid].T)
    return out


def _scatter_copy_backward_np(d_out, ids, n_src):
    d_att = np.zeros((d_out.shape[0], n_src), dtype=np.float64)
    valid = ids >= 0
    d_att[:, valid] = d_out[:, ids[valid]]
    return d_att


def _adam_update_np(param, grad, m, v, lr, beta1, beta2, eps, step):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


if USE_NUMBA:

    @njit(cache=True)
    def _lcs_len_nb(a, b):
        la, lb = len(a), len(b)
        if la == 0 or lb == 0:
            return 0
        prev = np.zeros(lb + 1, dtype=np.int64)
        cur = np.zeros(lb + 1, dtype=np.int64)
        for i in range(la):
            ai = a[i]
            for j in range(lb):
                if ai == b[j]:
                    cur[j + 1] = prev[j] + 1
                else:
                    cur[j + 1] = max(prev[j + 1], cur[j])
            tmp = prev
            prev = cur
            cur = tmp
        return prev[lb]

    @njit(cache=True)
    def _scatter_copy_forward_nb(att, ids, vocab_size):
        n_steps, n_src = att.shape
        out = np.zeros((n_steps, vocab_size), dtype=np.float64)
        for s in range(n_src):
            tok = ids[s]
            if tok < 0:
                continue
            for t in range(n_steps):
                out[t, tok] += att[t, s]
        return out

    @njit(cache=True)
    def _scatter_copy_backward_nb(d_out, ids, n_src):
        n_steps = d_out.shape[0]
        d_att = np.zeros((n_steps, n_src), dtype=np.float64)
        for s in range(n_src):
            tok = ids[s]
            if tok < 0:
                continue
            for t in range(n_steps):
                d_att[t, s] = d_out[t, tok]
        return d_att

    @njit(cache=True)
    def _adam_update_nb(param, grad, m, v, lr, beta1, beta2, eps, step):
        p = param.ravel()
        g = grad.ravel()
        mf = m.ravel()
        vf = v.ravel()
        c1 = 1.0 - beta1**step
        c2 = 1.0 - beta2**step
        for i in range(p.size):
            mf[i] = beta1 * mf[i] + (1.0 - beta1) * g[i]
            vf[i] = beta2 * vf[i] + (1.0 - beta2) * g[i] * g[i]
            p[i] -= lr * (mf[i] / c1) / (np.sqrt(vf[i] / c2) + eps)


def lcs_length(a, b) -> int:
    """Length of the longest common subsequence of two id sequences."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    if USE_NUMBA:
        return int(_lcs_len_nb(a, b))
    return _lcs_len_np(a, b)


def scatter_copy_forward(att: np.ndarray, ids: np.ndarray, vocab_size: int) -> np.ndarray:
    """Scatter-add per-step source-position logits into vocab space.

    att is [steps, source_positions]; ids maps each source position to a
    vocab id, with negative entries (pad) excluded.  Duplicate ids sum.
    """
    att = np.ascontiguousarray(att, dtype=np.float64)
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    if USE_NUMBA:
        return _scatter_copy_forward_nb(att, ids, vocab_size)
    return _scatter_copy_forward_np(att, ids, vocab_size)


def scatter_copy_backward(d_out: np.ndarray, ids: np.ndarray, n_src: int) -> np.ndarray:
    d_out = np.ascontiguousarray(d_out, dtype=np.float64)
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    if USE_NUMBA:
        return _scatter_copy_backward_nb(d_out, ids, n_src)
    return _scatter_copy_backward_np(d_out, ids, n_src)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, step) -> None:
    """In-place fused Adam update with bias correction."""
    if USE_NUMBA:
        _adam_update_nb(param, grad, m, v, lr, beta1, beta2, eps, step)
    else:
        _adam_update_np(param, grad, m, v, lr, beta1, beta2, eps, step)
