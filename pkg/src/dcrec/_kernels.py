"""Hot inner loops: embedding-and-bi-interaction (EB) pooling, its scatter
backward, and the adagrad sweep.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback.
The backend is chosen at import time from ``DCREC_NUMBA`` (``0`` disables
numba) and can be switched at runtime with :func:`set_backend`.  Both paths
accumulate in the same order, so they agree to rounding (tests pin 1e-12).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

_backend = "numba" if NUMBA_AVAILABLE and os.environ.get("DCREC_NUMBA", "1") != "0" else "numpy"


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    _backend = name


# ---------------------------------------------------------------- numpy path


def _eb_forward_np(emb, rows, extra):
    vecs = emb[rows]  # (B, F, d)
    s = vecs.sum(axis=1) + extra
    sq = (vecs * vecs).sum(axis=1) + extra * extra
    return 0.5 * (s * s - sq), s


def _eb_backward_np(emb, rows, s, dm, grad):
    vecs = emb[rows]
    contrib = dm[:, None, :] * (s[:, None, :] - vecs)
    np.add.at(grad, rows.ravel(), contrib.reshape(-1, emb.shape[1]))


def _adagrad_np(param, grad, acc, lr, eps):
    acc += grad * grad
    param -= lr * grad / np.sqrt(acc + eps)


# ---------------------------------------------------------------- numba path

if NUMBA_AVAILABLE:

    @njit(cache=True)
    def _eb_forward_nb(emb, rows, extra):
        n, f = rows.shape
        d = emb.shape[1]
        m = np.empty((n, d))
        s = np.empty((n, d))
        for b in range(n):
            for k in range(d):
                acc = 0.0
                sq = 0.0
                for j in range(f):
                    v = emb[rows[b, j], k]
                    acc += v
                    sq += v * v
                e = extra[k]
                acc += e
                sq += e * e
                s[b, k] = acc
                m[b, k] = 0.5 * (acc * acc - sq)
        return m, s

    @njit(cache=True)
    def _eb_backward_nb(emb, rows, s, dm, grad):
        n, f = rows.shape
        d = emb.shape[1]
        for b in range(n):
            for j in range(f):
                r = rows[b, j]
                for k in range(d):
                    grad[r, k] += dm[b, k] * (s[b, k] - emb[r, k])

    @njit(cache=True)
    def _adagrad_nb(param, grad, acc, lr, eps):
        p = param.ravel()
        g = grad.ravel()
        a = acc.ravel()
        for i in range(p.size):
            gi = g[i]
            a[i] += gi * gi
            p[i] -= lr * gi / np.sqrt(a[i] + eps)


# ---------------------------------------------------------------- dispatch


def eb_forward(emb: np.ndarray, rows: np.ndarray, extra: np.ndarray | None = None):
    """Bi-interaction pooling over gathered embedding rows.

    ``rows`` holds global row indices, shape (B, F).  ``extra`` is an optional
    d-vector pooled in as one more field for every row (a zero vector is a
    no-op).  Returns ``(m, s)`` where ``s`` is the per-row field sum that the
    backward pass needs.
    """
    if extra is None:
        extra = np.zeros(emb.shape[1])
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    if _backend == "numba":
        return _eb_forward_nb(emb, rows, extra)
    return _eb_forward_np(emb, rows, extra)


def eb_backward(emb: np.ndarray, rows: np.ndarray, s: np.ndarray, dm: np.ndarray, grad: np.ndarray) -> None:
    """Accumulate dLoss/d(embedding rows) into ``grad`` in place."""
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    if _backend == "numba":
        _eb_backward_nb(emb, rows, s, np.ascontiguousarray(dm), grad)
    else:
        _eb_backward_np(emb, rows, s, dm, grad)


def adagrad_update(param: np.ndarray, grad: np.ndarray, acc: np.ndarray, lr: float, eps: float) -> None:
    """In-place ``acc += g**2; param -= lr * g / sqrt(acc + eps)``."""
    if _backend == "numba":
        _adagrad_nb(param, grad, acc, float(lr), float(eps))
    else:
        _adagrad_np(param, grad, acc, lr, eps)
