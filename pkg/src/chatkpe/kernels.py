"""Hot numeric kernels: n-gram convolution and linear head projections.

Two interchangeable backends compute the same arithmetic:

- ``numba``: serial ``@njit`` loops with strict IEEE-754 semantics (no
  fastmath, no FMA contraction). Every output scalar accumulates its terms
  in a fixed order (kernel row ``j`` outer, embedding column ``i`` inner,
  bias seeded first), so results are bit-for-bit reproducible and equal to
  a plain-Python evaluation of the same sums.
- ``numpy``: BLAS matmul formulation of the identical sums. Much faster on
  long inputs (single-threaded BLAS beats scalar loops), but BLAS fuses
  multiply-adds, so scores differ from the numba backend in the last ulp.

The backend is chosen by the ``CHATKPE_KERNELS`` environment variable
(``numba`` or ``numpy``; default ``numba`` when importable). Call sites can
override with :func:`use_backend`. ``benchmarks/bench_kernels.py`` compares
the two on realistic shapes.
"""

from __future__ import annotations

import os
import warnings
from contextlib import contextmanager

import numpy as np

from .errors import ConfigError

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False
    warnings.warn("numba not installed; falling back to numpy kernels")

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


# ---------------------------------------------------------------- numba ---


@njit(cache=True, nogil=True)
def _conv_forward_nb(run, kernel, bias):
    n, d, dg = kernel.shape
    p_out = run.shape[0] - n + 1
    out = np.empty((p_out, dg), dtype=run.dtype)
    for p in range(p_out):
        acc = bias.copy()
        for j in range(n):
            for i in range(d):
                s = run[p + j, i]
                for o in range(dg):
                    acc[o] = acc[o] + s * kernel[j, i, o]
        for o in range(dg):
            out[p, o] = acc[o] if acc[o] > 0.0 else 0.0
    return out


@njit(cache=True, nogil=True)
def _head_project_nb(reps, w, b):
    p_out, dg = reps.shape
    out = np.empty(p_out, dtype=reps.dtype)
    for p in range(p_out):
        s = b
        for o in range(dg):
            s = s + reps[p, o] * w[o]
        out[p] = s
    return out


@njit(cache=True, nogil=True)
def _conv_backward_nb(run, kernel, g):
    # g is the upstream gradient already multiplied by the ReLU mask
    n, d, dg = kernel.shape
    p_out = g.shape[0]
    dk = np.zeros_like(kernel)
    db = np.zeros(dg, dtype=kernel.dtype)
    drun = np.zeros_like(run)
    for p in range(p_out):
        for o in range(dg):
            db[o] += g[p, o]
    for j in range(n):
        for i in range(d):
            for p in range(p_out):
                s = run[p + j, i]
                for o in range(dg):
                    dk[j, i, o] += s * g[p, o]
    for p in range(p_out):
        for j in range(n):
            for o in range(dg):
                go = g[p, o]
                for i in range(d):
                    drun[p + j, i] += kernel[j, i, o] * go
    return dk, db, drun


@njit(cache=True, nogil=True)
def _head_backward_nb(reps, w, g):
    p_out, dg = reps.shape
    dw = np.zeros(dg, dtype=reps.dtype)
    db = reps.dtype.type(0.0)
    dreps = np.empty_like(reps)
    for p in range(p_out):
        gp = g[p]
        db += gp
        for o in range(dg):
            dw[o] += reps[p, o] * gp
            dreps[p, o] = w[o] * gp
    return dw, db, dreps


@njit(cache=True, nogil=True)
def _scatter_add_rows_nb(table, rows, vals):
    for t in range(rows.shape[0]):
        r = rows[t]
        for i in range(vals.shape[1]):
            table[r, i] += vals[t, i]


# ---------------------------------------------------------------- numpy ---


def _conv_forward_np(run, kernel, bias):
    n = kernel.shape[0]
    p_out = run.shape[0] - n + 1
    acc = np.zeros((p_out, kernel.shape[2]), dtype=run.dtype)
    for j in range(n):
        acc += run[j : j + p_out] @ kernel[j]
    acc += bias
    return np.maximum(acc, 0.0, out=acc)


def _head_project_np(reps, w, b):
    return reps @ w + b


def _conv_backward_np(run, kernel, g):
    n = kernel.shape[0]
    p_out = g.shape[0]
    dk = np.empty_like(kernel)
    db = g.sum(axis=0)
    drun = np.zeros_like(run)
    for j in range(n):
        dk[j] = run[j : j + p_out].T @ g
        drun[j : j + p_out] += g @ kernel[j].T
    return dk, db, drun


def _head_backward_np(reps, w, g):
    dw = reps.T @ g
    db = g.sum()
    dreps = np.outer(g, w)
    return dw, db, dreps


def _scatter_add_rows_np(table, rows, vals):
    np.add.at(table, rows, vals)


_IMPL = {
    "numba": {
        "conv_forward": _conv_forward_nb,
        "head_project": _head_project_nb,
        "conv_backward": _conv_backward_nb,
        "head_backward": _head_backward_nb,
        "scatter_add_rows": _scatter_add_rows_nb,
    },
    "numpy": {
        "conv_forward": _conv_forward_np,
        "head_project": _head_project_np,
        "conv_backward": _conv_backward_np,
        "head_backward": _head_backward_np,
        "scatter_add_rows": _scatter_add_rows_np,
    },
}


def _resolve_default() -> str:
    name = os.environ.get("CHATKPE_KERNELS", "").strip().lower()
    if not name:
        return "numba" if HAVE_NUMBA else "numpy"
    if name not in _IMPL:
        raise ConfigError(f"CHATKPE_KERNELS must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        warnings.warn("CHATKPE_KERNELS=numba but numba is unavailable; using numpy")
        return "numpy"
    return name


_BACKEND = _resolve_default()


def active_backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in _IMPL:
        raise ConfigError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ConfigError("numba backend requested but numba is not installed")
    _BACKEND = name


@contextmanager
def use_backend(name: str):
    prev = _BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


# -------------------------------------------------------------- dispatch ---


def conv_forward(run: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """ReLU(conv) of one contiguous token run.

    run: (r, d) embedding rows; kernel: (n, d, d_g); bias: (d_g,).
    Returns (r - n + 1, d_g) post-ReLU representations; empty when r < n.
    """
    n = kernel.shape[0]
    if run.shape[0] < n:
        return np.empty((0, kernel.shape[2]), dtype=run.dtype)
    return _IMPL[_BACKEND]["conv_forward"](run, kernel, bias)


def head_project(reps: np.ndarray, w: np.ndarray, b: float) -> np.ndarray:
    """Linear score per representation row: reps @ w + b."""
    if reps.shape[0] == 0:
        return np.empty(0, dtype=reps.dtype)
    return _IMPL[_BACKEND]["head_project"](reps, w, reps.dtype.type(b))


def conv_backward(run, kernel, g):
    """Gradients of conv_forward: returns (d_kernel, d_bias, d_run).

    ``g`` must already be masked by the ReLU derivative.
    """
    if g.shape[0] == 0:
        return (
            np.zeros_like(kernel),
            np.zeros(kernel.shape[2], dtype=kernel.dtype),
            np.zeros_like(run),
        )
    return _IMPL[_BACKEND]["conv_backward"](run, kernel, g)


def head_backward(reps, w, g):
    """Gradients of head_project: returns (d_w, d_b, d_reps)."""
    if reps.shape[0] == 0:
        return np.zeros_like(w), reps.dtype.type(0.0), np.zeros_like(reps)
    return _IMPL[_BACKEND]["head_backward"](reps, w, g)


def scatter_add_rows(table, rows, vals):
    """table[rows[t]] += vals[t] for every t, in ascending t order."""
    if rows.shape[0] == 0:
        return
    _IMPL[_BACKEND]["scatter_add_rows"](table, rows, vals)
