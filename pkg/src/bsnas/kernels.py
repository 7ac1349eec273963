"""Hot array kernels: numba-jitted with a pure-numpy fallback.

The two inner loops that dominate large runs live here: scoring a batch of
integer-encoded architectures under the synthetic supernet model, and
counting operation occurrences in the top/bottom thirds of a sorted batch.

Backend selection: numba is used when importable unless the environment
variable ``BSNAS_NUMBA`` is set to ``0``/``false``/``off``/``no``, which
forces the numpy path. ``benchmarks/bench_kernels.py`` compares the two.
Both paths compute identical sums up to floating-point association order.
"""
from __future__ import annotations

import os

import numpy as np


def _numba_enabled() -> bool:
    flag = os.environ.get("BSNAS_NUMBA", "").strip().lower()
    return flag not in {"0", "false", "off", "no"}


HAS_NUMBA = False
if _numba_enabled():
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass

USE_NUMBA = HAS_NUMBA


def surrogate_raw_numpy(op_idx, ch_idx, u, exposure, half_life, v, w, coupling):
    op_idx = np.asarray(op_idx, dtype=np.int64)
    ch_idx = np.asarray(ch_idx, dtype=np.int64)
    n_layers = op_idx.shape[1]
    rows = np.arange(n_layers)
    gain = exposure / (exposure + half_life)
    total = (u[rows, op_idx] * gain[rows, op_idx]).sum(axis=1)
    total = total + v[np.arange(ch_idx.shape[1]), ch_idx].sum(axis=1)
    if n_layers > 1 and coupling != 0.0:
        total = total + coupling * w[
            np.arange(n_layers - 1), op_idx[:, :-1], op_idx[:, 1:]
        ].sum(axis=1)
    return total


def third_counts_numpy(op_idx_sorted, n_third, n_ops):
    op_idx_sorted = np.asarray(op_idx_sorted, dtype=np.int64)
    n_rows, n_layers = op_idx_sorted.shape
    top = np.zeros((n_layers, n_ops), dtype=np.int64)
    bottom = np.zeros((n_layers, n_ops), dtype=np.int64)
    total = np.zeros((n_layers, n_ops), dtype=np.int64)
    for layer in range(n_layers):
        col = op_idx_sorted[:, layer]
        total[layer] = np.bincount(col, minlength=n_ops)
        top[layer] = np.bincount(col[:n_third], minlength=n_ops)
        bottom[layer] = np.bincount(col[n_rows - n_third :], minlength=n_ops)
    return top, bottom, total


if HAS_NUMBA:

    @njit(cache=True)
    def _surrogate_raw_jit(op_idx, ch_idx, u, exposure, half_life, v, w, coupling):
        n_rows, n_layers = op_idx.shape
        n_clusters = ch_idx.shape[1]
        out = np.empty(n_rows, dtype=np.float64)
        for b in range(n_rows):
            acc = 0.0
            for l in range(n_layers):
                o = op_idx[b, l]
                e = exposure[l, o]
                acc += u[l, o] * (e / (e + half_life))
            for c in range(n_clusters):
                acc += v[c, ch_idx[b, c]]
            for l in range(n_layers - 1):
                acc += coupling * w[l, op_idx[b, l], op_idx[b, l + 1]]
            out[b] = acc
        return out

    @njit(cache=True)
    def _third_counts_jit(op_idx_sorted, n_third, n_ops):
        n_rows, n_layers = op_idx_sorted.shape
        top = np.zeros((n_layers, n_ops), dtype=np.int64)
        bottom = np.zeros((n_layers, n_ops), dtype=np.int64)
        total = np.zeros((n_layers, n_ops), dtype=np.int64)
        for r in range(n_rows):
            in_top = r < n_third
            in_bottom = r >= n_rows - n_third
            for l in range(n_layers):
                o = op_idx_sorted[r, l]
                total[l, o] += 1
                if in_top:
                    top[l, o] += 1
                if in_bottom:
                    bottom[l, o] += 1
        return top, bottom, total


def surrogate_raw(
    op_idx, ch_idx, u, exposure, half_life, v, w, coupling, backend: str | None = None
):
    """Raw (unsquashed) synthetic scores for a batch of encoded architectures.

    ``backend`` forces ``"numpy"`` or ``"numba"``; default follows the module
    flag.
    """
    if backend is None:
        backend = "numba" if USE_NUMBA else "numpy"
    if backend == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return _surrogate_raw_jit(
            np.ascontiguousarray(op_idx, dtype=np.int64),
            np.ascontiguousarray(ch_idx, dtype=np.int64),
            u,
            exposure,
            half_life,
            v,
            w,
            coupling,
        )
    return surrogate_raw_numpy(op_idx, ch_idx, u, exposure, half_life, v, w, coupling)


def third_counts(op_idx_sorted, n_third, n_ops, backend: str | None = None):
    """Occurrence counts of each triple in the top/bottom third and overall.

    ``op_idx_sorted`` holds one row per batch record, already sorted best
    first; returns (top, bottom, total), each (n_layers, n_ops).
    """
    if backend is None:
        backend = "numba" if USE_NUMBA else "numpy"
    if backend == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return _third_counts_jit(
            np.ascontiguousarray(op_idx_sorted, dtype=np.int64), n_third, n_ops
        )
    return third_counts_numpy(op_idx_sorted, n_third, n_ops)
