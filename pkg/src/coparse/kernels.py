"""Hot numeric kernels: numba fast path with a pure-numpy fallback.

The dispatch is chosen once at import time. Set ``COPARSE_NUMBA=0`` in the
environment to force the fallback implementations; by default the jitted
versions are used whenever numba imports. Both variants stay importable
(``*_nb`` / ``*_np`` / ``*_py`` suffixes) so the equivalence tests and
``benchmarks/bench_kernels.py`` can exercise them side by side.

Loop kernels (``*_py``) are written in the numba-compilable subset and are
the exact source the jitted versions are compiled from.
"""

from __future__ import annotations

import os

import numpy as np


def _env_wants_numba() -> bool:
    v = os.environ.get("COPARSE_NUMBA", "1").strip().lower()
    return v not in ("0", "false", "off", "no")


try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

NUMBA_ENABLED = HAVE_NUMBA and _env_wants_numba()


# ---------------------------------------------------------------------------
# Orientation-cell histograms (HOG accumulation)
# ---------------------------------------------------------------------------

def cell_histograms_py(mag, obin, cells_y, cells_x):
    """Accumulate 9 orientation bins per 8x8 cell, magnitude weighted.

    ``mag`` float64 and ``obin`` int64 rasters; pixels beyond the cell grid
    are ignored.
    """
    out = np.zeros((cells_y, cells_x, 9), np.float64)
    for r in range(cells_y * 8):
        for c in range(cells_x * 8):
            out[r // 8, c // 8, obin[r, c]] += mag[r, c]
    return out


def cell_histograms_np(mag, obin, cells_y, cells_x):
    h, w = cells_y * 8, cells_x * 8
    rows = np.arange(h)[:, None] // 8
    cols = np.arange(w)[None, :] // 8
    flat = (rows * cells_x + cols) * 9 + obin[:h, :w]
    out = np.bincount(flat.ravel(), weights=mag[:h, :w].ravel(),
                      minlength=cells_y * cells_x * 9)
    return out.reshape(cells_y, cells_x, 9)


# ---------------------------------------------------------------------------
# Sliding-window template scores over block-normalized descriptors
# ---------------------------------------------------------------------------

def score_windows_py(blocks, win_by, win_bx, wvec, step):
    """Dot a flattened template weight vector against every window.

    ``blocks`` is the (BY, BX, 36) array of block-normalized descriptors for
    one image scale; a window covers ``win_by`` x ``win_bx`` blocks and
    advances ``step`` cells per move.
    """
    by, bx, d = blocks.shape
    ny = (by - win_by) // step + 1
    nx = (bx - win_bx) // step + 1
    out = np.zeros((ny, nx), np.float64)
    for i in range(ny):
        for j in range(nx):
            s = 0.0
            for a in range(win_by):
                for b in range(win_bx):
                    base = (a * win_bx + b) * d
                    r0 = i * step + a
                    c0 = j * step + b
                    for q in range(d):
                        s += blocks[r0, c0, q] * wvec[base + q]
            out[i, j] = s
    return out


def score_windows_np(blocks, win_by, win_bx, wvec, step):
    by, bx, d = blocks.shape
    ny = (by - win_by) // step + 1
    nx = (bx - win_bx) // step + 1
    w = wvec.reshape(win_by, win_bx, d)
    out = np.zeros((ny, nx), np.float64)
    for a in range(win_by):
        for b in range(win_bx):
            sl = blocks[a:a + (ny - 1) * step + 1:step,
                        b:b + (nx - 1) * step + 1:step]
            out += sl @ w[a, b]
    return out


# ---------------------------------------------------------------------------
# Max-flow (Dinic: BFS level phases, each reused for many augmentations)
# ---------------------------------------------------------------------------

def dinic_py(n, s, t, ptr, adj_arc, arc_to, cap):
    """Max flow on a CSR residual network. Mutates ``cap`` in place.

    Arcs come in (forward, reverse) pairs at indices (2k, 2k^1); ``adj_arc``
    lists arc ids per node in insertion order so augmenting order is
    deterministic. Returns the flow value.
    """
    eps = 1e-12
    level = np.empty(n, np.int64)
    itp = np.empty(n, np.int64)
    parent = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    flow = 0.0
    while True:
        for i in range(n):
            level[i] = -1
        level[s] = 0
        queue[0] = s
        qh, qt = 0, 1
        while qh < qt:
            v = queue[qh]
            qh += 1
            for p in range(ptr[v], ptr[v + 1]):
                a = adj_arc[p]
                u = arc_to[a]
                if cap[a] > eps and level[u] < 0:
                    level[u] = level[v] + 1
                    queue[qt] = u
                    qt += 1
        if level[t] < 0:
            break
        for i in range(n):
            itp[i] = ptr[i]
        v = s
        while True:
            if v == t:
                f = np.inf
                u = t
                while u != s:
                    a = parent[u]
                    if cap[a] < f:
                        f = cap[a]
                    u = arc_to[a ^ 1]
                u = t
                while u != s:
                    a = parent[u]
                    cap[a] -= f
                    cap[a ^ 1] += f
                    u = arc_to[a ^ 1]
                flow += f
                v = s
                continue
            advanced = False
            p = itp[v]
            while p < ptr[v + 1]:
                a = adj_arc[p]
                u = arc_to[a]
                if cap[a] > eps and level[u] == level[v] + 1:
                    parent[u] = a
                    v = u
                    advanced = True
                    break
                p += 1
                itp[v] = p
            if not advanced:
                if v == s:
                    break
                level[v] = -1
                v = arc_to[parent[v] ^ 1]
    return flow


# ---------------------------------------------------------------------------
# Exhaustive set-partition scan (multicut oracle)
# ---------------------------------------------------------------------------

def multicut_enumerate_py(n, edge_u, edge_v, edge_w, mask_ptr, mask_ids, mask_h):
    """Scan all set partitions of ``n`` nodes in restricted-growth order.

    Objective: sum of edge weights over merged edges minus sum of mask
    rewards whose superpixels all share a region. Returns the objective and
    the first partition attaining it.
    """
    a = np.zeros(n, np.int64)
    m = np.zeros(n, np.int64)
    best = np.inf
    best_a = np.zeros(n, np.int64)
    n_edges = edge_u.shape[0]
    n_masks = mask_h.shape[0]
    while True:
        obj = 0.0
        for e in range(n_edges):
            if a[edge_u[e]] == a[edge_v[e]]:
                obj += edge_w[e]
        for c in range(n_masks):
            first = a[mask_ids[mask_ptr[c]]]
            same = True
            for p in range(mask_ptr[c] + 1, mask_ptr[c + 1]):
                if a[mask_ids[p]] != first:
                    same = False
                    break
            if same:
                obj -= mask_h[c]
        if obj < best:
            best = obj
            for i in range(n):
                best_a[i] = a[i]
        i = n - 1
        while i > 0:
            if a[i] <= m[i - 1]:
                a[i] += 1
                if a[i] > m[i - 1]:
                    m[i] = a[i]
                else:
                    m[i] = m[i - 1]
                for j in range(i + 1, n):
                    a[j] = 0
                    m[j] = m[i]
                break
            i -= 1
        if i == 0:
            break
    return best, best_a


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    cell_histograms_nb = njit(cache=True)(cell_histograms_py)
    score_windows_nb = njit(cache=True)(score_windows_py)
    dinic_nb = njit(cache=True)(dinic_py)
    multicut_enumerate_nb = njit(cache=True)(multicut_enumerate_py)
else:  # pragma: no cover
    cell_histograms_nb = None
    score_windows_nb = None
    dinic_nb = None
    multicut_enumerate_nb = None

if NUMBA_ENABLED:
    cell_histograms = cell_histograms_nb
    score_windows = score_windows_nb
    dinic = dinic_nb
    multicut_enumerate = multicut_enumerate_nb
else:
    cell_histograms = cell_histograms_np
    score_windows = score_windows_np
    dinic = dinic_py
    multicut_enumerate = multicut_enumerate_py
