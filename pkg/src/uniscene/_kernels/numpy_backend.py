"""Pure-NumPy reference kernels (fallback when the extension is absent).

All convolutions are stride 1 with zero padding that preserves spatial
dims; kernels must have odd extents.  Everything is float64 in, float64
out, and summation order is fixed so repeated calls are bit-identical.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def conv2d_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    ci, h, wd = x.shape
    co, ci2, kh, kw = w.shape
    assert ci == ci2, "channel mismatch"
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((ci, h + 2 * ph, wd + 2 * pw))
    xp[:, ph:ph + h, pw:pw + wd] = x
    y = np.zeros((co, h, wd))
    for di in range(kh):
        for dj in range(kw):
            y += np.tensordot(w[:, :, di, dj], xp[:, di:di + h, dj:dj + wd],
                              axes=([1], [0]))
    return y


def conv2d_grad_input(w: np.ndarray, gy: np.ndarray) -> np.ndarray:
    co, ci, kh, kw = w.shape
    _, h, wd = gy.shape
    ph, pw = kh // 2, kw // 2
    gxp = np.zeros((ci, h + 2 * ph, wd + 2 * pw))
    for di in range(kh):
        for dj in range(kw):
            gxp[:, di:di + h, dj:dj + wd] += np.tensordot(
                w[:, :, di, dj], gy, axes=([0], [0]))
    return gxp[:, ph:ph + h, pw:pw + wd]


def conv2d_grad_weight(x: np.ndarray, gy: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ci, h, wd = x.shape
    co = gy.shape[0]
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((ci, h + 2 * ph, wd + 2 * pw))
    xp[:, ph:ph + h, pw:pw + wd] = x
    gw = np.zeros((co, ci, kh, kw))
    for di in range(kh):
        for dj in range(kw):
            gw[:, :, di, dj] = np.tensordot(gy, xp[:, di:di + h, dj:dj + wd],
                                            axes=([1, 2], [1, 2]))
    return gw


def conv3d_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    ci, d, h, wd = x.shape
    co, ci2, kd, kh, kw = w.shape
    assert ci == ci2, "channel mismatch"
    pd, ph, pw = kd // 2, kh // 2, kw // 2
    xp = np.zeros((ci, d + 2 * pd, h + 2 * ph, wd + 2 * pw))
    xp[:, pd:pd + d, ph:ph + h, pw:pw + wd] = x
    y = np.zeros((co, d, h, wd))
    for dd in range(kd):
        for di in range(kh):
            for dj in range(kw):
                y += np.tensordot(
                    w[:, :, dd, di, dj],
                    xp[:, dd:dd + d, di:di + h, dj:dj + wd],
                    axes=([1], [0]))
    return y


def conv3d_grad_input(w: np.ndarray, gy: np.ndarray) -> np.ndarray:
    co, ci, kd, kh, kw = w.shape
    _, d, h, wd = gy.shape
    pd, ph, pw = kd // 2, kh // 2, kw // 2
    gxp = np.zeros((ci, d + 2 * pd, h + 2 * ph, wd + 2 * pw))
    for dd in range(kd):
        for di in range(kh):
            for dj in range(kw):
                gxp[:, dd:dd + d, di:di + h, dj:dj + wd] += np.tensordot(
                    w[:, :, dd, di, dj], gy, axes=([0], [0]))
    return gxp[:, pd:pd + d, ph:ph + h, pw:pw + wd]


def conv3d_grad_weight(x: np.ndarray, gy: np.ndarray, kd: int, kh: int,
                       kw: int) -> np.ndarray:
    ci, d, h, wd = x.shape
    co = gy.shape[0]
    pd, ph, pw = kd // 2, kh // 2, kw // 2
    xp = np.zeros((ci, d + 2 * pd, h + 2 * ph, wd + 2 * pw))
    xp[:, pd:pd + d, ph:ph + h, pw:pw + wd] = x
    gw = np.zeros((co, ci, kd, kh, kw))
    for dd in range(kd):
        for di in range(kh):
            for dj in range(kw):
                gw[:, :, dd, di, dj] = np.tensordot(
                    gy, xp[:, dd:dd + d, di:di + h, dj:dj + wd],
                    axes=([1, 2, 3], [1, 2, 3]))
    return gw


def splat_forward(feat: np.ndarray, wgt: np.ndarray, cell: np.ndarray,
                  n_cells: int) -> np.ndarray:
    """Scatter-add weighted features: out[:, cell[k, p]] += wgt[k, p] * feat[:, p].

    feat is (C, P), wgt and cell are (K, P); cell entries < 0 are dropped.
    """
    c = feat.shape[0]
    out = np.zeros((c, n_cells))
    out_t = out.T
    for k in range(wgt.shape[0]):
        valid = cell[k] >= 0
        if not np.any(valid):
            continue
        np.add.at(out_t, cell[k, valid], (feat[:, valid] * wgt[k, valid]).T)
    return out


def splat_grad_feat(wgt: np.ndarray, cell: np.ndarray,
                    gout: np.ndarray) -> np.ndarray:
    p = wgt.shape[1]
    gf = np.zeros((gout.shape[0], p))
    for k in range(wgt.shape[0]):
        valid = cell[k] >= 0
        if not np.any(valid):
            continue
        gf[:, valid] += wgt[k, valid] * gout[:, cell[k, valid]]
    return gf


def splat_grad_weight(feat: np.ndarray, cell: np.ndarray,
                      gout: np.ndarray) -> np.ndarray:
    k_bins, p = cell.shape
    gw = np.zeros((k_bins, p))
    for k in range(k_bins):
        valid = cell[k] >= 0
        if not np.any(valid):
            continue
        gw[k, valid] = np.einsum("cp,cp->p", feat[:, valid],
                                 gout[:, cell[k, valid]])
    return gw
