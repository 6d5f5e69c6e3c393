"""Low-level sampling kernels shared by imaging and linearization.

Each kernel has a vectorized NumPy implementation and a numba twin;
:func:`mbtrack.backend.numba_enabled` picks the active one per call.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .backend import njit


def bilinear_many(data: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Bilinear samples of ``data`` at float coordinates.

    Coordinates outside ``[0, W-1] x [0, H-1]`` are clamped to the border
    and flagged. At integer coordinates the stored pixel is returned
    exactly.

    Parameters
    ----------
    data : (H, W) float64 array
    xs, ys : float64 arrays of equal shape

    Returns
    -------
    values : array shaped like ``xs``
    clamped : bool array shaped like ``xs``, True where a coordinate was
        outside the image and had to be clamped
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    shape = xs.shape
    xf = xs.ravel()
    yf = ys.ravel()
    if backend.numba_enabled():
        vals, clamped = _bilinear_many_numba(data, xf, yf)
    else:
        vals, clamped = _bilinear_many_numpy(data, xf, yf)
    return vals.reshape(shape), clamped.reshape(shape)


def _bilinear_many_numpy(data, xf, yf):
    h, w = data.shape
    xc = np.clip(xf, 0.0, w - 1.0)
    yc = np.clip(yf, 0.0, h - 1.0)
    clamped = (xc != xf) | (yc != yf)
    # Anchor so that x0+1 stays in range; exact at the far border.
    x0 = np.minimum(xc.astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(yc.astype(np.int64), max(h - 2, 0))
    fx = xc - x0
    fy = yc - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    v00 = data[y0, x0]
    v01 = data[y0, x1]
    v10 = data[y1, x0]
    v11 = data[y1, x1]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return top + fy * (bot - top), clamped


@njit(cache=True)
def _bilinear_many_numba(data, xf, yf):  # pragma: no cover - covered via dispatch
    h, w = data.shape
    n = xf.shape[0]
    vals = np.empty(n, dtype=np.float64)
    clamped = np.zeros(n, dtype=np.bool_)
    xmax = w - 1.0
    ymax = h - 1.0
    for k in range(n):
        x = xf[k]
        y = yf[k]
        xc = min(max(x, 0.0), xmax)
        yc = min(max(y, 0.0), ymax)
        if xc != x or yc != y:
            clamped[k] = True
        x0 = int(xc)
        y0 = int(yc)
        if x0 > w - 2:
            x0 = max(w - 2, 0)
        if y0 > h - 2:
            y0 = max(h - 2, 0)
        fx = xc - x0
        fy = yc - y0
        x1 = min(x0 + 1, w - 1)
        y1 = min(y0 + 1, h - 1)
        v00 = data[y0, x0]
        v01 = data[y0, x1]
        v10 = data[y1, x0]
        v11 = data[y1, x1]
        top = v00 + fx * (v01 - v00)
        bot = v10 + fx * (v11 - v10)
        vals[k] = top + fy * (bot - top)
    return vals, clamped
