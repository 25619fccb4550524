"""Pure-numpy Radon kernels, sampling-identical to the compiled extension.

Used automatically when the Cython module is unavailable; also the reference
side of the backend-parity test and benchmark.
"""
import numpy as np


def _sample_grid(n, cos_t, sin_t, offsets, taus):
    # positions of every ray sample for one angle, shape (n_det, n_tau)
    c = 0.5 * (n - 1)
    px = c + offsets[:, None] * cos_t - taus[None, :] * sin_t
    py = c + offsets[:, None] * sin_t + taus[None, :] * cos_t
    return px, py


def _bilinear_pieces(px, py, n):
    j0 = np.floor(px).astype(np.intp)
    i0 = np.floor(py).astype(np.intp)
    fx = px - j0
    fy = py - i0
    pieces = []
    for di, dj, w in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        ii = i0 + di
        jj = j0 + dj
        valid = (ii >= 0) & (ii < n) & (jj >= 0) & (jj < n)
        pieces.append((ii, jj, w, valid))
    return pieces


def forward(img, cos_t, sin_t, offsets, taus, out):
    n = img.shape[0]
    for a in range(len(cos_t)):
        px, py = _sample_grid(n, cos_t[a], sin_t[a], offsets, taus)
        acc = np.zeros_like(px)
        for ii, jj, w, valid in _bilinear_pieces(px, py, n):
            acc[valid] += w[valid] * img[ii[valid], jj[valid]]
        out[a] = acc.sum(axis=1)


def adjoint(sino, cos_t, sin_t, offsets, taus, out):
    n = out.shape[0]
    flat = out.ravel()
    for a in range(len(cos_t)):
        px, py = _sample_grid(n, cos_t[a], sin_t[a], offsets, taus)
        vals = np.broadcast_to(sino[a][:, None], px.shape)
        for ii, jj, w, valid in _bilinear_pieces(px, py, n):
            np.add.at(flat, ii[valid] * n + jj[valid], w[valid] * vals[valid])
