# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled ray-driven Radon kernels (forward + exact-transpose adjoint).

The sampling scheme must stay in lockstep with hydra_ct._radon_numpy: rays are
sampled at unit steps along their length and read the image through bilinear
interpolation; the adjoint scatters the identical weights.
"""
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def forward(double[:, ::1] img,
            double[::1] cos_t, double[::1] sin_t,
            double[::1] offsets, double[::1] taus,
            double[:, ::1] out):
    cdef Py_ssize_t n = img.shape[0]
    cdef Py_ssize_t n_ang = cos_t.shape[0]
    cdef Py_ssize_t n_det = offsets.shape[0]
    cdef Py_ssize_t n_tau = taus.shape[0]
    cdef Py_ssize_t a, d, k, i0, j0
    cdef double c = 0.5 * (n - 1)
    cdef double ct, st, t, px, py, fx, fy, acc, w

    for a in range(n_ang):
        ct = cos_t[a]
        st = sin_t[a]
        for d in range(n_det):
            t = offsets[d]
            acc = 0.0
            for k in range(n_tau):
                px = c + t * ct - taus[k] * st
                py = c + t * st + taus[k] * ct
                if px < -1.0 or px > n or py < -1.0 or py > n:
                    continue
                j0 = <Py_ssize_t>floor(px)
                i0 = <Py_ssize_t>floor(py)
                fx = px - j0
                fy = py - i0
                if 0 <= i0 < n:
                    if 0 <= j0 < n:
                        acc += (1.0 - fy) * (1.0 - fx) * img[i0, j0]
                    if 0 <= j0 + 1 < n:
                        acc += (1.0 - fy) * fx * img[i0, j0 + 1]
                if 0 <= i0 + 1 < n:
                    if 0 <= j0 < n:
                        acc += fy * (1.0 - fx) * img[i0 + 1, j0]
                    if 0 <= j0 + 1 < n:
                        acc += fy * fx * img[i0 + 1, j0 + 1]
            out[a, d] = acc


def adjoint(double[:, ::1] sino,
            double[::1] cos_t, double[::1] sin_t,
            double[::1] offsets, double[::1] taus,
            double[:, ::1] out):
    cdef Py_ssize_t n = out.shape[0]
    cdef Py_ssize_t n_ang = cos_t.shape[0]
    cdef Py_ssize_t n_det = offsets.shape[0]
    cdef Py_ssize_t n_tau = taus.shape[0]
    cdef Py_ssize_t a, d, k, i0, j0
    cdef double c = 0.5 * (n - 1)
    cdef double ct, st, t, px, py, fx, fy, s

    for a in range(n_ang):
        ct = cos_t[a]
        st = sin_t[a]
        for d in range(n_det):
            s = sino[a, d]
            if s == 0.0:
                continue
            t = offsets[d]
            for k in range(n_tau):
                px = c + t * ct - taus[k] * st
                py = c + t * st + taus[k] * ct
                if px < -1.0 or px > n or py < -1.0 or py > n:
                    continue
                j0 = <Py_ssize_t>floor(px)
                i0 = <Py_ssize_t>floor(py)
                fx = px - j0
                fy = py - i0
                if 0 <= i0 < n:
                    if 0 <= j0 < n:
                        out[i0, j0] += (1.0 - fy) * (1.0 - fx) * s
                    if 0 <= j0 + 1 < n:
                        out[i0, j0 + 1] += (1.0 - fy) * fx * s
                if 0 <= i0 + 1 < n:
                    if 0 <= j0 < n:
                        out[i0 + 1, j0] += fy * (1.0 - fx) * s
                    if 0 <= j0 + 1 < n:
                        out[i0 + 1, j0 + 1] += fy * fx * s
