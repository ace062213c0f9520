# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled compositing kernels; same contract as ``_composite_py``."""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF ALPHA_MAX = 0.99
DEF POWER_CUTOFF = -4.5
DEF NGRAD_GEOM = 6


cdef inline void _tile_bounds(Py_ssize_t t, Py_ssize_t ntx, Py_ssize_t tile, Py_ssize_t width,
                              Py_ssize_t height, Py_ssize_t* x0, Py_ssize_t* y0,
                              Py_ssize_t* x1, Py_ssize_t* y1) noexcept nogil:
    cdef Py_ssize_t ty = t // ntx
    cdef Py_ssize_t tx = t - ty * ntx
    x0[0] = tx * tile
    y0[0] = ty * tile
    x1[0] = x0[0] + tile
    y1[0] = y0[0] + tile
    if x1[0] > width:
        x1[0] = width
    if y1[0] > height:
        y1[0] = height


cdef inline double _alpha(const double[:, ::1] means2d, const double[:, ::1] conics,
                          const double[::1] opacity, Py_ssize_t g, double px, double py,
                          double* dx, double* dy, double* gauss, double* raw) noexcept nogil:
    dx[0] = px - means2d[g, 0]
    dy[0] = py - means2d[g, 1]
    cdef double power = (-0.5 * (conics[g, 0] * dx[0] * dx[0] + conics[g, 2] * dy[0] * dy[0])
                         - conics[g, 1] * dx[0] * dy[0])
    if power < POWER_CUTOFF:
        gauss[0] = 0.0
        raw[0] = 0.0
        return 0.0
    gauss[0] = exp(power)
    raw[0] = opacity[g] * gauss[0]
    if raw[0] > ALPHA_MAX:
        return ALPHA_MAX
    return raw[0]


def forward(const double[:, ::1] means2d, const double[:, ::1] conics,
            const double[::1] opacity, const double[:, ::1] feats,
            const double[::1] background, const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] ids,
            Py_ssize_t width, Py_ssize_t height, Py_ssize_t tile=16, int num_threads=1):
    cdef Py_ssize_t k = feats.shape[1]
    out_arr = np.zeros((k + 1, height, width), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ntx = (width + tile - 1) // tile
    cdef Py_ssize_t ntiles = offsets.shape[0] - 1
    cdef Py_ssize_t t, x0, y0, x1, y1, x, y, e, c, g
    cdef double T, a, dx, dy, gauss, raw, w
    cdef double* acc
    with nogil:
        for t in prange(ntiles, num_threads=num_threads, schedule="static"):
            acc = <double*> malloc(k * sizeof(double))
            _tile_bounds(t, ntx, tile, width, height, &x0, &y0, &x1, &y1)
            for y in range(y0, y1):
                for x in range(x0, x1):
                    for c in range(k):
                        acc[c] = 0.0
                    T = 1.0
                    for e in range(offsets[t], offsets[t + 1]):
                        g = ids[e]
                        a = _alpha(means2d, conics, opacity, g, x + 0.5, y + 0.5,
                                   &dx, &dy, &gauss, &raw)
                        if a == 0.0:
                            continue
                        w = a * T
                        for c in range(k):
                            acc[c] = acc[c] + w * feats[g, c]
                        T = T * (1.0 - a)
                    for c in range(k):
                        out[c, y, x] = acc[c] + T * background[c]
                    out[k, y, x] = 1.0 - T
            free(acc)
    return out_arr


def backward(const double[:, :, ::1] grad_out, const double[:, ::1] means2d,
             const double[:, ::1] conics, const double[::1] opacity,
             const double[:, ::1] feats, const double[::1] background,
             const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] ids,
             Py_ssize_t width, Py_ssize_t height, Py_ssize_t tile=16, int num_threads=1):
    cdef Py_ssize_t k = feats.shape[1]
    entry_arr = np.zeros((ids.shape[0], NGRAD_GEOM + k), dtype=np.float64)
    cdef double[:, ::1] entry = entry_arr
    cdef Py_ssize_t ntx = (width + tile - 1) // tile
    cdef Py_ssize_t ntiles = offsets.shape[0] - 1
    cdef Py_ssize_t t, x0, y0, x1, y1, x, y, e, c, g
    cdef double T, T_final, a, dx, dy, gauss, raw, w, h, tail, ga, d_a, d_pow, one_minus
    cdef double* gf
    with nogil:
        for t in prange(ntiles, num_threads=num_threads, schedule="static"):
            gf = <double*> malloc(k * sizeof(double))
            _tile_bounds(t, ntx, tile, width, height, &x0, &y0, &x1, &y1)
            for y in range(y0, y1):
                for x in range(x0, x1):
                    # forward sweep for the final transmittance
                    T = 1.0
                    for e in range(offsets[t], offsets[t + 1]):
                        a = _alpha(means2d, conics, opacity, ids[e], x + 0.5, y + 0.5,
                                   &dx, &dy, &gauss, &raw)
                        T = T * (1.0 - a)
                    T_final = T
                    ga = grad_out[k, y, x]
                    tail = 0.0
                    for c in range(k):
                        gf[c] = grad_out[c, y, x]
                        tail = tail + gf[c] * background[c]
                    tail = tail * T_final
                    # reverse sweep; tail holds sum over later fragments and background
                    for e in range(offsets[t + 1] - 1, offsets[t] - 1, -1):
                        g = ids[e]
                        a = _alpha(means2d, conics, opacity, g, x + 0.5, y + 0.5,
                                   &dx, &dy, &gauss, &raw)
                        if a == 0.0:
                            continue
                        one_minus = 1.0 - a
                        T = T / one_minus
                        w = a * T
                        h = 0.0
                        for c in range(k):
                            h = h + gf[c] * feats[g, c]
                            entry[e, NGRAD_GEOM + c] += w * gf[c]
                        d_a = h * T - tail / one_minus + ga * T_final / one_minus
                        tail = tail + w * h
                        if raw >= ALPHA_MAX:
                            continue
                        d_pow = d_a * raw
                        entry[e, 0] += d_pow * (conics[g, 0] * dx + conics[g, 1] * dy)
                        entry[e, 1] += d_pow * (conics[g, 2] * dy + conics[g, 1] * dx)
                        entry[e, 2] += d_pow * (-0.5 * dx * dx)
                        entry[e, 3] += d_pow * (-dx * dy)
                        entry[e, 4] += d_pow * (-0.5 * dy * dy)
                        entry[e, 5] += d_a * gauss
            free(gf)
    return entry_arr


def reduce_entries(const double[:, ::1] entry, const cnp.int64_t[::1] ids, Py_ssize_t m):
    """Sum per-entry rows into per-splat rows in entry order."""
    out_arr = np.zeros((m, entry.shape[1]), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t e, c
    with nogil:
        for e in range(entry.shape[0]):
            for c in range(entry.shape[1]):
                out[ids[e], c] += entry[e, c]
    return out_arr
