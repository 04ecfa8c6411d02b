# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled 1-D convolution kernels.

Same contract as the numpy backend in _np_conv.py: x[T, C_in],
weight[k, C_in, C_out], caller resolves padding into (pad_left, t_out).
Inner loops run over contiguous memoryviews; allocation stays in numpy.
"""

import numpy as np


def conv1d_forward(double[:, ::1] x, double[:, :, ::1] weight, bias,
                   int stride, int pad_left, int t_out):
    cdef int t_in = x.shape[0]
    cdef int c_in = x.shape[1]
    cdef int k = weight.shape[0]
    cdef int c_out = weight.shape[2]
    cdef int t, j, c, o, src
    cdef double v

    y_arr = np.zeros((t_out, c_out), dtype=np.float64)
    cdef double[:, ::1] y = y_arr

    for t in range(t_out):
        for j in range(k):
            src = t * stride + j - pad_left
            if src < 0 or src >= t_in:
                continue
            for c in range(c_in):
                v = x[src, c]
                for o in range(c_out):
                    y[t, o] += v * weight[j, c, o]

    if bias is not None:
        y_arr += np.asarray(bias)
    return y_arr


def conv1d_backward(double[:, ::1] gy, double[:, ::1] x,
                    double[:, :, ::1] weight, int stride, int pad_left):
    cdef int t_out = gy.shape[0]
    cdef int t_in = x.shape[0]
    cdef int c_in = x.shape[1]
    cdef int k = weight.shape[0]
    cdef int c_out = weight.shape[2]
    cdef int t, j, c, o, src
    cdef double g, v

    gx_arr = np.zeros((t_in, c_in), dtype=np.float64)
    gw_arr = np.zeros((k, c_in, c_out), dtype=np.float64)
    gb_arr = np.zeros(c_out, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr

    for t in range(t_out):
        for o in range(c_out):
            gb[o] += gy[t, o]
        for j in range(k):
            src = t * stride + j - pad_left
            if src < 0 or src >= t_in:
                continue
            for c in range(c_in):
                v = x[src, c]
                g = 0.0
                for o in range(c_out):
                    g += gy[t, o] * weight[j, c, o]
                    gw[j, c, o] += v * gy[t, o]
                gx[src, c] += g

    return gx_arr, gw_arr, gb_arr
