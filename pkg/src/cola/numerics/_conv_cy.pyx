# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled temporal convolution kernels (hot loop of training).

Same contract as cola.numerics._conv_np; kernels are re-laid-out once per
call to (Cout, K, Cin) so the innermost loop runs over contiguous memory.
"""

import numpy as np


def conv1d_forward(double[:, ::1] inp, kernel_arr, double[::1] bias, Py_ssize_t left_pad):
    cdef double[:, :, ::1] kernel = np.ascontiguousarray(
        np.asarray(kernel_arr).transpose(0, 2, 1))  # (Cout, K, Cin)
    cdef Py_ssize_t T = inp.shape[0]
    cdef Py_ssize_t cin = inp.shape[1]
    cdef Py_ssize_t cout = kernel.shape[0]
    cdef Py_ssize_t width = kernel.shape[1]
    out_arr = np.empty((T, cout))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, co, k, ci, src
    cdef double acc
    for t in range(T):
        for co in range(cout):
            acc = bias[co]
            for k in range(width):
                src = t - left_pad + k
                if 0 <= src < T:
                    for ci in range(cin):
                        acc += inp[src, ci] * kernel[co, k, ci]
            out[t, co] = acc
    return out_arr


def conv1d_backward(double[:, ::1] grad_out, double[:, ::1] inp, kernel_arr,
                    Py_ssize_t left_pad):
    cdef double[:, :, ::1] kernel = np.ascontiguousarray(
        np.asarray(kernel_arr).transpose(0, 2, 1))  # (Cout, K, Cin)
    cdef Py_ssize_t T = inp.shape[0]
    cdef Py_ssize_t cin = inp.shape[1]
    cdef Py_ssize_t cout = kernel.shape[0]
    cdef Py_ssize_t width = kernel.shape[1]

    gi_arr = np.zeros((T, cin))
    gk_arr = np.zeros((cout, width, cin))
    gb_arr = np.zeros(cout)
    cdef double[:, ::1] gi = gi_arr
    cdef double[:, :, ::1] gk = gk_arr
    cdef double[::1] gb = gb_arr

    cdef Py_ssize_t t, co, k, ci, src
    cdef double g
    for t in range(T):
        for co in range(cout):
            g = grad_out[t, co]
            gb[co] += g
            for k in range(width):
                src = t - left_pad + k
                if 0 <= src < T:
                    for ci in range(cin):
                        gk[co, k, ci] += g * inp[src, ci]
                        gi[src, ci] += g * kernel[co, k, ci]
    return gi_arr, gk_arr.transpose(0, 2, 1).copy(), gb_arr
