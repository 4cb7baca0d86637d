# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels for the predictor and the NMPC inner loop.

Mirrors ``pure.py``: packed-gate LSTM sequence forward, MLP forward with
pre-activations, and the MLP input Jacobian.  All arrays are float64 and
C-contiguous; matrix products go through BLAS.
"""

from libc.math cimport tanh

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemv, dgemm

cnp.import_array()


cdef void _xw_plus_y(double[:, ::1] w, double* x, double* y) noexcept nogil:
    # y += x @ w for row-major w of shape (n_in, n_out).
    # Column-major view of w's memory is w.T (n_out, n_in), so a plain 'N'
    # gemv on it computes w.T @ x = x @ w.
    cdef int m = <int> w.shape[1]
    cdef int n = <int> w.shape[0]
    cdef int one = 1
    cdef double alpha = 1.0
    cdef double beta = 1.0
    dgemv("N", &m, &n, &alpha, &w[0, 0], &m, x, &one, &beta, y, &one)


def lstm_final_hidden(double[:, ::1] wx, double[:, ::1] wh, double[::1] b,
                      double[:, ::1] seq):
    """Final hidden state of a packed-gate LSTM over a (T, in) sequence."""
    cdef int j = <int> wh.shape[0]
    cdef int T = <int> seq.shape[0]
    cdef int t, k

    h_arr = np.zeros(j)
    cdef double[::1] h = h_arr
    cdef double[::1] c = np.zeros(j)
    cdef double[::1] z = np.empty(4 * j)

    with nogil:
        for t in range(T):
            for k in range(4 * j):
                z[k] = b[k]
            _xw_plus_y(wx, &seq[t, 0], &z[0])
            _xw_plus_y(wh, &h[0], &z[0])
            for k in range(3 * j):
                z[k] = 0.5 * tanh(0.5 * z[k]) + 0.5
            for k in range(3 * j, 4 * j):
                z[k] = tanh(z[k])
            for k in range(j):
                c[k] = z[j + k] * c[k] + z[k] * z[3 * j + k]
                h[k] = z[2 * j + k] * tanh(c[k])
    return h_arr


def mlp_eval(list weights, list biases, double[::1] x):
    """MLP forward (ReLU hidden, linear output); returns output and pre-activations."""
    cdef int n_layers = len(weights)
    cdef int i, k, n_out
    cdef double[:, ::1] w
    cdef double[::1] b
    cdef double[::1] a = x
    cdef double[::1] z
    cdef list pre = []

    for i in range(n_layers):
        w = weights[i]
        b = biases[i]
        n_out = <int> w.shape[1]
        z_arr = np.empty(n_out)
        z = z_arr
        for k in range(n_out):
            z[k] = b[k]
        _xw_plus_y(w, &a[0], &z[0])
        pre.append(z_arr)
        if i == n_layers - 1:
            a = z
        else:
            a_arr = np.empty(n_out)
            a = a_arr
            for k in range(n_out):
                a[k] = z[k] if z[k] > 0.0 else 0.0
    return np.asarray(a), pre


def mlp_input_jac(list weights, list pre):
    """Chain-rule d(output)/d(input) for an MLP evaluated with ``mlp_eval``."""
    cdef int n_layers = len(weights)
    jac_arr = np.ascontiguousarray(np.asarray(weights[n_layers - 1]).T)
    cdef double[:, ::1] jac = jac_arr
    cdef double[:, ::1] nxt
    cdef double[:, ::1] w
    cdef double[::1] p
    cdef int i, r, k
    cdef int n_out = <int> jac.shape[0]
    cdef int mid, n_in, one_i
    cdef double alpha = 1.0
    cdef double beta = 0.0

    for i in range(n_layers - 2, -1, -1):
        w = weights[i]
        p = pre[i]
        mid = <int> w.shape[1]
        n_in = <int> w.shape[0]
        # Zero the columns where the ReLU was inactive.
        for r in range(n_out):
            for k in range(mid):
                if p[k] <= 0.0:
                    jac[r, k] = 0.0
        nxt_arr = np.empty((n_out, n_in))
        nxt = nxt_arr
        # Row-major R = S @ w.T is column-major R.T = w @ S.T; the stored
        # buffers already are those column-major transposes.
        dgemm("T", "N", &n_in, &n_out, &mid, &alpha, &w[0, 0], &mid,
              &jac[0, 0], &mid, &beta, &nxt[0, 0], &n_in)
        jac_arr = nxt_arr
        jac = nxt
    return jac_arr
