# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled MLP kernels for the Q-network hot path.

Same contract as numpy_backend: params are (W1, b1, W2, b2, W3, b3),
two ReLU hidden layers, identity output. Matrix products go straight to
BLAS through scipy's cython bindings, which removes the per-call numpy
overhead that dominates small-batch training steps.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "cython"


cdef void _matmul(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c,
                  bint ta, bint tb) noexcept nogil:
    """c = op(a) @ op(b) for C-contiguous arrays, via column-major dgemm."""
    cdef int m = c.shape[0], n = c.shape[1]
    cdef int k = a.shape[0] if ta else a.shape[1]
    cdef double alpha = 1.0, beta = 0.0
    cdef char cta = b'T' if ta else b'N'
    cdef char ctb = b'T' if tb else b'N'
    cdef int lda = a.shape[1], ldb = b.shape[1]
    # row-major C = op(A) @ op(B)  <=>  col-major C^T = op(B)^T @ op(A)^T
    dgemm(&ctb, &cta, &n, &m, &k, &alpha,
          &b[0, 0], &ldb, &a[0, 0], &lda, &beta, &c[0, 0], &n)


cdef void _bias_relu(double[:, ::1] z, double[::1] b, double[:, ::1] a,
                     bint relu) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            v = z[i, j] + b[j]
            z[i, j] = v
            a[i, j] = v if (not relu or v > 0.0) else 0.0


cdef _forward_cached(params, double[:, ::1] x):
    w1, b1, w2, b2, w3, b3 = params
    n = x.shape[0]
    z1 = np.empty((n, w1.shape[1]))
    a1 = np.empty_like(z1)
    z2 = np.empty((n, w2.shape[1]))
    a2 = np.empty_like(z2)
    q = np.empty((n, w3.shape[1]))
    _matmul(x, w1, z1, False, False)
    _bias_relu(z1, b1, a1, True)
    _matmul(a1, w2, z2, False, False)
    _bias_relu(z2, b2, a2, True)
    _matmul(a2, w3, q, False, False)
    _bias_relu(q, b3, q, False)
    return z1, a1, z2, a2, q


def forward(params, x):
    """Batched forward pass; x has shape (n, in_dim)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _forward_cached(params, x)[4]


def gradients(params, x, actions, targets):
    """Gradients of mean((Q[i, a_i] - t_i)^2); returns (loss, grads)."""
    w1, b1, w2, b2, w3, b3 = params
    x = np.ascontiguousarray(x, dtype=np.float64)
    actions = np.ascontiguousarray(actions, dtype=np.int64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    z1, a1, z2, a2, q = _forward_cached(params, x)

    cdef Py_ssize_t n = x.shape[0], i, j, k
    cdef Py_ssize_t h1 = w1.shape[1], h2 = w2.shape[1], dout = w3.shape[1]
    grads = [np.empty_like(p) for p in params]
    dq = np.zeros((n, dout))
    dz2 = np.empty((n, h2))
    dz1 = np.empty((n, h1))

    cdef double[:, ::1] qv = q, dqv = dq, z1v = z1, z2v = z2
    cdef double[:, ::1] dz1v = dz1, dz2v = dz2
    cdef long long[::1] av = actions
    cdef double[::1] tv = targets
    cdef double err, loss = 0.0
    for i in range(n):
        err = qv[i, av[i]] - tv[i]
        loss += err * err
        dqv[i, av[i]] = 2.0 * err / n

    _matmul(a2, dq, grads[4], True, False)       # gW3 = a2^T dq
    _column_sums(dq, grads[5])
    _matmul(dq, w3, dz2, False, True)            # dz2 = dq w3^T
    _relu_mask(dz2, z2)
    _matmul(a1, dz2, grads[2], True, False)      # gW2 = a1^T dz2
    _column_sums(dz2, grads[3])
    _matmul(dz2, w2, dz1, False, True)           # dz1 = dz2 w2^T
    _relu_mask(dz1, z1)
    _matmul(x, dz1, grads[0], True, False)       # gW1 = x^T dz1
    _column_sums(dz1, grads[1])
    return loss / n, grads


cdef void _relu_mask(double[:, ::1] d, double[:, ::1] z) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(d.shape[0]):
        for j in range(d.shape[1]):
            if z[i, j] <= 0.0:
                d[i, j] = 0.0


cdef void _column_sums(double[:, ::1] d, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    for j in range(d.shape[1]):
        out[j] = 0.0
    for i in range(d.shape[0]):
        for j in range(d.shape[1]):
            out[j] += d[i, j]


def grad_step(params, x, actions, targets, lr):
    """One in-place SGD step on the squared TD error; returns pre-step loss."""
    loss, grads = gradients(params, x, actions, targets)
    cdef double[:, ::1] wv
    cdef double[::1] bv
    cdef Py_ssize_t i, j
    cdef double step = lr
    for p, g in zip(params, grads):
        if p.ndim == 2:
            _axpy2d(p, g, -step)
        else:
            _axpy1d(p, g, -step)
    return loss


cdef void _axpy2d(double[:, ::1] p, double[:, ::1] g, double c) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            p[i, j] += c * g[i, j]


cdef void _axpy1d(double[::1] p, double[::1] g, double c) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(p.shape[0]):
        p[j] += c * g[j]
