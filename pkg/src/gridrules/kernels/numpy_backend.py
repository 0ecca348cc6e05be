"""Pure-numpy MLP kernels: the fallback backend.

Network shape is fixed to two ReLU hidden layers and an identity output.
Parameters are passed as the 6-tuple (W1, b1, W2, b2, W3, b3) with
Wk of shape (in_k, out_k).
"""

import numpy as np

NAME = "numpy"


def forward(params, x):
    """Batched forward pass; x has shape (n, in_dim)."""
    w1, b1, w2, b2, w3, b3 = params
    a1 = np.maximum(x @ w1 + b1, 0.0)
    a2 = np.maximum(a1 @ w2 + b2, 0.0)
    return a2 @ w3 + b3


def gradients(params, x, actions, targets):
    """Gradients of mean((Q[i, a_i] - t_i)^2) w.r.t. all parameters.

    Returns (loss, [gW1, gb1, gW2, gb2, gW3, gb3]).
    """
    w1, b1, w2, b2, w3, b3 = params
    n = x.shape[0]
    z1 = x @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2 + b2
    a2 = np.maximum(z2, 0.0)
    q = a2 @ w3 + b3

    idx = np.arange(n)
    err = q[idx, actions] - targets
    loss = float(np.mean(err * err))

    dq = np.zeros_like(q)
    dq[idx, actions] = 2.0 * err / n
    gw3 = a2.T @ dq
    gb3 = dq.sum(axis=0)
    dz2 = (dq @ w3.T) * (z2 > 0.0)
    gw2 = a1.T @ dz2
    gb2 = dz2.sum(axis=0)
    dz1 = (dz2 @ w2.T) * (z1 > 0.0)
    gw1 = x.T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, [gw1, gb1, gw2, gb2, gw3, gb3]


def grad_step(params, x, actions, targets, lr):
    """One in-place SGD step on the squared TD error; returns pre-step loss."""
    loss, grads = gradients(params, x, actions, targets)
    for p, g in zip(params, grads):
        p -= lr * g
    return loss
