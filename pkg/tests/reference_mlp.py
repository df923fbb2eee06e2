"""Plain-numpy ReLU MLP trained by mini-batch SGD with hand-written backprop.

Shares no code with the package.  It is the oracle for the baseline
reduction: a network with projections disabled and all regularizers off must
follow exactly this loss curve.
"""

import numpy as np


def permutation(seed, epoch, n):
    return np.random.default_rng([seed, epoch, 0x0DE5]).permutation(n)


def sgd_losses(weights, biases, X, y, lr, epochs, batch_size, seed):
    """Train in place; return the squared-error loss of every step."""
    y = y.reshape(-1, 1)
    L = len(weights)
    losses = []
    for epoch in range(epochs):
        order = permutation(seed, epoch, len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            h, pre = [X[idx]], []
            for l in range(L):
                z = h[-1] @ weights[l] + biases[l]
                pre.append(z)
                h.append(z if l == L - 1 else np.where(z > 0, z, 0.0))
            r = h[-1] - y[idx]
            losses.append(float(np.sum(r * r)))
            g = 2.0 * r
            for l in reversed(range(L)):
                if l < L - 1:
                    g = g * (pre[l] > 0)
                gW = h[l].T @ g
                gb = g.sum(axis=0)
                g = g @ weights[l].T
                weights[l] -= lr * gW
                biases[l] -= lr * gb
    return losses
