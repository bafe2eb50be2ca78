"""Slow reference implementations shared by the test modules."""

import numpy as np


def brute_dcor(x, y):
    """Textbook O(n^2) double-centering, full matrices in memory."""
    x = x.reshape(len(x), -1)
    y = y.reshape(len(y), -1)

    def centred(z):
        d = np.sqrt(((z[:, None, :] - z[None, :, :]) ** 2).sum(-1))
        return d - d.mean(0) - d.mean(1)[:, None] + d.mean()

    A, B = centred(x), centred(y)
    vxy, vxx, vyy = (A * B).mean(), (A * A).mean(), (B * B).mean()
    if vxx <= 0 or vyy <= 0:
        return 0.0
    return float(np.sqrt(max(vxy, 0.0) / np.sqrt(vxx * vyy)))
