"""Two-hot scalar codec over symlog-spaced bins.

Scalars are regressed as interpolated mass over K uniformly spaced bin
centers in symlog space; decoding takes the expectation over centers and maps
back through symexp. Out-of-range scalars clamp to the outermost bins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import ConfigError


def symlog(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log1p(np.abs(x))


def symexp(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.expm1(np.abs(x))


@dataclass
class LogBins:
    """K strictly increasing centers, symmetric about 0, in symlog space."""

    n_bins: int = 41
    limit: float = 10.0  # untransformed magnitude covered by the outer bins
    centers: np.ndarray = field(init=False)
    step: float = field(init=False)

    def __post_init__(self):
        if self.n_bins < 3:
            raise ConfigError(f"need at least 3 bins, got {self.n_bins}")
        if self.limit <= 0:
            raise ConfigError("bin limit must be positive")
        half = float(symlog(self.limit))
        span = self.n_bins - 1
        self.step = 2.0 * half / span
        # build antisymmetric centers exactly: c[m+j] == -c[m-j]
        idx = np.arange(self.n_bins) - span / 2.0
        self.centers = idx * self.step
        if not np.all(np.diff(self.centers) > 0):
            raise ConfigError("bin centers must be strictly increasing")

    def encode(self, y) -> np.ndarray:
        """Two-hot weights for scalar(s) ``y``; rows sum to 1."""
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        return K.twohot_encode(symlog(y), self.centers, self.step)

    def decode(self, weights) -> np.ndarray:
        """Untransformed expectation of probability weights over the centers.

        Summation pairs mirror bins so exactly symmetric weights decode to
        exactly zero.
        """
        squeeze = np.ndim(weights) == 1
        w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        k = self.n_bins
        half = k // 2
        pos = self.centers[k - half :]
        diff = w[:, k - half :] - w[:, half - 1 :: -1]
        out = symexp(diff @ pos)
        return out[0] if squeeze else out

    def decode_logits(self, logits) -> np.ndarray:
        """Softmax the logits, then decode."""
        ln = np.atleast_2d(np.asarray(logits, dtype=np.float64))
        return self.decode(K.softmax(ln))
