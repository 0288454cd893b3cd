"""Hot elementwise kernels with a numba fast path and a pure-numpy fallback.

Matrix products always go through BLAS; what lives here is the fused
elementwise work that otherwise costs several full array passes in numpy
(mish, layer normalization, softmax cross-entropy, the two-hot codec).

Backend selection: the environment variable ``BELIEFPLAN_BACKEND`` may be set
to ``numba`` or ``numpy``. Unset (or ``auto``) picks numba when it imports.
Both paths compute the same formulas; they may differ in the last floating
bits because summation order differs. ``benchmarks/bench_kernels.py`` compares
the two.
"""

from __future__ import annotations

import os

import numpy as np

_LN_EPS = 1e-5


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------


def _softplus_np(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def mish_fwd_np(x):
    return x * np.tanh(_softplus_np(x))


def mish_bwd_np(x, gy):
    sp = _softplus_np(x)
    t = np.tanh(sp)
    sig = 1.0 / (1.0 + np.exp(-x))
    return gy * (t + x * (1.0 - t * t) * sig)


def layernorm_fwd_np(x, gain, bias):
    """Row-wise layer norm. Returns (y, xhat, inv_std) for the backward pass."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv_std
    return xhat * gain + bias, xhat, inv_std[:, 0]


def layernorm_bwd_np(xhat, inv_std, gain, gy):
    gxhat = gy * gain
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = (gxhat - m1 - xhat * m2) * inv_std[:, None]
    ggain = (gy * xhat).sum(axis=0)
    gbias = gy.sum(axis=0)
    return gx, ggain, gbias


def softmax_np(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softxent_fwd_np(logits, weights):
    """Soft cross-entropy of rows of ``logits`` against target ``weights``.

    Returns (per-row loss, per-row softmax probabilities).
    """
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    denom = e.sum(axis=1, keepdims=True)
    logp = z - np.log(denom)
    loss = -(weights * logp).sum(axis=1)
    return loss, e / denom


def lnmish_fwd_np(x, gain, bias):
    """Fused layer norm + mish, inference only (no cached intermediates)."""
    y = layernorm_fwd_np(x, gain, bias)[0]
    return mish_fwd_np(y)


def decode_logits_np(logits, centers, centers_symexp_pos):
    """Softmax over symlog bins, symmetric expectation, symexp back.

    ``centers_symexp_pos`` is unused on this path; kept for signature parity.
    """
    p = softmax_np(logits)
    k = centers.shape[0]
    half = k // 2
    pos = centers[k - half :]
    diff = p[:, k - half :] - p[:, half - 1 :: -1]
    v = diff @ pos
    return np.sign(v) * np.expm1(np.abs(v))


def twohot_encode_np(values, centers, step):
    """Interpolation weights of ``values`` (already transformed) over bins.

    Out-of-range values clamp to the outermost bin. ``step`` is the exact
    uniform spacing the centers were built from.
    """
    k = centers.shape[0]
    v = np.clip(values, centers[0], centers[-1])
    idx = np.clip(((v - centers[0]) / step).astype(np.int64), 0, k - 2)
    frac = (v - centers[idx]) / step
    frac = np.clip(frac, 0.0, 1.0)
    out = np.zeros((values.shape[0], k))
    rows = np.arange(values.shape[0])
    out[rows, idx] = 1.0 - frac
    out[rows, idx + 1] += frac
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

_requested = os.environ.get("BELIEFPLAN_BACKEND", "auto").lower()
_numba_ok = False
if _requested in ("auto", "numba"):
    try:
        from numba import njit

        _numba_ok = True
    except ImportError:
        if _requested == "numba":
            raise

if _numba_ok:

    # tanh(softplus(x)) == (u^2 + 2u) / (u^2 + 2u + 2) with u = exp(x); one
    # transcendental per element instead of three. Above the cutoff the ratio
    # is 1 to beyond double precision.
    @njit(cache=True)
    def mish_fwd_nb(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                v = x[i, j]
                if v > 20.0:
                    out[i, j] = v
                else:
                    u = np.exp(v)
                    w = u * u + 2.0 * u
                    out[i, j] = v * (w / (w + 2.0))
        return out

    @njit(cache=True)
    def mish_bwd_nb(x, gy):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                v = x[i, j]
                if v > 20.0:
                    out[i, j] = gy[i, j]
                else:
                    u = np.exp(v)
                    w = u * u + 2.0 * u
                    t = w / (w + 2.0)
                    sig = u / (1.0 + u)
                    out[i, j] = gy[i, j] * (t + v * (1.0 - t * t) * sig)
        return out

    @njit(cache=True)
    def layernorm_fwd_nb(x, gain, bias):
        n, d = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        inv_std = np.empty(n)
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mu
                var += c * c
            var /= d
            istd = 1.0 / np.sqrt(var + _LN_EPS)
            inv_std[i] = istd
            for j in range(d):
                h = (x[i, j] - mu) * istd
                xhat[i, j] = h
                y[i, j] = h * gain[j] + bias[j]
        return y, xhat, inv_std

    @njit(cache=True)
    def layernorm_bwd_nb(xhat, inv_std, gain, gy):
        n, d = xhat.shape
        gx = np.empty_like(xhat)
        ggain = np.zeros(d)
        gbias = np.zeros(d)
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                gh = gy[i, j] * gain[j]
                m1 += gh
                m2 += gh * xhat[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                gh = gy[i, j] * gain[j]
                gx[i, j] = (gh - m1 - xhat[i, j] * m2) * inv_std[i]
                ggain[j] += gy[i, j] * xhat[i, j]
                gbias[j] += gy[i, j]
        return gx, ggain, gbias

    @njit(cache=True)
    def softmax_nb(x):
        n, d = x.shape
        out = np.empty_like(x)
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, d):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(d):
                e = np.exp(x[i, j] - mx)
                out[i, j] = e
                s += e
            for j in range(d):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def softxent_fwd_nb(logits, weights):
        n, d = logits.shape
        probs = np.empty_like(logits)
        loss = np.empty(n)
        for i in range(n):
            mx = logits[i, 0]
            for j in range(1, d):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            s = 0.0
            for j in range(d):
                e = np.exp(logits[i, j] - mx)
                probs[i, j] = e
                s += e
            logz = np.log(s)
            acc = 0.0
            for j in range(d):
                acc += weights[i, j] * (logits[i, j] - mx - logz)
                probs[i, j] /= s
            loss[i] = -acc
        return loss, probs

    @njit(cache=True)
    def lnmish_fwd_nb(x, gain, bias):
        n, d = x.shape
        out = np.empty_like(x)
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mu
                var += c * c
            var /= d
            istd = 1.0 / np.sqrt(var + _LN_EPS)
            for j in range(d):
                v = (x[i, j] - mu) * istd * gain[j] + bias[j]
                if v > 20.0:
                    out[i, j] = v
                else:
                    u = np.exp(v)
                    w = u * u + 2.0 * u
                    out[i, j] = v * (w / (w + 2.0))
        return out

    @njit(cache=True)
    def decode_logits_nb(logits, centers, centers_symexp_pos):
        n, k = logits.shape
        half = k // 2
        out = np.empty(n)
        e = np.empty(k)
        for i in range(n):
            mx = logits[i, 0]
            for j in range(1, k):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            s = 0.0
            for j in range(k):
                e[j] = np.exp(logits[i, j] - mx)
                s += e[j]
            v = 0.0
            for j in range(half):
                v += (e[k - half + j] / s - e[half - 1 - j] / s) * centers[k - half + j]
            if v >= 0.0:
                out[i] = np.expm1(v)
            else:
                out[i] = -np.expm1(-v)
        return out

    @njit(cache=True)
    def twohot_encode_nb(values, centers, step):
        n = values.shape[0]
        k = centers.shape[0]
        out = np.zeros((n, k))
        for i in range(n):
            v = values[i]
            if v <= centers[0]:
                out[i, 0] = 1.0
                continue
            if v >= centers[-1]:
                out[i, k - 1] = 1.0
                continue
            idx = int((v - centers[0]) / step)
            if idx > k - 2:
                idx = k - 2
            frac = (v - centers[idx]) / step
            if frac < 0.0:
                frac = 0.0
            elif frac > 1.0:
                frac = 1.0
            out[i, idx] = 1.0 - frac
            out[i, idx + 1] += frac
        return out


_use_numba = _numba_ok and _requested in ("auto", "numba")

BACKEND = "numba" if _use_numba else "numpy"

if _use_numba:
    mish_fwd = mish_fwd_nb
    mish_bwd = mish_bwd_nb
    layernorm_fwd = layernorm_fwd_nb
    layernorm_bwd = layernorm_bwd_nb
    softmax = softmax_nb
    softxent_fwd = softxent_fwd_nb
    twohot_encode = twohot_encode_nb
    lnmish_fwd = lnmish_fwd_nb
    decode_logits = decode_logits_nb
else:
    mish_fwd = mish_fwd_np
    mish_bwd = mish_bwd_np
    layernorm_fwd = layernorm_fwd_np
    layernorm_bwd = layernorm_bwd_np
    softmax = softmax_np
    softxent_fwd = softxent_fwd_np
    twohot_encode = twohot_encode_np
    lnmish_fwd = lnmish_fwd_np
    decode_logits = decode_logits_np


def warmup():
    """Trigger JIT compilation of every kernel (no-op on the numpy path)."""
    x = np.zeros((2, 3))
    g = np.ones(3)
    b = np.zeros(3)
    mish_bwd(x, mish_fwd(x))
    _, xhat, istd = layernorm_fwd(x, g, b)[0:3]
    layernorm_bwd(xhat, istd, g, x)
    softmax(x)
    softxent_fwd(x, np.full((2, 3), 1.0 / 3.0))
    twohot_encode(np.zeros(2), np.linspace(-1.0, 1.0, 5), 0.5)
    lnmish_fwd(x, g, b)
    decode_logits(x, np.array([-1.0, 0.0, 1.0]), None)
