"""Closed-form reference formulas for the PARITY construction.

The scalar functions are duck-typed: integers and Fractions give exact
rationals, floats give floats, mpmath numbers stay in mpmath.  The vectorized
scan at the bottom evaluates the whole (n, Sigma) table of the last attention
layer in one backend and is what calibration runs on.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..backend import resolve
from ..engine import stable_softmax
from ..errors import InvalidInputError, RangeError

F0 = Fraction(11, 21)
FPRIME0 = Fraction(-100, 441)


def _exact(x):
    return isinstance(x, (int, Fraction)) and not isinstance(x, bool)


def f_rho(rho):
    """(11 + rho) / (21 + 11 rho)."""
    if _exact(rho):
        rho = Fraction(rho)
    den = 21 + 11 * rho
    if den == 0:
        raise InvalidInputError("f has a pole at rho = -21/11")
    return (11 + rho) / den


def tau(n):
    """n^10 (1 + 5/n - 5/(3 n^2))."""
    if _exact(n):
        if n < 1:
            raise InvalidInputError("tau is defined for n >= 1")
        n = Fraction(n)
    return n**10 * (1 + 5 / n - 5 / (3 * n * n))


@dataclass(frozen=True)
class DerivedConstants:
    """C, A_n and tau_n for a given alpha; keeps alpha's numeric type."""

    alpha: object
    f0: Fraction = F0
    fprime0: Fraction = FPRIME0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def C(self):
        return -self.fprime0 * self.alpha

    def A(self, n):
        return -self.f0 + self.fprime0 * self.alpha / n

    def tau(self, n):
        return tau(n)


def _check_sigma(sigma, n):
    if n < 1 or not 1 <= sigma <= n:
        raise RangeError(f"need 1 <= Sigma <= n, got Sigma={sigma}, n={n}")


def gamma_exact(sigma, n, alpha):
    """10 Sigma / (Sigma + (alpha/n)(n - Sigma)), the first-layer output."""
    _check_sigma(sigma, n)
    if _exact(alpha):
        alpha = Fraction(alpha)
    return 10 * sigma / (sigma + alpha * Fraction(n - sigma, n)) if _exact(alpha) else (
        10 * sigma / (sigma + (alpha / n) * (n - sigma))
    )


def Gamma_exact(gamma, n, precision=None):
    """(sum_i i^gamma i^10) / (sum_i i^gamma) by direct summation.

    Integer gamma gives an exact Fraction.  Otherwise the weights are
    computed as exp(gamma (ln i - ln n)) in the requested precision.
    """
    if n < 1:
        raise InvalidInputError("n must be positive")
    if _exact(gamma) and Fraction(gamma).denominator == 1:
        g = int(gamma)
        num = sum(i ** (g + 10) for i in range(1, n + 1))
        den = sum(i**g for i in range(1, n + 1))
        return Fraction(num, den)
    backend = resolve(precision)
    i = backend.arange(1, n + 1)
    logs = backend.log(i)
    w = backend.exp(backend.const(gamma) * (logs - logs[-1]))
    return backend.fsum(w * i**10) / backend.fsum(w)


def layer3_logit(i, n, Gamma, consts: DerivedConstants):
    """-2 Gamma (C/i) - tau_n (C/i)^2 - 2 tau_n A_n (C/i)."""
    u = consts.C / i
    t = consts.tau(n)
    return -2 * Gamma * u - t * u * u - 2 * t * consts.A(n) * u


# Vectorized table of the last attention layer.

def scan_length(n: int, sigmas, alpha, precision=None):
    """Gaps and z for every Sigma in ``sigmas`` at length n.

    Returns ``(gap, z)`` as backend arrays: ``gap[k]`` is the smallest
    difference L_Sigma - L_i over i != Sigma, and ``z[k]`` the softmax
    average of (-1)^i.
    """
    backend = resolve(precision)
    sigmas = np.asarray(sigmas, dtype=np.int64)
    if sigmas.size == 0:
        return backend.zeros(0), backend.zeros(0)
    if sigmas.min() < 1 or sigmas.max() > n:
        raise RangeError(f"Sigma must lie in 1..{n}")
    a = backend.const(Fraction(alpha)) if isinstance(alpha, str) else backend.const(alpha)
    nn = backend.const(n)
    i = backend.arange(1, n + 1)
    S = backend.asarray(sigmas)[:, None]
    gam = backend.const(10) * S / (S + a / nn * (nn - S))
    logs = backend.log(i)
    w = backend.exp(gam * (logs - logs[-1]))
    Gam = (w @ i**10) / np.sum(w, axis=1)
    C = backend.const(-FPRIME0) * a
    A = -backend.const(F0) + backend.const(FPRIME0) * a / nn
    t = nn**10 * (backend.const(1) + backend.const(5) / nn - backend.const(5) / (backend.const(3) * nn * nn))
    u = C / i
    L = -2 * Gam[:, None] * u[None, :] - (t * u * u)[None, :] - (2 * t * A * u)[None, :]
    rows = np.arange(len(sigmas))
    own = L[rows, sigmas - 1]
    others = L.copy()
    others[rows, sigmas - 1] = backend.asarray(-np.inf)
    gap = own - np.max(others, axis=1) if n > 1 else backend.asarray(np.full(len(sigmas), np.inf))
    e = backend.exp(L - np.max(L, axis=1, keepdims=True))
    signs = backend.asarray(np.where(np.arange(1, n + 1) % 2 == 0, 1.0, -1.0))
    z = (e @ signs) / np.sum(e, axis=1)
    return gap, z


def attention_gap(n: int, sigma: int, params, precision=None):
    """min over i != Sigma of L_Sigma - L_i at the last attention layer."""
    if not 1 <= sigma <= params.c * n or sigma > n:
        raise RangeError(f"Sigma={sigma} outside the restricted range 1..{params.c}*{n}")
    gap, _ = scan_length(n, [sigma], params.alpha, precision or params.precision)
    return gap[0]


def z_value(x, params, precision=None):
    """Softmax average of (-1)^i under the last-layer logits for the bit string x."""
    bits = _bits(x)
    n, sigma = len(bits), int(sum(bits))
    if n < params.n_min:
        raise RangeError(f"length {n} is below n_min={params.n_min}")
    if not 1 <= sigma <= params.c * n:
        raise RangeError(f"Sigma={sigma} outside the restricted range 1..{params.c}*{n}")
    backend = resolve(precision or params.precision)
    a = backend.const(params.alpha)
    consts = DerivedConstants(a)
    i = backend.arange(1, n + 1)
    gam = gamma_exact(backend.const(sigma), n, a)
    Gam = Gamma_exact(gam, n, backend)
    L = layer3_logit(i, backend.const(n), Gam, consts)
    signs = backend.asarray(np.where(np.arange(1, n + 1) % 2 == 0, 1.0, -1.0))
    return backend.fsum(stable_softmax(L, backend) * signs)


def _bits(x):
    if isinstance(x, str):
        if set(x) - {"0", "1"}:
            raise InvalidInputError(f"not a bit string: {x!r}")
        return [int(ch) for ch in x]
    bits = [int(b) for b in x]
    if any(b not in (0, 1) for b in bits):
        raise InvalidInputError("bits must be 0 or 1")
    return bits


def split_strings(x, M: int) -> list:
    """The M strings x^r_i = ReLU(x_i + [i = r mod M] - 1) + [i = r + 1]."""
    bits = _bits(x)
    n = len(bits)
    if M < 2 or M % 2:
        raise InvalidInputError(f"M must be a positive even integer, got {M}")
    if n < M:
        raise RangeError(f"need n >= M, got n={n}, M={M}")
    out = []
    for r in range(M):
        out.append(
            [max(bits[i - 1] + (i % M == r) - 1, 0) + (i == r + 1) for i in range(1, n + 1)]
        )
    return out
