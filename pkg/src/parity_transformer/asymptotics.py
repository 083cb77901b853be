"""Numerical checks of the power-sum expansions and the gap-argument bounds.

An O(.) statement is checked through a remainder ratio tabulated on a
geometric grid of lengths.  A series is *stable* when its maximum over the
top half of the grid is at most twice its value at the grid midpoint; a
diverging ratio fails loudly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .backend import resolve
from .construction.formulas import FPRIME0, F0, Gamma_exact, f_rho, tau
from .errors import RangeError

LEMMA_PRECISION = "ext:128"
ORDER_RANGES = {0: (0, 100), 1: (2, 100), 2: (5, 100)}
DEFAULT_N_GRID = tuple(2**k for k in range(4, 13))  # 16 .. 4096
MIN_ASYMPTOTIC_N = 16


def geometric_grid(n_lo: int, n_hi: int) -> tuple:
    out, n = [], n_lo
    while n <= n_hi:
        out.append(n)
        n *= 2
    return tuple(out)


def _exact_int(x):
    return isinstance(x, int) or (isinstance(x, Fraction) and x.denominator == 1)


def power_sum(beta, n: int, precision=None):
    """S_beta(n) = 1^beta + ... + n^beta.

    Exact (an int) for non-negative integer beta; otherwise summed as
    exp(beta ln i) in the requested precision (default ext:128).
    """
    if n < 1:
        raise RangeError("n must be positive")
    if beta < 0:
        raise RangeError("beta must be non-negative")
    if _exact_int(beta):
        b = int(beta)
        return sum(i**b for i in range(1, n + 1))
    backend = resolve(precision or LEMMA_PRECISION)
    i = backend.arange(1, n + 1)
    return backend.fsum(backend.exp(backend.const(beta) * backend.log(i)))


def faulhaber_expansion(beta, n: int, order: int, precision=None):
    """Truncated expansion n^(b+1)/(b+1) [+ n^b/2 [+ b n^(b-1)/12]].

    Integer beta gives an exact Fraction.
    """
    if order not in ORDER_RANGES:
        raise RangeError(f"order must be 0, 1 or 2, got {order}")
    lo, hi = ORDER_RANGES[order]
    if not lo <= beta <= hi:
        raise RangeError(f"beta={beta} outside [{lo}, {hi}] for order {order}")
    if _exact_int(beta):
        b, N = Fraction(beta), Fraction(n)
        pw = lambda e: N ** int(e)
    else:
        backend = resolve(precision or LEMMA_PRECISION)
        b, N = backend.const(beta), backend.const(n)
        logn = backend.log(N)
        pw = lambda e: backend.exp(e * logn)
    value = pw(b + 1) / (b + 1)
    if order >= 1:
        value = value + pw(b) / 2
    if order >= 2:
        value = value + b * pw(b - 1) / 12
    return value


def _float(x) -> float:
    if isinstance(x, (int, Fraction)):
        return float(x)
    return float(np.asarray(x, dtype=object).item()) if isinstance(x, np.ndarray) else float(x)


def stable(ns, ratios) -> bool:
    """Top-half max <= 2 x midpoint, with every ratio finite."""
    order = np.argsort(ns)
    r = np.asarray(ratios, dtype=float)[order]
    if r.size == 0 or not np.all(np.isfinite(r)):
        return False
    mid = r.size // 2
    return bool(r[mid:].max() <= 2 * r[mid])


@dataclass
class LemmaReport:
    lemma: str
    grid: dict
    rows: list  # one dict per grid point, each with at least "n" and "ratio"
    series: dict  # label -> {"ns", "ratios", "stable", "constant"}
    ceiling: str
    passed: bool
    warnings: list = field(default_factory=list)

    @property
    def fitted_constant(self) -> float:
        return max((s["constant"] for s in self.series.values()), default=math.nan)

    def to_dict(self):
        return {
            "lemma": self.lemma,
            "grid": self.grid,
            "ceiling": self.ceiling,
            "passed": self.passed,
            "fitted_constant": self.fitted_constant,
            "series": self.series,
            "rows": self.rows,
            "warnings": self.warnings,
        }

    def table(self) -> str:
        keys = [k for k in self.rows[0] if k != "series"] if self.rows else []
        lines = [f"{self.lemma}: {'PASS' if self.passed else 'FAIL'}  ({self.ceiling})"]
        lines.append("  ".join(f"{k:>14}" for k in keys))
        for row in self.rows:
            lines.append("  ".join(_cell(row[k]) for k in keys))
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines)


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:>14.6g}"
    return f"{str(v):>14}"


def _collect(lemma, grid, rows, key, ratio_name, ceiling, ns_all, extra_ok=True):
    series = {}
    for row in rows:
        s = series.setdefault(str(row[key]), {"ns": [], "ratios": []})
        s["ns"].append(row["n"])
        s["ratios"].append(row[ratio_name])
    for s in series.values():
        s["stable"] = stable(s["ns"], s["ratios"])
        r = np.asarray(s["ratios"], dtype=float)[np.argsort(s["ns"])]
        s["constant"] = float(r[r.size // 2:].max()) if r.size else math.nan
    warnings = []
    if not ns_all or max(ns_all) < MIN_ASYMPTOTIC_N:
        warnings.append(f"largest n below {MIN_ASYMPTOTIC_N}: insufficient asymptotic range")
    if len(set(ns_all)) < 3:
        warnings.append("fewer than 3 grid lengths: the stability criterion is weak")
    passed = bool(series) and all(s["stable"] for s in series.values()) and extra_ok
    return LemmaReport(lemma, grid, rows, series, ceiling, passed, warnings)


def check_faulhaber(betas, ns=DEFAULT_N_GRID, order: int = 2, precision=None) -> LemmaReport:
    """Remainder ratios |S - expansion| / n^(beta - order) for every (beta, n)."""
    for beta in betas:
        faulhaber_expansion(beta, 1, order)  # range gate
    rows = []
    for beta in betas:
        for n in ns:
            S = power_sum(beta, n, precision)
            E = faulhaber_expansion(beta, n, order, precision)
            rem = abs(S - E)
            scale = Fraction(n) ** (int(beta) - order) if _exact_int(beta) else None
            if scale is not None:
                ratio = float(Fraction(rem) / scale)
            else:
                backend = resolve(precision or LEMMA_PRECISION)
                ratio = _float(rem / backend.exp(backend.const(beta - order) * backend.log(backend.const(n))))
            rows.append({"beta": float(beta), "n": n, "ratio": ratio})
    return _collect(
        f"faulhaber-order-{order}", {"beta": [float(b) for b in betas], "n": list(ns), "order": order},
        rows, "beta", "ratio", "top-half max <= 2 x midpoint", list(ns),
    )


def check_gamma_bound(sigma: int, n: int, alpha, precision=None) -> dict:
    """Relative error of Gamma against tau_n f(rho) and its ratio to rho/n^2 + 1/n^3."""
    if not 1 <= sigma <= n:
        raise RangeError(f"need 1 <= Sigma <= n, got Sigma={sigma}, n={n}")
    backend = resolve(precision or LEMMA_PRECISION)
    a = backend.const(alpha)
    rho = a * (backend.const(1) / sigma - backend.const(1) / n)
    gamma = backend.const(10) / (1 + rho)
    G = Gamma_exact(gamma, n, backend)
    t = tau(backend.const(n))
    f = f_rho(rho)
    rel = abs(G / (t * f) - 1)
    scale = rho / n**2 + backend.const(1) / backend.const(n) ** 3
    return {
        "sigma": sigma,
        "n": n,
        "alpha": float(alpha),
        "rho": _float(rho),
        "rel_error": _float(rel),
        "ratio": _float(rel / scale),
        "Gamma_over_tau_f": _float(G / (t * f)),
    }


SIGMA_RULES = {
    "1": lambda n: 1,
    "2": lambda n: 2,
    "sqrt(n)": lambda n: max(1, math.isqrt(n)),
    "n/2": lambda n: max(1, n // 2),
    "n": lambda n: n,
}


def check_gamma_grid(alphas=(0.01,), ns=DEFAULT_N_GRID, rules=tuple(SIGMA_RULES), precision=None) -> LemmaReport:
    rows = []
    for alpha in alphas:
        for rule in rules:
            for n in ns:
                row = check_gamma_bound(SIGMA_RULES[rule](n), n, alpha, precision)
                row["series"] = f"alpha={alpha},Sigma={rule}"
                rows.append(row)
    envelope = all(0.5 < r["Gamma_over_tau_f"] < 2 for r in rows if r["n"] >= 16)
    return _collect(
        "gamma-bound", {"alpha": list(alphas), "n": list(ns), "sigma": list(rules)},
        rows, "series", "ratio", "top-half max <= 2 x midpoint; Gamma/(tau f) in (1/2, 2)", list(ns), envelope,
    )


def check_W_bounds(alpha, sigma: int, n: int, precision=None) -> dict:
    """W_i for all i, with W_Sigma Sigma^4/alpha^4 and min_{i != Sigma} -W_i/(alpha^2 (1/i - 1/Sigma)^2)."""
    if not 1 <= sigma <= n:
        raise RangeError(f"need 1 <= Sigma <= n, got Sigma={sigma}, n={n}")
    backend = resolve(precision or LEMMA_PRECISION)
    a = backend.const(alpha)
    one = backend.const(1)
    rho = a * (one / sigma - one / n)
    i = backend.arange(1, n + 1)
    f0, fp0 = backend.const(F0), backend.const(FPRIME0)
    W = -((f_rho(rho) - f0 - fp0 * a * (one / i - one / n)) ** 2)
    w_sigma = W[sigma - 1]
    upper = _float(-w_sigma * sigma**4 / a**4)
    mask = np.arange(1, n + 1) != sigma
    if mask.any():
        lower = _float(np.min((-W[mask]) / (a * a * (one / i[mask] - one / sigma) ** 2)))
    else:
        lower = math.inf
    return {
        "alpha": float(alpha),
        "sigma": sigma,
        "n": n,
        "max_W": _float(np.max(W)),
        "W_sigma_scaled": upper,
        "lower_constant": lower,
    }


def check_W_grid(alpha=0.01, ns=tuple(2**k for k in range(6, 13)), precision=None) -> LemmaReport:
    """W-bound constants over Sigma in {1..sqrt(n)} for each n.

    Per n, the upper constant is the largest W_Sigma Sigma^4/alpha^4 and the
    lower constant the smallest ratio over Sigma; both must be stable in n
    and the lower one bounded away from 0.
    """
    rows = []
    for n in ns:
        entries = [check_W_bounds(alpha, s, n, precision) for s in range(1, math.isqrt(n) + 1)]
        rows.append({
            "n": n,
            "upper": max(e["W_sigma_scaled"] for e in entries),
            "lower": min(e["lower_constant"] for e in entries),
            "max_W": max(e["max_W"] for e in entries),
        })
    inverse = [{"n": r["n"], "label": "1/lower", "ratio": 1 / r["lower"] if r["lower"] > 0 else math.inf} for r in rows]
    upper = [{"n": r["n"], "label": "upper", "ratio": r["upper"]} for r in rows]
    nonpositive = all(r["max_W"] <= 0 for r in rows)
    report = _collect(
        "W-bounds", {"alpha": float(alpha), "n": list(ns), "sigma": "1..isqrt(n)"},
        upper + inverse, "label", "ratio", "upper and 1/lower stable; W_i <= 0", list(ns), nonpositive,
    )
    report.rows = rows
    return report
