"""Grid search for the constants alpha, c, M and n_min.

For every length n up to ``n_cal`` and every Sigma in the region the full
model relies on, the last attention layer is evaluated in closed form.  A
point is good when the gap L_Sigma - min_{i != Sigma} L_i is positive and
z is within ``READOUT_THRESHOLD / M`` of (-1)^Sigma, which is what the final
readout needs.  ``n_min`` is the smallest n >= M from which every length up
to ``n_cal`` is good.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..backend import PrecisionConfig, resolve
from ..errors import CalibrationError
from .builders import READOUT_THRESHOLD
from .formulas import scan_length
from .params import ALPHA_MAX, ConstructionParams, smallest_even_above

DEFAULT_ALPHAS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.55, 0.6, 0.65, 0.7, 0.8, 0.9)
DEFAULT_CS = (0.21, 0.26, 0.34, 0.51)
DEFAULT_N_CAL = 512
TABLE_N_MAX = 64

# Result of calibrate() on the default grid, frozen here so that building a
# model does not require a scan.  A slow test re-runs the search.
DEFAULT_PARAMS = ConstructionParams(alpha=0.6, c=0.34, M=6, n_min=8)
# Its margin: min gap / n^6 over the certified region, n_min <= n <= 512 (attained at n = 8, Sigma = 3).
DEFAULT_G0 = 0.1095


def sigma_bound(n: int, c: float, M: int) -> int:
    """Largest Sigma certified at length n.

    Covers both the restricted range Sigma <= c n and the ones counts
    1..1 + ceil(n/M) of the split strings.
    """
    return min(n, max(math.floor(c * n), 1 + math.ceil(n / M)))


@dataclass
class CandidateResult:
    alpha: float
    c: float
    M: int
    feasible: bool
    n_min: int | None
    g0: float | None  # min gap / n^6 over the certified region
    max_z_error: float | None
    z_tolerance: float
    failures: list = field(default_factory=list)  # (n, Sigma, gap/n^6, z error) at n >= M that fail

    def key(self):
        return (self.n_min, self.M, -self.g0)

    def to_dict(self):
        return {
            "alpha": self.alpha, "c": self.c, "M": self.M, "feasible": self.feasible,
            "n_min": self.n_min, "g0": self.g0, "max_z_error": self.max_z_error,
            "z_tolerance": self.z_tolerance, "failures": self.failures[:20],
        }


@dataclass
class CalibrationReport:
    alphas: tuple
    cs: tuple
    n_cal: int
    precision: str
    candidates: list
    chosen: ConstructionParams | None
    per_length: list  # chosen candidate: (n, Sigma_max, min gap/n^6, max z error)
    table: list  # chosen candidate: (n, Sigma, gap/n^6, z) for n <= TABLE_N_MAX

    def to_dict(self):
        return {
            "grid": {"alpha": list(self.alphas), "c": list(self.cs), "n_cal": self.n_cal},
            "precision": self.precision,
            "selection": "lexicographic (n_min, M, -g0)",
            "candidates": [c.to_dict() for c in self.candidates],
            "chosen": self.chosen.to_dict() if self.chosen else None,
            "chosen_g0": self._chosen_result().g0 if self.chosen else None,
            "per_length": [
                {"n": n, "sigma_max": s, "min_gap_over_n6": g, "max_z_error": e} for n, s, g, e in self.per_length
            ],
            "gap_table": [{"n": n, "sigma": s, "gap_over_n6": g, "z": z} for n, s, g, z in self.table],
        }

    def _chosen_result(self):
        for cand in self.candidates:
            if self.chosen and (cand.alpha, cand.c) == (self.chosen.alpha, self.chosen.c):
                return cand
        return None


def _scan_alpha(args):
    """Per-length arrays (gap/n^6, z error) for Sigma = 1..sigma_max(n)."""
    alpha, bounds, n_cal, precision = args
    backend = resolve(precision)
    rows = {}
    for n in range(2, n_cal + 1):
        sig = np.arange(1, bounds[n] + 1)
        gap, z = scan_length(n, sig, alpha, backend)
        target = np.where(sig % 2 == 0, 1.0, -1.0)
        g = backend.to_float(gap / backend.const(n) ** 6)
        zf = backend.to_float(z)
        rows[n] = (g, np.abs(zf - target), zf)
    return alpha, rows


def _evaluate(alpha, c, rows, n_cal) -> CandidateResult:
    M = smallest_even_above(2 / c)
    tol = READOUT_THRESHOLD / M
    good = {}
    failures = []
    for n in range(M, n_cal + 1):
        g, err, _ = rows[n]
        s = sigma_bound(n, c, M)
        ok = (g[:s] > 0) & (err[:s] <= tol)
        good[n] = bool(ok.all())
        for k in np.flatnonzero(~ok)[:3]:
            failures.append((n, int(k + 1), float(g[k]), float(err[k])))
    n_min = None
    for n in range(n_cal, M - 1, -1):
        if not good[n]:
            break
        n_min = n
    if n_min is None or n_min == n_cal:
        return CandidateResult(alpha, c, M, False, None, None, None, tol, failures)
    s_of = {n: sigma_bound(n, c, M) for n in range(n_min, n_cal + 1)}
    g0 = min(float(rows[n][0][: s_of[n]].min()) for n in s_of)
    zmax = max(float(rows[n][1][: s_of[n]].max()) for n in s_of)
    failures = [f for f in failures if f[0] >= n_min]
    return CandidateResult(alpha, c, M, True, n_min, g0, zmax, tol, failures)


def calibrate(
    alphas=DEFAULT_ALPHAS,
    cs=DEFAULT_CS,
    n_cal: int = DEFAULT_N_CAL,
    precision="double",
    workers: int = 1,
    raise_on_empty: bool = True,
):
    """Search the grid and return ``(params, report)``.

    Candidates are ranked by smallest n_min, then smallest M, then largest
    g0; the ranking is a deterministic function of the scan results, so the
    outcome does not depend on ``workers``.
    """
    alphas = tuple(float(a) for a in alphas)
    cs = tuple(float(c) for c in cs)
    config = PrecisionConfig.parse(precision)
    bounds = {
        n: max(sigma_bound(n, c, smallest_even_above(2 / c)) for c in cs) for n in range(2, n_cal + 1)
    }
    jobs = [(a, bounds, n_cal, config) for a in alphas]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            scans = dict(pool.map(_scan_alpha, jobs))
    else:
        scans = dict(map(_scan_alpha, jobs))

    candidates = [_evaluate(a, c, scans[a], n_cal) for a in alphas for c in cs]
    feasible = [cand for cand in candidates if cand.feasible]
    if not feasible:
        report = CalibrationReport(alphas, cs, n_cal, str(config), candidates, None, [], [])
        if raise_on_empty:
            raise CalibrationError("no feasible (alpha, c) on the grid", report.to_dict())
        return None, report
    best = min(feasible, key=CandidateResult.key)
    params = ConstructionParams(best.alpha, best.c, best.M, best.n_min, config, certified=best.alpha <= ALPHA_MAX)
    rows = scans[best.alpha]
    per_length, table = [], []
    for n in range(best.n_min, n_cal + 1):
        s = sigma_bound(n, best.c, best.M)
        g, err, z = rows[n]
        per_length.append((n, s, float(g[:s].min()), float(err[:s].max())))
        if n <= TABLE_N_MAX:
            table.extend((n, k + 1, float(g[k]), float(z[k])) for k in range(s))
    return params, CalibrationReport(alphas, cs, n_cal, str(config), candidates, params, per_length, table)
