"""Average sensitivity, hypercube edge cuts and the affine form of 1-layer attention."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .backend import resolve
from .engine import evaluate_bits, trace_last_position
from .errors import DimensionError, InvalidInputError, NotBooleanError
from .model import TransformerModel, random_model

N_CAP = 20


def _check_arity(n: int, n_cap: int = N_CAP):
    if not isinstance(n, (int, np.integer)) or n < 0:
        raise InvalidInputError(f"arity must be a non-negative integer, got {n!r}")
    if n > n_cap:
        raise InvalidInputError(f"arity {n} exceeds the enumeration cap {n_cap}")


def all_inputs(n: int) -> np.ndarray:
    """Every x in {0,1}^n as rows, in ascending binary order with x_1 most significant."""
    idx = np.arange(2**n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts) & 1).astype(np.uint8)


def _index(x) -> int:
    k = 0
    for b in x:
        k = 2 * k + int(b)
    return k


def _parse_bits(x) -> list:
    if isinstance(x, str):
        if set(x) - {"0", "1"}:
            raise InvalidInputError(f"not a bit string: {x!r}")
        return [int(c) for c in x]
    bits = [int(b) for b in x]
    if any(b not in (0, 1) for b in bits):
        raise InvalidInputError("bits must be 0 or 1")
    return bits


@dataclass(frozen=True, eq=False)
class BooleanFunction:
    """f: {0,1}^n -> {0,1} as a truth table in ascending binary order (x_1 most significant)."""

    n: int
    table: np.ndarray
    n_cap: int = N_CAP

    def __post_init__(self):
        _check_arity(self.n, self.n_cap)
        t = np.asarray(self.table)
        if t.shape != (2**self.n,):
            raise InvalidInputError(f"truth table needs {2**self.n} entries, got shape {t.shape}")
        if not np.all((t == 0) | (t == 1)):
            raise InvalidInputError("truth table entries must be 0 or 1")
        t = t.astype(np.uint8)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def __call__(self, x) -> int:
        bits = _parse_bits(x)
        if len(bits) != self.n:
            raise InvalidInputError(f"expected {self.n} bits, got {len(bits)}")
        return int(self.table[_index(bits)])

    def __eq__(self, other):
        return isinstance(other, BooleanFunction) and self.n == other.n and np.array_equal(self.table, other.table)

    @classmethod
    def from_callable(cls, n: int, fn) -> BooleanFunction:
        _check_arity(n)
        return cls(n, np.array([int(fn(tuple(int(b) for b in x))) for x in all_inputs(n)], dtype=np.uint8))

    @classmethod
    def parity(cls, n: int) -> BooleanFunction:
        return cls(n, all_inputs(n).sum(axis=1) % 2)

    @classmethod
    def majority(cls, n: int) -> BooleanFunction:
        return cls(n, (2 * all_inputs(n).sum(axis=1) > n).astype(np.uint8))

    @classmethod
    def constant(cls, n: int, value: int = 0) -> BooleanFunction:
        return cls(n, np.full(2**n, value, dtype=np.uint8))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> BooleanFunction:
        return cls(n, rng.integers(0, 2, size=2**n))

    def to_hex(self) -> str:
        """``"<n>:<hex>"`` with the table packed big-endian, 8 entries per byte."""
        packed = np.packbits(self.table).tobytes()
        return f"{self.n}:{packed.hex()}"

    @classmethod
    def from_hex(cls, text: str) -> BooleanFunction:
        try:
            head, body = text.strip().split(":", 1)
            n = int(head)
            raw = np.frombuffer(bytes.fromhex(body), dtype=np.uint8)
        except ValueError as exc:
            raise InvalidInputError(f"malformed hex truth table: {exc}") from None
        _check_arity(n)
        size = 2**n
        if len(raw) != (size + 7) // 8:
            raise InvalidInputError(f"arity {n} needs {(size + 7) // 8} bytes, got {len(raw)}")
        bits = np.unpackbits(raw)
        if bits[size:].any():
            raise InvalidInputError("nonzero padding bits in hex truth table")
        return cls(n, bits[:size])


def truth_table(model: TransformerModel, n: int, masking: str | None = None, precision=None, n_cap: int = N_CAP) -> BooleanFunction:
    """The function computed by ``model`` on {0,1}^n.

    Raises NotBooleanError, carrying the first offending input, when some
    output is not 0 or 1.
    """
    _check_arity(n, n_cap)
    if n < 1:
        raise InvalidInputError("inputs must have at least one bit")
    if masking is not None and masking != model.masking:
        model = model.with_masking(masking)
    X = all_inputs(n)
    out = evaluate_bits(model, X, precision)
    zero, one = model.token_ids(["0", "1"])
    bad = np.flatnonzero((out != zero) & (out != one))
    if bad.size:
        k = int(bad[0])
        witness = "".join(map(str, X[k]))
        token = model.vocabulary[int(out[k])]
        raise NotBooleanError(f"output {token!r} on input {witness}", witness, token)
    return BooleanFunction(n, (out == one).astype(np.uint8), n_cap)


def _flip_diffs(f: BooleanFunction) -> np.ndarray:
    """(n, 2^n) array: entry [k, x] is 1 when flipping bit k+1 of x changes f."""
    idx = np.arange(2**f.n)
    out = np.empty((f.n, 2**f.n), dtype=np.uint8)
    for k in range(f.n):
        out[k] = f.table ^ f.table[idx ^ (1 << (f.n - 1 - k))]
    return out


def sensitivity_at(f: BooleanFunction, x) -> int:
    bits = _parse_bits(x)
    if len(bits) != f.n:
        raise InvalidInputError(f"expected {f.n} bits, got {len(bits)}")
    k = _index(bits)
    return sum(int(f.table[k] != f.table[k ^ (1 << (f.n - 1 - j))]) for j in range(f.n))


def sensitive_edge_count(f: BooleanFunction) -> int:
    return int(_flip_diffs(f).sum()) // 2


def average_sensitivity(f: BooleanFunction) -> Fraction:
    """as(f) = sum_x s_x(f) / 2^n, exactly."""
    total = int(_flip_diffs(f).sum())
    value = Fraction(total, 2**f.n)
    assert value == Fraction(2 * sensitive_edge_count(f), 2**f.n)
    return value


def majority_average_sensitivity(n: int) -> Fraction:
    """Closed form 2 C(n, (n-1)/2) ((n+1)/2) / 2^n for odd n."""
    if n < 1 or n % 2 == 0:
        raise InvalidInputError("the closed form holds for odd n")
    return Fraction(2 * math.comb(n, (n - 1) // 2) * ((n + 1) // 2), 2**n)


@dataclass(frozen=True, eq=False)
class Hyperplane:
    """The predicate <w, x> > b; points on the hyperplane count as the non-positive side."""

    w: np.ndarray
    b: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise InvalidInputError("normal must be a non-empty vector")
        if not np.any(w != 0):
            raise InvalidInputError("normal must not be the zero vector")
        if not np.all(np.isfinite(w)) or not math.isfinite(self.b):
            raise InvalidInputError("hyperplane coefficients must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))

    @classmethod
    def axis(cls, n: int, k: int, b: float = 0.5) -> Hyperplane:
        w = np.zeros(n)
        w[k] = 1.0
        return cls(w, b)


def _cut_counts(X: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cut counts for the hyperplanes given by the columns of W (n, T) and offsets b (T,)."""
    n = X.shape[1]
    side = X @ W > b
    idx = np.arange(2**n)
    total = np.zeros(W.shape[1], dtype=np.int64)
    for k in range(n):
        bit = 1 << (n - 1 - k)
        low = idx[(idx & bit) == 0]
        total += np.count_nonzero(side[low] != side[low | bit], axis=0)
    return total


def cut_edges(h: Hyperplane, n: int, n_cap: int = N_CAP) -> int:
    """Hypercube edges whose endpoints fall on different sides of ``h``."""
    _check_arity(n, n_cap)
    if h.w.size != n:
        raise DimensionError(f"normal has {h.w.size} coordinates, cube has {n}")
    return int(_cut_counts(all_inputs(n).astype(np.float64), h.w[:, None], np.array([h.b]))[0])


def max_cut_ratio(n: int, trials: int, rng: np.random.Generator, batch: int = 64) -> float:
    """max over random hyperplanes of cut_edges / (sqrt(n) 2^n).

    Normals are uniform on the sphere; offsets are uniform over the range of
    <w, x> on the cube so that every draw can cut something.
    """
    _check_arity(n)
    X = all_inputs(n).astype(np.float64)
    best = 0
    for start in range(0, trials, batch):
        T = min(batch, trials - start)
        W = rng.standard_normal((n, T))
        W /= np.linalg.norm(W, axis=0)
        lo, hi = np.minimum(W, 0).sum(axis=0), np.maximum(W, 0).sum(axis=0)
        b = rng.uniform(lo, hi)
        best = max(best, int(_cut_counts(X, W, b).max()))
    return best / (math.sqrt(n) * 2**n)


@dataclass(frozen=True, eq=False)
class AffineDecomposition:
    """Affine forms l_0 .. l_d on {0,1}^(n-1) for a fixed last token.

    ``l_k(x) = constants[k] + coefficients[k] @ x``.  Every form carries the
    common factor exp(-log_scale), which cancels in l_k / l_0.  theta0/theta1
    are the logits of position i for x_i = 0/1 and rho0/rho1 the head values
    V a_i.
    """

    n: int
    last_bit: int
    coefficients: np.ndarray  # (d + 1, n - 1)
    constants: np.ndarray  # (d + 1,)
    log_scale: float
    theta0: np.ndarray
    theta1: np.ndarray
    rho0: np.ndarray
    rho1: np.ndarray

    def forms(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.constants + x @ self.coefficients.T

    def gamma(self, x):
        """(l_1(x), ..., l_d(x)) / l_0(x), the feed-forward input at the last position."""
        l = self.forms(x)
        return l[..., 1:] / l[..., :1]


def affine_decompose(model: TransformerModel, n: int, last_bit: int) -> AffineDecomposition:
    if model.num_layers != 1 or model.heads != 1:
        raise DimensionError("affine decomposition needs a 1-layer 1-head model")
    if n < 2:
        raise InvalidInputError("need n >= 2")
    if last_bit not in (0, 1):
        raise InvalidInputError("last_bit must be 0 or 1")
    layer = model.layers[0]
    d = model.d
    pe = model.embedding.positional_matrix(n, resolve("double"))
    te = model.embedding.token_embedding
    a0 = te["0"][None, :] + pe[: n - 1]
    a1 = te["1"][None, :] + pe[: n - 1]
    an = te[str(last_bit)] + pe[n - 1]
    Q, K, V = layer.Q[0], layer.K[0], layer.V[0]
    q = Q @ an
    scale = 1.0 / math.sqrt(d)
    theta0 = (a0 @ K.T) @ q * scale
    theta1 = (a1 @ K.T) @ q * scale
    theta_n = float((K @ an) @ q * scale)
    rho0, rho1, rho_n = a0 @ V.T, a1 @ V.T, V @ an
    m = max(theta0.max(), theta1.max(), theta_n)
    e0, e1, en = np.exp(theta0 - m), np.exp(theta1 - m), math.exp(theta_n - m)
    # h + a_n = (W_O sum_i e_i rho_i) / l_0 + a_n
    W_O = layer.W_O
    g0 = rho0 @ W_O.T + an
    g1 = rho1 @ W_O.T + an
    gn = W_O @ rho_n + an
    A0 = np.column_stack([e0, e0[:, None] * g0])  # (n-1, d+1)
    A1 = np.column_stack([e1, e1[:, None] * g1])
    constants = A0.sum(axis=0) + np.concatenate([[en], en * gn])
    coefficients = (A1 - A0).T
    return AffineDecomposition(n, last_bit, coefficients, constants, float(m), theta0, theta1, rho0, rho1)


def reconstruction_error(model: TransformerModel, n: int) -> float:
    """Largest relative difference between the affine reconstruction and the engine."""
    worst = 0.0
    X = all_inputs(n - 1)
    for last in (0, 1):
        dec = affine_decompose(model, n, last)
        rec = dec.gamma(X)
        for x, r in zip(X, rec):
            tokens = [str(b) for b in x] + [str(last)]
            ref = np.asarray(trace_last_position(model, tokens, "double")[0]["ffn_input"], dtype=np.float64)
            denom = max(np.max(np.abs(ref)), np.finfo(float).tiny)
            worst = max(worst, float(np.max(np.abs(r - ref)) / denom))
    return worst


@dataclass
class SweepReport:
    trials: int
    ns: tuple
    d: int
    seed: int
    scales: tuple
    distribution: str
    max_ratio: float
    per_case: list  # one dict per (scale, n)
    flagged: list  # (trial, scale, n, ratio) with ratio > FLAG_RATIO
    skipped: int
    controls: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "trials": self.trials, "n": list(self.ns), "d": self.d, "seed": self.seed,
            "scales": list(self.scales), "distribution": self.distribution,
            "max_ratio": self.max_ratio, "per_case": self.per_case,
            "flag_threshold": FLAG_RATIO, "flagged": self.flagged,
            "skipped_non_boolean": self.skipped, "controls": self.controls,
        }


FLAG_RATIO = 1.5


def _sweep_model(rng, d, n_max, scale) -> TransformerModel:
    base = random_model(rng, d, n_max, scale=scale)
    w = base.W[1]
    return TransformerModel(base.vocabulary, base.layers, base.embedding, np.stack([-w, w, np.zeros(d)]), base.masking)


SWEEP_DISTRIBUTION = (
    "entries uniform on [-scale, scale]; random 0/1 token embeddings; tabulated positional "
    "encoding; readout rows (-w, w, 0) for tokens (0, 1, tie)"
)


def sensitivity_sweep(trials: int, ns, d: int, seed: int, scales=(1.0, 10.0, 100.0)) -> SweepReport:
    """as(f_n)/sqrt(n) for random 1-layer 1-head models.

    Each trial draws one model per scale (see SWEEP_DISTRIBUTION) and
    evaluates it at every n.  Lengths where the model emits a non-bit token are skipped
    and counted.
    """
    ns = tuple(int(n) for n in ns)
    for n in ns:
        _check_arity(n)
    rng = np.random.default_rng(seed)
    n_max = max(ns)
    stats = {(s, n): [] for s in scales for n in ns}
    flagged, skipped = [], 0
    for t in range(trials):
        for s in scales:
            model = _sweep_model(rng, d, n_max, s)
            for n in ns:
                try:
                    f = truth_table(model, n)
                except NotBooleanError:
                    skipped += 1
                    continue
                ratio = float(average_sensitivity(f)) / math.sqrt(n)
                stats[(s, n)].append(ratio)
                if ratio > FLAG_RATIO:
                    flagged.append((t, s, n, ratio))
    per_case = [
        {"scale": s, "n": n, "evaluated": len(v), "max_ratio": max(v, default=None),
         "mean_ratio": float(np.mean(v)) if v else None}
        for (s, n), v in stats.items()
    ]
    all_ratios = [r for v in stats.values() for r in v]
    controls = {
        "parity": {n: float(average_sensitivity(BooleanFunction.parity(n))) / math.sqrt(n) for n in ns},
        "majority": {n: float(average_sensitivity(BooleanFunction.majority(n))) / math.sqrt(n) for n in ns},
    }
    return SweepReport(
        trials, ns, d, seed, tuple(scales), SWEEP_DISTRIBUTION,
        max(all_ratios, default=math.nan), per_case, flagged, skipped, controls,
    )
