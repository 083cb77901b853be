"""Explicit weights for the PARITY and majority transformers."""

from __future__ import annotations

import math
from fractions import Fraction
from itertools import product

import numpy as np

from ..model import BOT, AttentionLayerParams, EmbeddingSpec, TransformerModel
from .formulas import F0, FPRIME0
from .layout import PE_NAMES, CoordinateLayout
from .params import ConstructionParams

VOCAB = ("0", "1", BOT)
READOUT_THRESHOLD = 0.05  # half of the 0.1 offset in the sign-pattern units


class _LayerBuilder:
    """Accumulates one layer's matrices by coordinate name."""

    def __init__(self, layout: CoordinateLayout, heads: int):
        d = layout.d
        self.layout = layout
        self.scale = math.sqrt(d)
        self.Q = np.zeros((heads, d, d))
        self.K = np.zeros((heads, d, d))
        self.V = np.zeros((heads, d, d))
        self.W_O = np.hstack([np.eye(d)] * heads)
        self.W1 = np.zeros((d, d))
        self.W2 = np.zeros((d, d))
        self.b1 = np.zeros(d)
        self.b2 = np.zeros(d)
        self._hidden = 0

    def query(self, head, slot, name, coef):
        # pre-multiplied so that the 1/sqrt(d) of the logit cancels
        self.Q[head, slot, self.layout[name]] += coef * self.scale

    def key(self, head, slot, name, coef=1.0):
        self.K[head, slot, self.layout[name]] += coef

    def value(self, head, target, source, coef=1.0):
        self.V[head, self.layout[target], self.layout[source]] += coef

    def unit(self, inputs: dict, bias=0.0) -> int:
        k = self._hidden
        self._hidden += 1
        for name, coef in inputs.items():
            self.W1[k, self.layout[name]] += coef
        self.b1[k] = bias
        return k

    def emit(self, hidden: int, target: str, coef=1.0):
        self.W2[self.layout[target], hidden] += coef

    def passthrough(self, *names):
        for name in names:
            self.emit(self.unit({name: 1.0}), name)

    def build(self) -> AttentionLayerParams:
        return AttentionLayerParams(self.Q, self.K, self.V, self.W_O, self.W1, self.W2, self.b1, self.b2)


def _one(lb: _LayerBuilder, head: int, slot: int, coef: float, side: str):
    # the constant 1 is even + odd
    add = lb.query if side == "q" else lb.key
    add(head, slot, "even", coef)
    add(head, slot, "odd", coef)


def _gamma_head(lb, head, x, gamma, delta):
    """Logits (-ln n + delta)(1 - x_i), value 10 x."""
    lb.query(head, 0, "ln_i", -1.0)
    _one(lb, head, 0, delta, "q")
    _one(lb, head, 0, 1.0, "k")
    lb.key(head, 0, x, -1.0)
    lb.value(head, gamma, x, 10.0)


def _Gamma_head(lb, head, gamma, Gamma):
    """Logits gamma ln i, value i^10."""
    lb.query(head, 0, gamma, 1.0)
    lb.key(head, 0, "ln_i")
    lb.value(head, Gamma, "i_pow10")


def _z_head(lb, head, Gamma, z, C):
    """Logits -2 Gamma C/i - tau_n (C/i)^2 - 2 tau_n A_n C/i, value (-1)^i."""
    lb.query(head, 0, Gamma, -2 * C)
    lb.query(head, 0, "abs_tau_A", 2 * C)  # -2 tau_n A_n = 2 |tau_n A_n|
    lb.key(head, 0, "inv_i")
    lb.query(head, 1, "tau_i", -C * C)
    lb.key(head, 1, "inv_i2")
    lb.value(head, z, "even", 1.0)
    lb.value(head, z, "odd", -1.0)


def _embedding(layout: CoordinateLayout, params: ConstructionParams) -> EmbeddingSpec:
    te = {tok: np.zeros(layout.d) for tok in VOCAB}
    te["1"][layout["bit"]] = 1.0
    return EmbeddingSpec(layout.d, te, layout.positional_spec(params.alpha, params.M))


def _constant_C(alpha) -> float:
    return float(-FPRIME0) * alpha


def build_restricted_model(params: ConstructionParams, masking: str = "causal") -> TransformerModel:
    """3 layers, 1 head; computes PARITY when 1 <= Sigma <= c n.

    Layer 1 computes gamma, layer 2 Gamma and layer 3 z; the output logits
    are z for token 0, -z for token 1 and 0 for the tie token.
    """
    layout = CoordinateLayout.restricted()
    C = _constant_C(params.alpha)

    l1 = _LayerBuilder(layout, 1)
    _gamma_head(l1, 0, "bit", "gamma", params.delta)
    l1.passthrough("gamma", *PE_NAMES)

    l2 = _LayerBuilder(layout, 1)
    _Gamma_head(l2, 0, "gamma", "Gamma")
    l2.passthrough("Gamma", "inv_i", "inv_i2", "tau_i", "abs_tau_A", "even", "odd")

    l3 = _LayerBuilder(layout, 1)
    _z_head(l3, 0, "Gamma", "z", C)
    # z may be negative: pass it as ReLU(z + 1) - 1
    l3.emit(l3.unit({"z": 1.0}, bias=1.0), "z")
    l3.b2[layout["z"]] = -1.0

    W = np.zeros((3, layout.d))
    W[0, layout["z"]] = 1.0
    W[1, layout["z"]] = -1.0
    return TransformerModel(
        VOCAB, (l1.build(), l2.build(), l3.build()), _embedding(layout, params), W, masking,
        params.precision, f"parity-restricted(alpha={params.alpha}, c={params.c})",
    )


def sign_patterns(M: int) -> list:
    """All s in {+1,-1}^M with an even number of -1 entries."""
    return [s for s in product((1, -1), repeat=M) if s.count(-1) % 2 == 0]


def build_full_model(params: ConstructionParams, d: int | None = None, masking: str = "causal") -> TransformerModel:
    """4 layers with M heads; computes PARITY on every input of length >= n_min.

    Layer 1 splits x into M strings in its feed-forward network; layers 2-4
    run the restricted construction on every split string in parallel, one
    head each.  The last feed-forward network sums
    ReLU(sum_r s_r z^r - M + 0.1) over sign patterns s with an even number
    of minus signs.
    """
    M = params.M
    layout = CoordinateLayout.full(M, d)
    C = _constant_C(params.alpha)

    l1 = _LayerBuilder(layout, M)
    for r in range(M):
        l1.emit(l1.unit({"bit": 1.0, f"res_{r}": 1.0}, bias=-1.0), f"x_{r}")
        l1.emit(l1.unit({f"start_{r}": 1.0}), f"x_{r}")
    l1.passthrough(*PE_NAMES)

    l2 = _LayerBuilder(layout, M)
    for r in range(M):
        _gamma_head(l2, r, f"x_{r}", f"gamma_{r}", params.delta)
    l2.passthrough(*(f"gamma_{r}" for r in range(M)), *PE_NAMES)

    l3 = _LayerBuilder(layout, M)
    for r in range(M):
        _Gamma_head(l3, r, f"gamma_{r}", f"Gamma_{r}")
    l3.passthrough(*(f"Gamma_{r}" for r in range(M)), "inv_i", "inv_i2", "tau_i", "abs_tau_A", "even", "odd")

    l4 = _LayerBuilder(layout, M)
    for r in range(M):
        _z_head(l4, r, f"Gamma_{r}", f"z_{r}", C)
    for s in sign_patterns(M):
        l4.emit(l4.unit({f"z_{r}": float(s[r]) for r in range(M)}, bias=-M + 0.1), "score")
    l4.b2[layout["unit"]] = 1.0

    W = np.zeros((3, layout.d))
    W[0, layout["score"]], W[0, layout["unit"]] = 1.0, -READOUT_THRESHOLD
    W[1, layout["score"]], W[1, layout["unit"]] = -1.0, READOUT_THRESHOLD
    return TransformerModel(
        VOCAB, (l1.build(), l2.build(), l3.build(), l4.build()), _embedding(layout, params), W, masking,
        params.precision, f"parity-full(alpha={params.alpha}, c={params.c}, M={M})",
    )


def build_majority_model(masking: str = "full") -> TransformerModel:
    """1 layer, 1 head; outputs 1 iff more than half of the bits are 1.

    Uniform attention averages the bits.  The feed-forward network outputs
    q = mean - 1/2 - 1/(4n), which is never 0 and is positive exactly for
    majorities; the logits are q for token 1 and -q for token 0.
    """
    layout = CoordinateLayout(("bit", "quarter_inv_i", "q"), 3, ("quarter_inv_i",))
    lb = _LayerBuilder(layout, 1)
    lb.value(0, "q", "bit")
    hidden = lb.unit({"q": 1.0, "quarter_inv_i": -1.0}, bias=1.0)
    lb.emit(hidden, "q")
    lb.b2[layout["q"]] = -1.5
    te = {tok: np.zeros(3) for tok in VOCAB}
    te["1"][layout["bit"]] = 1.0
    pe = ((layout["quarter_inv_i"], {"kind": "power", "exponent": -1, "scale": 0.25}),)
    W = np.zeros((3, 3))
    W[0, layout["q"]] = -1.0
    W[1, layout["q"]] = 1.0
    return TransformerModel(VOCAB, (lb.build(),), EmbeddingSpec(3, te, pe), W, masking, name="majority")


def positional_encoding(i: int, layout: CoordinateLayout, params: ConstructionParams, precision=None):
    """PE(i) for a construction layout."""
    spec = EmbeddingSpec(layout.d, {}, layout.positional_spec(params.alpha, params.M))
    return spec.positional_encoding(i, precision or params.precision)


def expected_constants(params: ConstructionParams) -> dict:
    return {"f0": F0, "fprime0": FPRIME0, "C": Fraction(-FPRIME0) * Fraction(params.alpha)}
