"""Model parameters, embeddings and the JSON model format.

A model is the tuple of Definition-style parameters: per-layer query/key/value
matrices for every head, a head-mixing matrix, a position-wise feed-forward
network, a standard-form embedding and an output matrix over the vocabulary.

Weights are stored as binary64 arrays.  Positional encodings are stored
declaratively (a list of named features per coordinate) so that they can be
evaluated in whatever precision the engine runs in and serialized exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend import PrecisionConfig, resolve
from .errors import DimensionError, InvalidInputError

BOT = "⊥"
FORMAT_TAG = "parity-transformer-model/1"
MASKINGS = ("full", "causal")


def _matrix(x, shape, name):
    arr = np.array(x, dtype=np.float64)
    if arr.shape != shape:
        raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AttentionLayerParams:
    """One H-head, d-dimensional attention layer with its feed-forward network."""

    Q: np.ndarray  # (H, d, d)
    K: np.ndarray  # (H, d, d)
    V: np.ndarray  # (H, d, d)
    W_O: np.ndarray  # (d, d*H)
    W1: np.ndarray
    W2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=np.float64)
        if Q.ndim != 3 or Q.shape[1] != Q.shape[2]:
            raise DimensionError(f"query stack must have shape (H, d, d), got {Q.shape}")
        H, d, _ = Q.shape
        if H < 1 or d < 1:
            raise DimensionError("need at least one head and one dimension")
        for name, shape in (
            ("Q", (H, d, d)),
            ("K", (H, d, d)),
            ("V", (H, d, d)),
            ("W_O", (d, d * H)),
            ("W1", (d, d)),
            ("W2", (d, d)),
            ("b1", (d,)),
            ("b2", (d,)),
        ):
            object.__setattr__(self, name, _matrix(getattr(self, name), shape, name))

    @property
    def heads(self) -> int:
        return self.Q.shape[0]

    @property
    def d(self) -> int:
        return self.Q.shape[1]

    @classmethod
    def zeros(cls, d: int, heads: int = 1) -> AttentionLayerParams:
        z = np.zeros((heads, d, d))
        return cls(z, z, z, np.zeros((d, d * heads)), np.zeros((d, d)), np.zeros((d, d)), np.zeros(d), np.zeros(d))

    def to_dict(self):
        return {
            "heads": [
                {"Q": self.Q[k].tolist(), "K": self.K[k].tolist(), "V": self.V[k].tolist()}
                for k in range(self.heads)
            ],
            "W_O": self.W_O.tolist(),
            "W1": self.W1.tolist(),
            "W2": self.W2.tolist(),
            "b1": self.b1.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        heads = data["heads"]
        return cls(
            [h["Q"] for h in heads],
            [h["K"] for h in heads],
            [h["V"] for h in heads],
            data["W_O"],
            data["W1"],
            data["W2"],
            data["b1"],
            data["b2"],
        )


# Positional features.  Each maps a 1-based position i to a real number and
# never looks at the sequence length.

def _feature_values(feature: dict, positions: np.ndarray, backend):
    kind = feature["kind"]
    i = backend.asarray(positions)
    if kind == "log":
        return backend.log(i)
    if kind == "power":
        p = int(feature["exponent"])
        scale = backend.const(Fraction(feature.get("scale", 1)))
        return scale * i**p if p >= 0 else scale / i ** (-p)
    if kind == "tau":
        one = backend.const(1)
        return i**10 * (one + backend.const(5) / i - backend.const(5) / (backend.const(3) * i * i))
    if kind == "abs_tau_A":
        # |tau_i * A_i| with A_i = -11/21 - (100/441) * alpha / i, which is always negative
        tau = _feature_values({"kind": "tau"}, positions, backend)
        alpha = backend.const(Fraction(feature["alpha"]))
        f0 = backend.const(Fraction(11, 21))
        slope = backend.const(Fraction(100, 441))
        return tau * (f0 + slope * alpha / i)
    if kind == "residue":
        m, r = int(feature["modulus"]), int(feature["residue"])
        return backend.asarray((positions % m == r % m).astype(np.float64))
    if kind == "equals":
        return backend.asarray((positions == int(feature["position"])).astype(np.float64))
    if kind == "constant":
        return backend.asarray(np.full(positions.shape, float(feature["value"])))
    if kind == "table":
        values = np.asarray(feature["values"], dtype=np.float64)
        if positions.max() > len(values):
            raise InvalidInputError(
                f"positional table covers positions 1..{len(values)}, asked for {positions.max()}"
            )
        return backend.asarray(values[positions - 1])
    raise InvalidInputError(f"unknown positional feature {kind!r}")


FEATURE_KINDS = ("log", "power", "tau", "abs_tau_A", "residue", "equals", "constant", "table")


@dataclass(frozen=True, eq=False)
class EmbeddingSpec:
    """Standard-form embedding E(x, i, n) = TE(x) + PE(i).

    ``token_embedding`` maps every token to a 0/1 vector.  ``positional`` is a
    list of ``(coordinate, feature)`` pairs; coordinates without a feature are 0.
    Features depend on the position only, so the encoding is length-independent
    by construction.
    """

    d: int
    token_embedding: dict
    positional: tuple = ()
    length_independent: bool = True

    def __post_init__(self):
        te = {}
        for tok, vec in self.token_embedding.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.d,):
                raise DimensionError(f"token embedding of {tok!r} has shape {arr.shape}")
            if not np.all((arr == 0) | (arr == 1)):
                raise InvalidInputError(f"token embedding of {tok!r} must be a 0/1 vector")
            arr.setflags(write=False)
            te[str(tok)] = arr
        object.__setattr__(self, "token_embedding", te)
        pos = []
        for coord, feature in self.positional:
            coord = int(coord)
            if not 0 <= coord < self.d:
                raise DimensionError(f"positional coordinate {coord} outside 0..{self.d - 1}")
            if feature.get("kind") not in FEATURE_KINDS:
                raise InvalidInputError(f"unknown positional feature {feature.get('kind')!r}")
            pos.append((coord, dict(feature)))
        object.__setattr__(self, "positional", tuple(pos))
        if not self.length_independent:
            raise InvalidInputError("only length-independent positional encodings are supported")

    def positional_matrix(self, n: int, backend=None):
        """PE(1), ..., PE(n) as an (n, d) array in the given backend."""
        backend = resolve(backend)
        positions = np.arange(1, n + 1)
        out = backend.zeros((n, self.d))
        for coord, feature in self.positional:
            out[:, coord] = out[:, coord] + _feature_values(feature, positions, backend)
        return out

    def positional_encoding(self, i: int, backend=None):
        if i < 1:
            raise InvalidInputError("positions are 1-based")
        return self.positional_matrix(i, backend)[i - 1]

    def to_dict(self):
        return {
            "d": self.d,
            "token_embedding": {t: v.tolist() for t, v in self.token_embedding.items()},
            "positional": [{"coordinate": c, **f} for c, f in self.positional],
            "length_independent": self.length_independent,
        }

    @classmethod
    def from_dict(cls, data):
        pos = []
        for entry in data.get("positional", []):
            entry = dict(entry)
            pos.append((entry.pop("coordinate"), entry))
        return cls(data["d"], data["token_embedding"], tuple(pos), data.get("length_independent", True))


@dataclass(frozen=True, eq=False)
class TransformerModel:
    """A C-layer transformer with argmax readout and the ⊥ tie rule."""

    vocabulary: tuple
    layers: tuple
    embedding: EmbeddingSpec
    W: np.ndarray
    masking: str = "full"
    precision: PrecisionConfig = field(default_factory=PrecisionConfig)
    name: str = ""

    def __post_init__(self):
        vocab = tuple(str(t) for t in self.vocabulary)
        if len(set(vocab)) != len(vocab):
            raise InvalidInputError("vocabulary has duplicate tokens")
        if BOT not in vocab:
            raise InvalidInputError(f"vocabulary must contain {BOT}")
        object.__setattr__(self, "vocabulary", vocab)
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError("a transformer needs at least one layer")
        d = self.embedding.d
        for k, layer in enumerate(layers):
            if layer.d != d:
                raise DimensionError(f"layer {k + 1} has dimension {layer.d}, embedding has {d}")
            if layer.heads != layers[0].heads:
                raise DimensionError("all layers must have the same number of heads")
        object.__setattr__(self, "layers", layers)
        missing = set(vocab) - set(self.embedding.token_embedding)
        if missing:
            raise InvalidInputError(f"no token embedding for {sorted(missing)}")
        object.__setattr__(self, "W", _matrix(self.W, (len(vocab), d), "W"))
        if self.masking not in MASKINGS:
            raise InvalidInputError(f"masking must be one of {MASKINGS}")
        object.__setattr__(self, "precision", PrecisionConfig.parse(self.precision))

    @property
    def d(self) -> int:
        return self.embedding.d

    @property
    def heads(self) -> int:
        return self.layers[0].heads

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def bot_index(self) -> int:
        return self.vocabulary.index(BOT)

    def token_ids(self, tokens: Sequence) -> np.ndarray:
        index = {t: k for k, t in enumerate(self.vocabulary)}
        try:
            return np.array([index[str(t)] for t in tokens], dtype=np.int64)
        except KeyError as exc:
            raise InvalidInputError(f"unknown token {exc.args[0]!r}") from None

    def token_matrix(self, backend=None):
        backend = resolve(backend)
        return backend.asarray(np.stack([self.embedding.token_embedding[t] for t in self.vocabulary]))

    def with_masking(self, masking: str) -> TransformerModel:
        return TransformerModel(self.vocabulary, self.layers, self.embedding, self.W, masking, self.precision, self.name)

    def with_precision(self, precision) -> TransformerModel:
        return TransformerModel(
            self.vocabulary, self.layers, self.embedding, self.W, self.masking, PrecisionConfig.parse(precision), self.name
        )

    # serialization

    def to_dict(self):
        return {
            "format": FORMAT_TAG,
            "name": self.name,
            "d": self.d,
            "heads": self.heads,
            "num_layers": self.num_layers,
            "vocabulary": list(self.vocabulary),
            "masking": self.masking,
            "precision": str(self.precision),
            "embedding": self.embedding.to_dict(),
            "layers": [layer.to_dict() for layer in self.layers],
            "W": self.W.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != FORMAT_TAG:
            raise InvalidInputError(f"not a {FORMAT_TAG} document")
        model = cls(
            tuple(data["vocabulary"]),
            tuple(AttentionLayerParams.from_dict(layer) for layer in data["layers"]),
            EmbeddingSpec.from_dict(data["embedding"]),
            data["W"],
            data["masking"],
            PrecisionConfig.parse(data.get("precision", "double")),
            data.get("name", ""),
        )
        if (model.d, model.heads, model.num_layers) != (data["d"], data["heads"], data["num_layers"]):
            raise DimensionError("declared dimensions disagree with the stored matrices")
        return model

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, allow_nan=False)

    @classmethod
    def loads(cls, text: str) -> TransformerModel:
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> TransformerModel:
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def random_model(
    rng: np.random.Generator,
    d: int,
    n_max: int,
    layers: int = 1,
    heads: int = 1,
    scale: float = 1.0,
    masking: str = "full",
) -> TransformerModel:
    """Model with entries uniform on [-scale, scale] and a tabulated positional encoding.

    Token embeddings are random 0/1 vectors; the positional table covers
    positions 1..n_max.
    """
    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)

    params = []
    for _ in range(layers):
        params.append(
            AttentionLayerParams(u(heads, d, d), u(heads, d, d), u(heads, d, d), u(d, d * heads), u(d, d), u(d, d), u(d), u(d))
        )
    te = {t: rng.integers(0, 2, size=d).astype(float) for t in ("0", "1", BOT)}
    table = u(n_max, d)
    pe = tuple((c, {"kind": "table", "values": table[:, c].tolist()}) for c in range(d))
    return TransformerModel(("0", "1", BOT), tuple(params), EmbeddingSpec(d, te, pe), u(3, d), masking)

