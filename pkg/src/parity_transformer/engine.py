"""Softmax-transformer inference.

Semantics follow the classical definition: attention logits
``<K a_i, Q a_j> / sqrt(d)``, softmax-weighted head values, head mixing by
``W_O``, residual added *before* the feed-forward network, whose output
replaces the representation.  The readout takes the last position, applies
``W`` and returns the unique argmax token, or ⊥ on a tie (exact equality).

Two evaluation strategies produce the same last-position state:

* :func:`layer_forward` evaluates every position of one layer literally.
* :func:`transformer_forward` / :func:`evaluate_batch` first derive, from the
  sparsity pattern of the weights, which positions of which layers can
  influence the last position, and skip attention everywhere else.  Skipping
  only drops exact zeros or values that are provably never read, so the
  returned state matches the literal evaluation.
"""

from __future__ import annotations

import functools
import weakref
from dataclasses import dataclass, field

import numpy as np

from .backend import Backend, resolve
from .errors import DimensionError, InvalidInputError, PrecisionError
from .model import AttentionLayerParams, TransformerModel


def _quiet(fn):
    # overflow is detected explicitly by _check_finite and reported as PrecisionError
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(over="ignore", invalid="ignore"):
            return fn(*args, **kwargs)

    return wrapper


def _check_finite(x, backend, what):
    if not backend.all_finite(x):
        raise PrecisionError(f"non-finite value in {what}; retry with an extended precision backend (ext:<bits>)")


def _softmax(logits, backend, mask=None):
    if mask is not None:
        logits = np.where(mask, logits, backend.asarray(-np.inf))
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = backend.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def stable_softmax(logits, precision=None):
    """Normalized exponentials of a finite, non-empty logit vector.

    Logits are shifted by their maximum before exponentiation, so huge but
    finite logits never overflow.

    >>> [round(float(w), 6) for w in stable_softmax([1e9, 1e9 + np.log(2)])]
    [0.333333, 0.666667]
    """
    backend = resolve(precision)
    x = backend.asarray(logits)
    if x.ndim != 1 or x.shape[0] == 0:
        raise InvalidInputError("softmax needs a non-empty vector of logits")
    if not backend.all_finite(x):
        raise InvalidInputError("softmax logits must be finite")
    return _softmax(x, backend)


def _relu(x, backend):
    zero = backend.const(0)
    return np.where(np.asarray(x > zero, dtype=bool), x, zero)


def _support(matrix, axis):
    """Indices of nonzero columns (axis=0) or rows (axis=1)."""
    return np.flatnonzero(np.any(matrix != 0, axis=axis))


@dataclass
class _Head:
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    W_O: np.ndarray  # the d x d block of W_O belonging to this head
    qcols: np.ndarray
    kcols: np.ndarray
    vcols: np.ndarray
    writes: np.ndarray  # rows of W_O this head can reach
    active: bool


@dataclass
class _Layer:
    heads: list
    W1: np.ndarray
    W2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    inv_sqrt_d: object
    d: int
    attend_all: bool = True


def _prepare_layer(layer: AttentionLayerParams, backend: Backend) -> _Layer:
    d = layer.d
    heads = []
    for k in range(layer.heads):
        block = layer.W_O[:, k * d:(k + 1) * d]
        vrows = _support(layer.V[k], axis=1)
        writes = _support(block[:, vrows], axis=1) if vrows.size else np.array([], dtype=int)
        heads.append(
            _Head(
                Q=backend.asarray(layer.Q[k]),
                K=backend.asarray(layer.K[k]),
                V=backend.asarray(layer.V[k]),
                W_O=backend.asarray(block),
                qcols=_support(layer.Q[k], axis=0),
                kcols=_support(layer.K[k], axis=0),
                vcols=_support(layer.V[k], axis=0),
                writes=writes,
                active=bool(writes.size),
            )
        )
    one = backend.const(1)
    return _Layer(
        heads,
        backend.asarray(layer.W1),
        backend.asarray(layer.W2),
        backend.asarray(layer.b1),
        backend.asarray(layer.b2),
        one / backend.sqrt(backend.const(d)),
        d,
    )


def _ffn_inputs(layer: AttentionLayerParams, coords: set) -> set:
    if not coords:
        return set()
    rows = np.array(sorted(coords))
    hidden = _support(layer.W2[rows], axis=0)
    if hidden.size == 0:
        return set()
    return set(_support(layer.W1[hidden], axis=0).tolist())


def plan_attention(model: TransformerModel) -> list:
    """For each layer, whether attention must be evaluated at every position.

    Walks the layers backwards tracking which coordinates are read at the last
    position and at earlier positions.  A layer needs attention at positions
    before the last one only if its head outputs can reach a coordinate that
    some later layer reads there.
    """
    C = model.num_layers
    need_last = set(_support(model.W, axis=0).tolist())
    need_other: set = set()
    attend_all = [False] * C
    for idx in range(C - 1, -1, -1):
        layer = model.layers[idx]
        d = layer.d
        in_last = _ffn_inputs(layer, need_last)
        in_other = _ffn_inputs(layer, need_other)
        written, qc, kc, vc = set(), set(), set(), set()
        for k in range(layer.heads):
            block = layer.W_O[:, k * d:(k + 1) * d]
            vrows = _support(layer.V[k], axis=1)
            rows = _support(block[:, vrows], axis=1) if vrows.size else []
            if len(rows) == 0:
                continue
            written.update(np.asarray(rows).tolist())
            qc.update(_support(layer.Q[k], axis=0).tolist())
            kc.update(_support(layer.K[k], axis=0).tolist())
            vc.update(_support(layer.V[k], axis=0).tolist())
        attend_all[idx] = idx < C - 1 and bool(in_other & written)
        need_last = in_last | qc | kc | vc
        need_other = in_other | kc | vc | (qc if attend_all[idx] else set())
    return attend_all


@dataclass
class _Prepared:
    layers: list
    W: np.ndarray
    TE: np.ndarray
    last_only: bool
    attend_all: list = field(default_factory=list)


_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _prepare(model: TransformerModel, backend: Backend) -> _Prepared:
    per_model = _CACHE.setdefault(model, {})
    prepared = per_model.get(backend.name)
    if prepared is None:
        attend_all = plan_attention(model)
        layers = [_prepare_layer(layer, backend) for layer in model.layers]
        for layer, flag in zip(layers, attend_all):
            layer.attend_all = flag
        prepared = _Prepared(layers, backend.asarray(model.W), model.token_matrix(backend), not any(attend_all), attend_all)
        per_model[backend.name] = prepared
    return prepared


@_quiet
def _attend(layer: _Layer, keys, queries, qpos, masking, backend, record=None, only_active=True):
    """Attention output h for query rows.

    keys: (B, n, d) representations of all positions; queries: (B, m, d) rows
    at 0-based positions ``qpos``.  Returns (B, m, d).
    """
    B, n, d = keys.shape
    m = queries.shape[1]
    h = backend.zeros((B, m, d))
    mask = None
    if masking == "causal":
        mask = np.arange(n)[None, :] <= np.asarray(qpos)[:, None]
    for k, head in enumerate(layer.heads):
        if only_active and not head.active:
            continue
        q = queries[..., head.qcols] @ head.Q[:, head.qcols].T
        u = q @ head.K[:, head.kcols]
        logits = np.einsum("bik,bmk->bmi", keys[..., head.kcols], u) * layer.inv_sqrt_d
        _check_finite(logits, backend, "attention logits")
        weights = _softmax(logits, backend, mask)
        mean = np.einsum("bmi,bic->bmc", weights, keys[..., head.vcols])
        value = mean @ head.V[:, head.vcols].T
        _check_finite(value, backend, "head values")
        if record is not None:
            record.setdefault("logits", {})[k] = logits
            record.setdefault("weights", {})[k] = weights
            record.setdefault("head_values", {})[k] = value
        h = h + value @ head.W_O.T
    return h


@_quiet
def _attend_last(layer: _Layer, table, masks, state, backend, record=None):
    """Attention output at the last position when earlier states come from a table.

    table: (T, n-1, d) states per (token, position); masks: (token, (B, n-1)
    bool) pairs for the tokens present; state: (B, d) last-position states.
    The last position sees every position under either masking.
    """
    B, d = state.shape
    h = backend.zeros((B, d))
    for k, head in enumerate(layer.heads):
        if not head.active:
            continue
        q = state[:, head.qcols] @ head.Q[:, head.qcols].T
        u = q @ head.K[:, head.kcols]
        own = np.sum(state[:, head.kcols] * u, axis=1, keepdims=True)
        prefix = backend.zeros((B, table.shape[1]))
        for t, mask in masks:
            prefix = np.where(mask, u @ table[t][:, head.kcols].T, prefix)
        logits = np.concatenate([prefix, own], axis=1) * layer.inv_sqrt_d
        _check_finite(logits, backend, "attention logits")
        weights = _softmax(logits, backend)
        mean = weights[:, -1:] * state[:, head.vcols]
        for t, mask in masks:
            mean = mean + np.where(mask, weights[:, :-1], backend.const(0)) @ table[t][:, head.vcols]
        value = mean @ head.V[:, head.vcols].T
        _check_finite(value, backend, "head values")
        if record is not None:
            record.setdefault("logits", {})[k] = logits[:, None]
            record.setdefault("weights", {})[k] = weights[:, None]
            record.setdefault("head_values", {})[k] = value[:, None]
        h = h + value @ head.W_O.T
    return h


@_quiet
def _ffn(layer: _Layer, x, backend):
    hidden = _relu(x @ layer.W1.T + layer.b1, backend)
    out = hidden @ layer.W2.T + layer.b2
    _check_finite(out, backend, "feed-forward output")
    return out


def _backend_for(model: TransformerModel, precision) -> Backend:
    return resolve(model.precision if precision is None else precision)


def _embed(model, prepared, token_ids, backend):
    n = token_ids.shape[1]
    pe = model.embedding.positional_matrix(n, backend)
    _check_finite(pe, backend, "positional encoding")
    return prepared.TE[token_ids] + pe[None], pe


def _last_states(model: TransformerModel, token_ids: np.ndarray, backend: Backend, trace=None):
    """beta_n for a (B, n) block of token ids of equal length."""
    prepared = _prepare(model, backend)
    B, n = token_ids.shape
    C = len(prepared.layers)
    if prepared.last_only:
        # Positions before n see no attention, so their states depend only on
        # (token, position) and are computed once per (token, position) pair.
        pe = model.embedding.positional_matrix(n, backend)
        _check_finite(pe, backend, "positional encoding")
        table = prepared.TE[:, None, :] + pe[None, : n - 1, :]
        state = prepared.TE[token_ids[:, -1]] + pe[n - 1]
        prefix = token_ids[:, : n - 1]
        masks = [(t, prefix == t) for t in np.unique(prefix).tolist()]
        for idx, layer in enumerate(prepared.layers):
            record = {} if trace is not None else None
            h = _attend_last(layer, table, masks, state, backend, record)
            ffn_in = h + state
            state = _ffn(layer, ffn_in, backend)
            if idx < C - 1:
                table = _ffn(layer, table, backend)
            if trace is not None:
                trace.append(_trace_entry(record, h[:, None], ffn_in, state))
        return state
    A, _ = _embed(model, prepared, token_ids, backend)
    for idx, layer in enumerate(prepared.layers):
        last = idx == C - 1
        qpos = np.arange(n) if (layer.attend_all and not last) else np.array([n - 1])
        record = {} if trace is not None else None
        h = _attend(layer, A, A[:, qpos], qpos, model.masking, backend, record)
        if last:
            ffn_in = h[:, 0] + A[:, n - 1]
            state = _ffn(layer, ffn_in, backend)
        else:
            X = A.copy()
            X[:, qpos] = X[:, qpos] + h
            ffn_in = X[:, n - 1]
            A = _ffn(layer, X, backend)
            state = A[:, n - 1]
        if trace is not None:
            trace.append(_trace_entry(record, h[:, -1], ffn_in, state))
    return state


def _trace_entry(record, h, ffn_in, beta):
    return {
        "logits": {k: v[0, -1] for k, v in record.get("logits", {}).items()},
        "weights": {k: v[0, -1] for k, v in record.get("weights", {}).items()},
        "head_values": {k: v[0, -1] for k, v in record.get("head_values", {}).items()},
        "h": h[0],
        "ffn_input": ffn_in[0],
        "beta": beta[0],
    }


def _readout(prepared: _Prepared, states, bot_index: int) -> np.ndarray:
    logits = states @ prepared.W.T
    top = np.max(logits, axis=-1, keepdims=True)
    hits = np.asarray(logits == top, dtype=bool)
    out = np.argmax(hits, axis=-1)
    out[hits.sum(axis=-1) > 1] = bot_index
    return out


def _token_ids(model, tokens) -> np.ndarray:
    ids = model.token_ids(tokens)
    if ids.size == 0:
        raise InvalidInputError("input must contain at least one token")
    return ids[None, :]


def last_position_state(model: TransformerModel, tokens, precision=None):
    """beta_n, the state of the last position after the last layer."""
    backend = _backend_for(model, precision)
    return _last_states(model, _token_ids(model, tokens), backend)[0]


def trace_last_position(model: TransformerModel, tokens, precision=None) -> list:
    """Per-layer diagnostics at the last position.

    Each entry holds the attention logits and weights of every evaluated head
    (indexed by head number), the head values ``V a``-averages, the mixed
    attention output ``h``, the feed-forward input ``h + a`` and the output
    ``beta``.
    """
    backend = _backend_for(model, precision)
    trace: list = []
    _last_states(model, _token_ids(model, tokens), backend, trace)
    return trace


def output_logits(model: TransformerModel, tokens, precision=None):
    backend = _backend_for(model, precision)
    prepared = _prepare(model, backend)
    return _last_states(model, _token_ids(model, tokens), backend)[0] @ prepared.W.T


def transformer_forward(model: TransformerModel, tokens, precision=None) -> str:
    """Output token of the model on ``tokens`` (⊥ when the maximum is not unique)."""
    backend = _backend_for(model, precision)
    prepared = _prepare(model, backend)
    state = _last_states(model, _token_ids(model, tokens), backend)
    return model.vocabulary[int(_readout(prepared, state, model.bot_index)[0])]


def evaluate_batch(model: TransformerModel, token_ids, precision=None, chunk: int | None = None) -> np.ndarray:
    """Output token indices for a (B, n) integer array of vocabulary indices."""
    backend = _backend_for(model, precision)
    prepared = _prepare(model, backend)
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if token_ids.ndim != 2 or token_ids.shape[1] == 0:
        raise InvalidInputError("expected a (batch, length) array with length >= 1")
    if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= len(model.vocabulary)):
        raise InvalidInputError("token index outside the vocabulary")
    B, n = token_ids.shape
    if chunk is None:
        # the last-position path holds (B, n) arrays, the general one (B, n, d)
        width = n if prepared.last_only else n * model.d
        chunk = max(1, (1 << 21) // max(1, width))
    out = np.empty(B, dtype=np.int64)
    for start in range(0, B, chunk):
        block = token_ids[start:start + chunk]
        out[start:start + chunk] = _readout(prepared, _last_states(model, block, backend), model.bot_index)
    return out


def evaluate_bits(model: TransformerModel, bits, precision=None) -> np.ndarray:
    """Outputs for a (B, n) 0/1 array; entries are vocabulary indices."""
    bits = np.asarray(bits)
    lookup = model.token_ids(["0", "1"])
    return evaluate_batch(model, lookup[bits.astype(np.int64)], precision)


# Literal single-layer operations.

def _layer_inputs(layer: AttentionLayerParams, inputs, backend):
    A = backend.asarray(inputs)
    if A.ndim != 2 or A.shape[0] == 0:
        raise DimensionError("inputs must be a non-empty sequence of vectors")
    if A.shape[1] != layer.d:
        raise DimensionError(f"input vectors have dimension {A.shape[1]}, layer expects {layer.d}")
    _check_finite(A, backend, "layer inputs")
    return A[None]


def head_value(layer: AttentionLayerParams, k: int, inputs, j: int, masking: str = "full", precision=None):
    """Value of head ``k`` (0-based) at 1-based position ``j``."""
    backend = resolve(precision)
    A = _layer_inputs(layer, inputs, backend)
    n = A.shape[1]
    if not 1 <= j <= n:
        raise InvalidInputError(f"position {j} outside 1..{n}")
    if not 0 <= k < layer.heads:
        raise InvalidInputError(f"head {k} outside 0..{layer.heads - 1}")
    prepared = _prepare_layer(layer, backend)
    single = _Layer([prepared.heads[k]], prepared.W1, prepared.W2, prepared.b1, prepared.b2, prepared.inv_sqrt_d, prepared.d)
    record: dict = {}
    _attend(single, A, A[:, [j - 1]], [j - 1], masking, backend, record, only_active=False)
    return record["head_values"][0][0, 0]


def layer_forward(layer: AttentionLayerParams, inputs, masking: str = "full", precision=None):
    """Apply one attention layer to every position of ``inputs`` (shape (n, d))."""
    if masking not in ("full", "causal"):
        raise InvalidInputError(f"unknown masking {masking!r}")
    backend = resolve(precision)
    A = _layer_inputs(layer, inputs, backend)
    n = A.shape[1]
    prepared = _prepare_layer(layer, backend)
    qpos = np.arange(n)
    h = _attend(prepared, A, A, qpos, masking, backend)
    return _ffn(prepared, h + A, backend)[0]


def embed(model: TransformerModel, tokens, precision=None):
    """The input sequence alpha_1..alpha_n."""
    backend = _backend_for(model, precision)
    prepared = _prepare(model, backend)
    A, _ = _embed(model, prepared, _token_ids(model, tokens), backend)
    return A[0]
