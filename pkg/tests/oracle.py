"""Straight-line reference evaluation used as an independent oracle.

Plain Python floats and loops, following the layer equations term by term:
logits <K a_i, Q a_j>/sqrt(d), exponentials normalized by their sum, head
mixing, residual, ReLU feed-forward.  No shifting, no sparsity, no numpy.
"""

import math


def matvec(M, v):
    return [sum(M[r][c] * v[c] for c in range(len(v))) for r in range(len(M))]


def layer(params, seq, masking):
    d = len(seq[0])
    H = len(params["heads"])
    out = []
    for j in range(len(seq)):
        visible = range(j + 1) if masking == "causal" else range(len(seq))
        stacked = []
        for head in params["heads"]:
            qj = matvec(head["Q"], seq[j])
            ws, num = [], [0.0] * d
            for i in visible:
                ki = matvec(head["K"], seq[i])
                w = math.exp(sum(a * b for a, b in zip(ki, qj)) / math.sqrt(d))
                vi = matvec(head["V"], seq[i])
                ws.append(w)
                num = [x + w * y for x, y in zip(num, vi)]
            total = sum(ws)
            stacked.extend(x / total for x in num)
        h = matvec(params["W_O"], stacked)
        x = [a + b for a, b in zip(h, seq[j])]
        hidden = [max(0.0, v + b) for v, b in zip(matvec(params["W1"], x), params["b1"])]
        out.append([v + b for v, b in zip(matvec(params["W2"], hidden), params["b2"])])
    assert len(stacked) == d * H
    return out


def embed(model_dict, tokens):
    emb = model_dict["embedding"]
    d = emb["d"]
    seq = []
    for pos, tok in enumerate(tokens, start=1):
        vec = list(emb["token_embedding"][str(tok)])
        for entry in emb["positional"]:
            assert entry["kind"] == "table"
            vec[entry["coordinate"]] += entry["values"][pos - 1]
        seq.append(vec)
    assert all(len(v) == d for v in seq)
    return seq


def last_state(model_dict, tokens, masking=None):
    masking = masking or model_dict["masking"]
    seq = embed(model_dict, tokens)
    for params in model_dict["layers"]:
        seq = layer(params, seq, masking)
    return seq[-1]


def output(model_dict, tokens, masking=None):
    beta = last_state(model_dict, tokens, masking)
    logits = matvec(model_dict["W"], beta)
    top = max(logits)
    winners = [k for k, v in enumerate(logits) if v == top]
    vocab = model_dict["vocabulary"]
    return vocab[winners[0]] if len(winners) == 1 else "⊥"
