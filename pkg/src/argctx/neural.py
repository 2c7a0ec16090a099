"""From-scratch differentiable building blocks, numpy only.

Forward functions return (output, cache); the matching backward functions
consume the cache and an upstream gradient, accumulate parameter gradients
into a flat name->array dict, and return gradients for their inputs where
a caller needs them.  Everything is float64 and deterministic given the
seeded generator used at init time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from argctx.errors import DataError, NumericalError


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / e.sum()


# ---------------------------------------------------------------------------
# Convolutional ADU encoder: per filter width, slide over the token sequence,
# ReLU, then 1-max pooling over positions; outputs concatenated in
# (width, filter) order.


@dataclass
class ConvEncoderParams:
    name: str
    input_dim: int
    filter_widths: tuple[int, ...]
    filters_per_width: int
    weights: dict[int, np.ndarray]  # width -> (F, w, D)
    biases: dict[int, np.ndarray]  # width -> (F,)

    @property
    def output_dim(self) -> int:
        return len(self.filter_widths) * self.filters_per_width

    @classmethod
    def create(
        cls,
        name: str,
        rng: np.random.Generator,
        input_dim: int,
        filter_widths: tuple[int, ...] = (2, 3, 4, 5),
        filters_per_width: int = 600,
    ) -> "ConvEncoderParams":
        weights = {}
        biases = {}
        for w in filter_widths:
            weights[w] = glorot_uniform(
                rng, (filters_per_width, w, input_dim),
                fan_in=w * input_dim, fan_out=filters_per_width,
            )
            biases[w] = np.zeros(filters_per_width)
        return cls(
            name=name,
            input_dim=input_dim,
            filter_widths=tuple(filter_widths),
            filters_per_width=filters_per_width,
            weights=weights,
            biases=biases,
        )

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for w in self.filter_widths:
            out[f"{self.name}.w{w}"] = self.weights[w]
            out[f"{self.name}.b{w}"] = self.biases[w]
        return out


@dataclass
class ConvCache:
    windows: dict[int, np.ndarray]  # width -> (P, w*D)
    pre_acts: dict[int, np.ndarray]  # width -> (P, F)
    argmax: dict[int, np.ndarray]  # width -> (F,)


def conv_encode(tokens: np.ndarray, params: ConvEncoderParams) -> tuple[np.ndarray, ConvCache]:
    """Encode a (T, input_dim) token matrix into a (output_dim,) vector.

    Sequences shorter than the largest filter width are zero-padded at the
    end to that width.
    """
    tokens = np.asarray(tokens, dtype=float)
    if tokens.ndim != 2 or tokens.shape[1] != params.input_dim:
        raise DataError(
            f"conv encoder {params.name!r} expects (T, {params.input_dim}) tokens, "
            f"got {tokens.shape}"
        )
    if tokens.shape[0] == 0:
        raise DataError(f"conv encoder {params.name!r} got an empty token sequence")
    max_w = max(params.filter_widths)
    if tokens.shape[0] < max_w:
        tokens = np.vstack([tokens, np.zeros((max_w - tokens.shape[0], params.input_dim))])
    t = tokens.shape[0]
    outputs = []
    cache = ConvCache(windows={}, pre_acts={}, argmax={})
    for w in params.filter_widths:
        n_pos = t - w + 1
        windows = np.lib.stride_tricks.sliding_window_view(tokens, (w, tokens.shape[1]))
        windows = windows.reshape(n_pos, w * tokens.shape[1])
        wflat = params.weights[w].reshape(params.filters_per_width, -1)
        pre = windows @ wflat.T + params.biases[w]
        act = np.maximum(pre, 0.0)
        idx = np.argmax(act, axis=0)  # first occurrence on ties
        outputs.append(act[idx, np.arange(params.filters_per_width)])
        cache.windows[w] = windows
        cache.pre_acts[w] = pre
        cache.argmax[w] = idx
    return np.concatenate(outputs), cache


def conv_backward(
    grad_out: np.ndarray,
    cache: ConvCache,
    params: ConvEncoderParams,
    grads: dict[str, np.ndarray],
) -> None:
    """Route pooled gradients back to the argmax positions' filters."""
    f = params.filters_per_width
    for i, w in enumerate(params.filter_widths):
        g = grad_out[i * f : (i + 1) * f]
        idx = cache.argmax[w]
        cols = np.arange(f)
        alive = cache.pre_acts[w][idx, cols] > 0.0
        gated = g * alive
        rows = cache.windows[w][idx]  # (F, w*D)
        grads[f"{params.name}.w{w}"] += (gated[:, None] * rows).reshape(params.weights[w].shape)
        grads[f"{params.name}.b{w}"] += gated


# ---------------------------------------------------------------------------
# LSTM aggregator over a sequence of ADU vectors; returns the final hidden
# state.  An empty sequence returns a learned empty-context vector.


@dataclass
class LstmParams:
    name: str
    input_dim: int
    hidden_dim: int
    Wi: np.ndarray
    Ui: np.ndarray
    bi: np.ndarray
    Wf: np.ndarray
    Uf: np.ndarray
    bf: np.ndarray
    Wo: np.ndarray
    Uo: np.ndarray
    bo: np.ndarray
    Wg: np.ndarray
    Ug: np.ndarray
    bg: np.ndarray
    empty: np.ndarray  # returned for empty sequences, trained like the rest

    @classmethod
    def create(
        cls, name: str, rng: np.random.Generator, input_dim: int, hidden_dim: int = 100
    ) -> "LstmParams":
        def w() -> np.ndarray:
            return glorot_uniform(rng, (input_dim, hidden_dim), input_dim, hidden_dim)

        def u() -> np.ndarray:
            return glorot_uniform(rng, (hidden_dim, hidden_dim), hidden_dim, hidden_dim)

        return cls(
            name=name, input_dim=input_dim, hidden_dim=hidden_dim,
            Wi=w(), Ui=u(), bi=np.zeros(hidden_dim),
            Wf=w(), Uf=u(), bf=np.zeros(hidden_dim),
            Wo=w(), Uo=u(), bo=np.zeros(hidden_dim),
            Wg=w(), Ug=u(), bg=np.zeros(hidden_dim),
            empty=np.zeros(hidden_dim),
        )

    _GATES = ("Wi", "Ui", "bi", "Wf", "Uf", "bf", "Wo", "Uo", "bo", "Wg", "Ug", "bg", "empty")

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.{g}": getattr(self, g) for g in self._GATES}


@dataclass
class LstmCache:
    steps: list[dict]
    is_empty: bool


def lstm_aggregate(sequence: np.ndarray, params: LstmParams) -> tuple[np.ndarray, LstmCache]:
    """Run the recurrence over (T, input_dim); zero initial hidden/cell state."""
    sequence = np.asarray(sequence, dtype=float)
    if sequence.ndim != 2 or (sequence.shape[0] > 0 and sequence.shape[1] != params.input_dim):
        raise DataError(
            f"lstm {params.name!r} expects (T, {params.input_dim}) input, got {sequence.shape}"
        )
    if sequence.shape[0] == 0:
        return params.empty.copy(), LstmCache(steps=[], is_empty=True)
    h = np.zeros(params.hidden_dim)
    c = np.zeros(params.hidden_dim)
    steps = []
    for x in sequence:
        i = sigmoid(x @ params.Wi + h @ params.Ui + params.bi)
        f = sigmoid(x @ params.Wf + h @ params.Uf + params.bf)
        o = sigmoid(x @ params.Wo + h @ params.Uo + params.bo)
        g = np.tanh(x @ params.Wg + h @ params.Ug + params.bg)
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        steps.append({"x": x, "h_prev": h, "c_prev": c, "i": i, "f": f, "o": o, "g": g, "c": c_new})
        h, c = h_new, c_new
    return h, LstmCache(steps=steps, is_empty=False)


def lstm_backward(
    grad_h: np.ndarray,
    cache: LstmCache,
    params: LstmParams,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Backprop through time; returns gradients for the input sequence."""
    name = params.name
    if cache.is_empty:
        grads[f"{name}.empty"] += grad_h
        return np.zeros((0, params.input_dim))
    dh = grad_h.copy()
    dc = np.zeros(params.hidden_dim)
    dx = np.zeros((len(cache.steps), params.input_dim))
    for t in range(len(cache.steps) - 1, -1, -1):
        s = cache.steps[t]
        tanh_c = np.tanh(s["c"])
        do = dh * tanh_c
        dct = dh * s["o"] * (1.0 - tanh_c**2) + dc
        di = dct * s["g"]
        dg = dct * s["i"]
        df = dct * s["c_prev"]
        dc = dct * s["f"]
        dai = di * s["i"] * (1.0 - s["i"])
        daf = df * s["f"] * (1.0 - s["f"])
        dao = do * s["o"] * (1.0 - s["o"])
        dag = dg * (1.0 - s["g"] ** 2)
        x, h_prev = s["x"], s["h_prev"]
        grads[f"{name}.Wi"] += np.outer(x, dai)
        grads[f"{name}.Wf"] += np.outer(x, daf)
        grads[f"{name}.Wo"] += np.outer(x, dao)
        grads[f"{name}.Wg"] += np.outer(x, dag)
        grads[f"{name}.Ui"] += np.outer(h_prev, dai)
        grads[f"{name}.Uf"] += np.outer(h_prev, daf)
        grads[f"{name}.Uo"] += np.outer(h_prev, dao)
        grads[f"{name}.Ug"] += np.outer(h_prev, dag)
        grads[f"{name}.bi"] += dai
        grads[f"{name}.bf"] += daf
        grads[f"{name}.bo"] += dao
        grads[f"{name}.bg"] += dag
        dx[t] = params.Wi @ dai + params.Wf @ daf + params.Wo @ dao + params.Wg @ dag
        dh = params.Ui @ dai + params.Uf @ daf + params.Uo @ dao + params.Ug @ dag
    return dx


# ---------------------------------------------------------------------------
# Bilinear attention: scores s_i = q^T W k_i, masked slots forced to -inf,
# softmax weights, output is the weighted sum of keys.


@dataclass
class AttentionParams:
    name: str
    W: np.ndarray  # (query_dim, key_dim)

    @classmethod
    def create(
        cls, name: str, rng: np.random.Generator, query_dim: int, key_dim: int
    ) -> "AttentionParams":
        return cls(name=name, W=glorot_uniform(rng, (query_dim, key_dim), query_dim, key_dim))

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.W": self.W}


@dataclass
class AttentionCache:
    query: np.ndarray
    keys: np.ndarray
    weights: np.ndarray


def attention_aggregate(
    query: np.ndarray,
    keys: np.ndarray,
    mask: np.ndarray,
    params: AttentionParams,
) -> tuple[np.ndarray, AttentionCache]:
    """Aggregate (N, key_dim) rows into one vector; masked rows get weight 0."""
    query = np.asarray(query, dtype=float)
    keys = np.asarray(keys, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if keys.ndim != 2 or keys.shape[0] != mask.shape[0]:
        raise DataError(f"attention {params.name!r}: keys {keys.shape} / mask {mask.shape} mismatch")
    if query.shape != (params.W.shape[0],) or keys.shape[1] != params.W.shape[1]:
        raise DataError(
            f"attention {params.name!r}: query {query.shape} keys {keys.shape} "
            f"do not match W {params.W.shape}"
        )
    if not mask.any():
        raise DataError(f"attention {params.name!r}: all keys masked")
    scores = keys @ (params.W.T @ query)
    shifted = scores - scores[mask].max()
    expd = np.where(mask, np.exp(np.where(mask, shifted, 0.0)), 0.0)
    weights = expd / expd.sum()
    out = weights @ keys
    return out, AttentionCache(query=query, keys=keys, weights=weights)


def attention_backward(
    grad_out: np.ndarray,
    cache: AttentionCache,
    params: AttentionParams,
    grads: dict[str, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (grad_query, grad_keys); masked rows receive zero gradient."""
    wts, keys, q = cache.weights, cache.keys, cache.query
    dwts = keys @ grad_out
    dkeys = wts[:, None] * grad_out[None, :]
    ds = wts * (dwts - wts @ dwts)
    sk = ds @ keys  # (key_dim,)
    grads[f"{params.name}.W"] += np.outer(q, sk)
    dq = params.W @ sk
    dkeys += ds[:, None] * (params.W.T @ q)[None, :]
    return dq, dkeys


# ---------------------------------------------------------------------------
# Softmax classifier and cross-entropy loss.


@dataclass
class ClassifierParams:
    name: str
    W: np.ndarray  # (input_dim, n_classes)
    b: np.ndarray  # (n_classes,)

    @classmethod
    def create(
        cls, name: str, rng: np.random.Generator, input_dim: int, n_classes: int = 3
    ) -> "ClassifierParams":
        return cls(
            name=name,
            W=glorot_uniform(rng, (input_dim, n_classes), input_dim, n_classes),
            b=np.zeros(n_classes),
        )

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.W": self.W, f"{self.name}.b": self.b}


def classify(x: np.ndarray, params: ClassifierParams) -> np.ndarray:
    """Class probability vector softmax(Wx + b)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.W.shape[0],):
        raise DataError(
            f"classifier {params.name!r} expects input ({params.W.shape[0]},), got {x.shape}"
        )
    return softmax(x @ params.W + params.b)


def classifier_backward(
    dlogits: np.ndarray,
    x: np.ndarray,
    params: ClassifierParams,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    grads[f"{params.name}.W"] += np.outer(x, dlogits)
    grads[f"{params.name}.b"] += dlogits
    return params.W @ dlogits


def cross_entropy(probs: np.ndarray, gold: int) -> tuple[float, np.ndarray]:
    """(loss, gradient w.r.t. logits) for one example."""
    loss = -math.log(max(probs[gold], 1e-300))
    dlogits = probs.copy()
    dlogits[gold] -= 1.0
    return loss, dlogits


# ---------------------------------------------------------------------------
# Adam optimizer over a flat name -> array parameter dict, updated in place.


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: AdamConfig,
) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise DataError(f"gradient shape {g.shape} != param shape {p.shape} for {key!r}")
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**state.t)
        v_hat = v / (1.0 - b2**state.t)
        p -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(p) for k, p in params.items()}


def check_finite(loss: float, grads: dict[str, np.ndarray]) -> None:
    """Abort with a diagnostic naming the parameter block on NaN/Inf."""
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite loss: {loss}")
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in block {key!r}")
