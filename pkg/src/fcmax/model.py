"""A small attention encoder-decoder over discrete symbol sequences.

The decoder is a single tanh recurrence with bilinear attention over encoder
states.  The forward pass exposes per-step log output distributions; the
backward pass accepts externally supplied gradients with respect to those
log outputs, so sequence-level training objectives can be composed without
knowing anything about the network internals.  All arithmetic is float64.

Shapes (d is the hidden width, row-vector convention):
    encoder states   H[t]   = tanh(src_emb[x_t] @ enc_proj)
    decoder state    s_n    = tanh(tgt_emb[y_n] @ dec_in + s_{n-1} @ dec_state)
    attention score  a_t    = h_t @ attn @ s_n
    context          c_n    = softmax(a) @ H
    log outputs      L[n]   = log_softmax((s_n + c_n) @ out_proj + out_bias)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

MATRIX_NAMES = (
    "src_emb", "tgt_emb", "enc_proj", "dec_in", "dec_state",
    "attn", "out_proj", "out_bias",
)


class ModelError(ValueError):
    pass


@dataclass
class ModelParams:
    """Parameter set; also used as the container for parameter gradients."""

    src_emb: np.ndarray
    tgt_emb: np.ndarray
    enc_proj: np.ndarray
    dec_in: np.ndarray
    dec_state: np.ndarray
    attn: np.ndarray
    out_proj: np.ndarray
    out_bias: np.ndarray

    @property
    def d(self) -> int:
        return self.enc_proj.shape[0]

    @property
    def source_vocab_size(self) -> int:
        return self.src_emb.shape[0]

    @property
    def target_vocab_size(self) -> int:
        return self.tgt_emb.shape[0]

    def matrices(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self) -> None:
        d = self.d
        expected = {
            "src_emb": (self.source_vocab_size, d),
            "tgt_emb": (self.target_vocab_size, d),
            "enc_proj": (d, d),
            "dec_in": (d, d),
            "dec_state": (d, d),
            "attn": (d, d),
            "out_proj": (d, self.target_vocab_size),
            "out_bias": (self.target_vocab_size,),
        }
        for name, mat in self.matrices().items():
            if mat.shape != expected[name]:
                raise ModelError(
                    f"matrix {name} has shape {mat.shape}, expected {expected[name]}"
                )
            if not np.all(np.isfinite(mat)):
                raise ModelError(f"matrix {name} contains non-finite entries")

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.matrices().items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(**{k: np.zeros_like(v) for k, v in self.matrices().items()})

    def allclose(self, other: "ModelParams", atol: float = 0.0) -> bool:
        return all(
            np.allclose(v, getattr(other, k), rtol=0.0, atol=atol)
            for k, v in self.matrices().items()
        )


def init_params(d: int, source_vocab_size: int, target_vocab_size: int, seed: int) -> ModelParams:
    """Uniform init in [-0.08, 0.08], deterministic in the seed."""
    if d < 1:
        raise ModelError(f"hidden width must be >= 1, got {d}")
    if source_vocab_size < 1 or target_vocab_size < 1:
        raise ModelError(
            f"vocabulary sizes must be >= 1, got source={source_vocab_size} "
            f"target={target_vocab_size}"
        )
    rng = np.random.default_rng(np.uint64(seed))

    def u(*shape):
        return rng.uniform(-0.08, 0.08, size=shape)

    return ModelParams(
        src_emb=u(source_vocab_size, d),
        tgt_emb=u(target_vocab_size, d),
        enc_proj=u(d, d),
        dec_in=u(d, d),
        dec_state=u(d, d),
        attn=u(d, d),
        out_proj=u(d, target_vocab_size),
        out_bias=u(target_vocab_size),
    )


@dataclass
class ForwardTrace:
    """Per-step log distributions plus the activations backward needs."""

    log_probs: np.ndarray      # (N, V), rows are log-softmax outputs
    cond_tokens: np.ndarray    # (N,), token that conditioned each step
    input_ids: np.ndarray      # (T,)
    enc_states: np.ndarray     # (T, d)
    states: np.ndarray         # (N, d), post-tanh decoder states
    attn_weights: np.ndarray   # (N, T)
    contexts: np.ndarray       # (N, d)

    @property
    def n_steps(self) -> int:
        return self.log_probs.shape[0]


@dataclass(frozen=True)
class StepGradient:
    """Sparse gradients with respect to log outputs: (step, token, value)."""

    entries: tuple[tuple[int, int, float], ...]

    def __post_init__(self) -> None:
        seen = set()
        for n, i, g in self.entries:
            if (n, i) in seen:
                raise ModelError(f"duplicate StepGradient cell ({n}, {i})")
            seen.add((n, i))
            if not np.isfinite(g):
                raise ModelError(f"non-finite StepGradient value at ({n}, {i})")

    def scaled(self, factor: float) -> "StepGradient":
        return StepGradient(tuple((n, i, g * factor) for n, i, g in self.entries))


def _check_ids(ids: np.ndarray, size: int, what: str) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= size):
        raise ModelError(f"{what} index out of range for vocabulary of size {size}")


def encode(params: ModelParams, input_ids) -> np.ndarray:
    ids = np.asarray(input_ids, dtype=np.int64)
    if ids.size == 0:
        raise ModelError("empty input sequence")
    _check_ids(ids, params.source_vocab_size, "source")
    return np.tanh(params.src_emb[ids] @ params.enc_proj)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - (m + np.log(np.exp(z - m).sum()))


def _step(params: ModelParams, enc_states: np.ndarray, s_prev: np.ndarray, token: int):
    """One decoder step; returns (log_probs, s, alpha, context)."""
    u = params.tgt_emb[token]
    s = np.tanh(u @ params.dec_in + s_prev @ params.dec_state)
    scores = enc_states @ (params.attn @ s)
    scores = scores - scores.max()
    alpha = np.exp(scores)
    alpha /= alpha.sum()
    context = alpha @ enc_states
    logits = (s + context) @ params.out_proj + params.out_bias
    return _log_softmax(logits), s, alpha, context


@dataclass
class DecodeState:
    """Incremental decoding state: encoder states plus the recurrent vector."""

    enc_states: np.ndarray
    state: np.ndarray


def init_decode_state(params: ModelParams, input_ids) -> DecodeState:
    enc = encode(params, input_ids)
    return DecodeState(enc_states=enc, state=np.zeros(params.d))


def forward_step(params: ModelParams, state: DecodeState, token: int):
    """Advance one step; returns (log distribution over tokens, new state)."""
    if state.enc_states.ndim != 2 or state.enc_states.shape[1] != params.d:
        raise ModelError(
            f"decode state width {state.enc_states.shape} does not match model d={params.d}"
        )
    if not 0 <= token < params.target_vocab_size:
        raise ModelError(f"token index {token} out of range")
    logp, s, _, _ = _step(params, state.enc_states, state.state, token)
    return logp, DecodeState(enc_states=state.enc_states, state=s)


def forward_teacher(params: ModelParams, input_ids, target_ids) -> ForwardTrace:
    """Teacher-forced forward pass along a conditioning token sequence.

    Row n of the trace is the log distribution produced after consuming
    target_ids[n]; callers prepend BOS themselves.
    """
    cond = np.asarray(target_ids, dtype=np.int64)
    if cond.size == 0:
        raise ModelError("empty conditioning sequence")
    _check_ids(cond, params.target_vocab_size, "target")
    enc = encode(params, input_ids)
    n, d, v = cond.size, params.d, params.target_vocab_size
    log_probs = np.empty((n, v))
    states = np.empty((n, d))
    alphas = np.empty((n, enc.shape[0]))
    contexts = np.empty((n, d))
    s = np.zeros(d)
    for step in range(n):
        log_probs[step], s, alphas[step], contexts[step] = _step(params, enc, s, int(cond[step]))
        states[step] = s
    return ForwardTrace(
        log_probs=log_probs,
        cond_tokens=cond,
        input_ids=np.asarray(input_ids, dtype=np.int64),
        enc_states=enc,
        states=states,
        attn_weights=alphas,
        contexts=contexts,
    )


def backward(params: ModelParams, trace: ForwardTrace, grad: StepGradient) -> ModelParams:
    """Parameter gradients of F = sum of g[n,i] * log_output[n,i].

    Linear in the supplied gradient values; the log-softmax Jacobian and the
    backward recurrence through time are applied here.
    """
    g = params.zeros_like()
    if not grad.entries:
        return g
    n_steps, v = trace.log_probs.shape
    dense = np.zeros((n_steps, v))
    for n, i, value in grad.entries:
        if not (0 <= n < n_steps and 0 <= i < v):
            raise ModelError(f"StepGradient cell ({n}, {i}) outside trace of shape {(n_steps, v)}")
        dense[n, i] = value

    H = trace.enc_states
    dH = np.zeros_like(H)
    ds_next = np.zeros(params.d)
    for n in range(n_steps - 1, -1, -1):
        row = dense[n]
        s = trace.states[n]
        c = trace.contexts[n]
        alpha = trace.attn_weights[n]
        if row.any() or ds_next.any():
            p = np.exp(trace.log_probs[n])
            dz = row - p * row.sum()
            g.out_proj += np.outer(s + c, dz)
            g.out_bias += dz
            dsc = params.out_proj @ dz
            dc = dsc
            ds = dsc + ds_next
            # attention: c = alpha @ H, a_t = h_t @ attn @ s
            dalpha = H @ dc
            dH += np.outer(alpha, dc)
            da = alpha * (dalpha - alpha @ dalpha)
            ds = ds + (H @ params.attn).T @ da
            g.attn += np.outer(H.T @ da, s)
            dH += np.outer(da, params.attn @ s)
            # recurrence: s = tanh(u @ dec_in + s_prev @ dec_state)
            dq = ds * (1.0 - s * s)
            u = params.tgt_emb[trace.cond_tokens[n]]
            s_prev = trace.states[n - 1] if n > 0 else np.zeros(params.d)
            g.dec_in += np.outer(u, dq)
            g.dec_state += np.outer(s_prev, dq)
            np.add.at(g.tgt_emb, trace.cond_tokens[n], dq @ params.dec_in.T)
            ds_next = dq @ params.dec_state.T
        else:
            ds_next = np.zeros(params.d)
    if dH.any():
        dq_enc = dH * (1.0 - H * H)
        g.enc_proj += params.src_emb[trace.input_ids].T @ dq_enc
        np.add.at(g.src_emb, trace.input_ids, dq_enc @ params.enc_proj.T)
    return g


def accumulate(total: ModelParams, part: ModelParams, scale: float = 1.0) -> None:
    """In-place total += scale * part over every matrix."""
    for name, mat in total.matrices().items():
        mat += scale * getattr(part, name)


def apply_update(params: ModelParams, gradients: ModelParams, learning_rate: float) -> ModelParams:
    """Gradient-ascent step: theta + lr * grad, refusing non-finite gradients."""
    if learning_rate < 0:
        raise ModelError(f"learning rate must be >= 0, got {learning_rate}")
    new = {}
    for name, mat in params.matrices().items():
        gmat = getattr(gradients, name)
        if gmat.shape != mat.shape:
            raise ModelError(
                f"gradient matrix {name} has shape {gmat.shape}, expected {mat.shape}"
            )
        if not np.all(np.isfinite(gmat)):
            raise ModelError(f"non-finite gradient entries in matrix {name}")
        new[name] = mat + learning_rate * gmat
    return ModelParams(**new)


def save_checkpoint(params: ModelParams, path) -> None:
    from .corpus import atomic_write_text

    doc = {
        "version": 1,
        "d": params.d,
        "vocab_sizes": {
            "source": params.source_vocab_size,
            "target": params.target_vocab_size,
        },
        "matrices": {
            name: {
                "shape": list(mat.shape) if mat.ndim == 2 else [1, mat.shape[0]],
                "data": [float(x) for x in mat.reshape(-1)],
            }
            for name, mat in params.matrices().items()
        },
    }
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_checkpoint(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != 1:
        raise ModelError(f"unsupported checkpoint version {doc.get('version')!r}")
    mats = {}
    for name in MATRIX_NAMES:
        entry = doc["matrices"][name]
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if name == "out_bias":
            arr = arr.reshape(-1)
        mats[name] = arr
    params = ModelParams(**mats)
    params.validate()
    return params
