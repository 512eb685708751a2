"""Shared fixtures: random models, gradient-check harness, a fitted two-way
ambiguity fixture, and a scriptable in-process HTTP server for wire tests."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fcmax.corpus import BOS, EOS, Corpus, Sample
from fcmax.model import (
    ModelParams, StepGradient, accumulate, apply_update, backward, forward_teacher,
)

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_params(d: int, src_vocab: int, tgt_vocab: int, seed: int,
                  scale: float = 0.6) -> ModelParams:
    """Random weights big enough that every parameter visibly moves the output."""
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)

    return ModelParams(
        src_emb=u(src_vocab, d), tgt_emb=u(tgt_vocab, d),
        enc_proj=u(d, d), dec_in=u(d, d), dec_state=u(d, d), attn=u(d, d),
        out_proj=u(d, tgt_vocab), out_bias=u(tgt_vocab),
    )


def finite_difference_check(params: ModelParams, input_ids, cond_tokens,
                            grad: StepGradient, eps: float = 1e-5) -> float:
    """Max relative error between backward() and central differences."""
    analytic = backward(params, forward_teacher(params, input_ids, cond_tokens), grad)

    def objective(p):
        trace = forward_teacher(p, input_ids, cond_tokens)
        return sum(v * trace.log_probs[n, i] for n, i, v in grad.entries)

    worst = 0.0
    for name, mat in params.matrices().items():
        amat = getattr(analytic, name)
        it = np.nditer(mat, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = mat[idx]
            mat[idx] = orig + eps
            fp = objective(params)
            mat[idx] = orig - eps
            fm = objective(params)
            mat[idx] = orig
            fd = (fp - fm) / (2 * eps)
            rel = abs(fd - amat[idx]) / max(abs(fd), abs(amat[idx]), 1e-8)
            worst = max(worst, rel)
    return worst


def fit_step_targets(params: ModelParams, input_ids, target_rows,
                     iters: int = 1500, lr: float = 0.5) -> ModelParams:
    """Drive per-step output distributions toward soft targets by ascent.

    target_rows is a list of (cond_tokens, {step: {token: prob}}); each row's
    probabilities must sum to 1 so the fitted optimum is the target itself.
    """
    for _ in range(iters):
        total = params.zeros_like()
        for cond, rowspec in target_rows:
            trace = forward_teacher(params, input_ids, cond)
            entries = tuple(
                (n, tok, pstar)
                for n, dist in rowspec.items()
                for tok, pstar in dist.items()
            )
            accumulate(total, backward(params, trace, StepGradient(entries)))
        params = apply_update(params, total, lr)
    return params


# Two-way ambiguity fixture: a model decoding one input into two candidate
# words with posteriors near 0.8 / 0.2, reference equal to the minority word.
AMBIG_VOCAB = (BOS, EOS, "know", "dunno")
KNOW, DUNNO = 2, 3


@pytest.fixture(scope="session")
def ambiguity_fixture():
    corpus = Corpus(
        samples=[Sample(id="ambig-0", input=(KNOW,), reference="dunno", ref_word_count=1)],
        source_vocab_size=len(AMBIG_VOCAB),
        token_vocab=AMBIG_VOCAB,
    )
    params = random_params(4, len(AMBIG_VOCAB), len(AMBIG_VOCAB), seed=11, scale=0.1)
    eps_row = {0: 0.001, 1: 0.004, KNOW: 0.795, DUNNO: 0.2}
    eos_row = {0: 0.0005, 1: 0.9985, KNOW: 0.0005, DUNNO: 0.0005}
    params = fit_step_targets(
        params,
        input_ids=corpus.samples[0].input,
        target_rows=[
            ((0, KNOW), {0: eps_row, 1: eos_row}),
            ((0, DUNNO), {0: eps_row, 1: eos_row}),
        ],
    )
    return corpus, params


def fcm_fixed_nbest_check(params, corpus, sample, scorer,
                          beam_size: int = 4, max_len: int = 6,
                          eps: float = 1e-5) -> float:
    """Gradient check for the expected-score objective with a frozen N-best set.

    Consistency scores are constants; only the renormalized posteriors depend
    on the parameters.  The finite-difference oracle recomputes the raw
    sequence log probabilities and their softmax for every perturbation and
    is compared against composing the sparse step gradients with backward().
    """
    from fcmax.beam import beam_decode, sequence_log_prob
    from fcmax.fcm import expected_consistency, fcm_step_gradients, normalize_posteriors

    nbest = beam_decode(params, sample.input, beam_size, max_len,
                        bos_id=corpus.bos_id, eos_id=corpus.eos_id)
    scored = expected_consistency(nbest, sample, scorer, corpus.token_vocab)
    scaled = [h.scaled_score for h in scored.hypotheses]
    hyps = [(h.tokens, h.finished) for h in scored.hypotheses]

    analytic = params.zeros_like()
    for hyp, grad in zip(scored.hypotheses, fcm_step_gradients(scored, corpus.eos_id)):
        trace = forward_teacher(params, sample.input, (corpus.bos_id,) + hyp.tokens)
        accumulate(analytic, backward(params, trace, grad))

    def objective(p):
        logps = [
            sequence_log_prob(p, sample.input, toks, corpus.bos_id, corpus.eos_id,
                              include_eos=fin)
            for toks, fin in hyps
        ]
        posts = normalize_posteriors(logps)
        return float(sum(q * s for q, s in zip(posts, scaled)))

    worst = 0.0
    for name, mat in params.matrices().items():
        amat = getattr(analytic, name)
        it = np.nditer(mat, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = mat[idx]
            mat[idx] = orig + eps
            fp = objective(params)
            mat[idx] = orig - eps
            fm = objective(params)
            mat[idx] = orig
            fd = (fp - fm) / (2 * eps)
            rel = abs(fd - amat[idx]) / max(abs(fd), abs(amat[idx]), 1e-7)
            worst = max(worst, rel)
    return worst


class _ScriptedHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        self.server.requests.append((self.path, json.loads(body.decode("utf-8"))))
        if self.server.delay:
            time.sleep(self.server.delay)
        status, payload, raw = self.server.script(self.path, body)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        if raw is not None:
            self.wfile.write(raw)
        else:
            self.wfile.write(json.dumps(payload).encode("utf-8"))

    def log_message(self, *args):
        pass


class ScriptedServer:
    """Tiny HTTP server whose responses are driven by a per-test callable.

    The script gets (path, request_body) and returns (status, payload, raw);
    raw bytes win over the JSON payload when both are given.
    """

    def __init__(self):
        self.httpd = HTTPServer(("127.0.0.1", 0), _ScriptedHandler)
        self.httpd.requests = []
        self.httpd.delay = 0.0
        self.httpd.script = lambda path, body: (200, {}, None)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    @property
    def requests(self):
        return self.httpd.requests

    def respond(self, payload, status: int = 200, delay: float = 0.0):
        self.httpd.delay = delay
        self.httpd.script = lambda path, body: (status, payload, None)

    def respond_raw(self, raw: bytes, status: int = 200):
        self.httpd.delay = 0.0
        self.httpd.script = lambda path, body: (status, None, raw)

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def wire_server():
    server = ScriptedServer()
    yield server
    server.close()
