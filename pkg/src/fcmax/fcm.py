"""Expected-consistency training signals over N-best lists.

Given an N-best list for a sample, the raw sequence posteriors are
renormalized over the list, every hypothesis is scored against the sample's
reference, and each score is scaled by the reference word count.  The
expectation of the scaled scores under the renormalized posteriors is the
per-sample objective; its derivative with respect to each hypothesis's
per-step log outputs is a single coefficient

    posterior * (scaled_score - expectation)

placed on every decoder step along that hypothesis's own token trajectory
(end-of-sequence step included for finished hypotheses).  The coefficients
sum to zero across the list, so the update only moves probability mass
between the listed hypotheses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .beam import NBestList, beam_decode
from .corpus import Corpus, Sample, detokenize
from .model import ModelParams, StepGradient
from .scorers import ConsistencyScorer


class FcmError(ValueError):
    pass


def normalize_posteriors(log_probs: Sequence[float]) -> np.ndarray:
    """Softmax over raw sequence log probabilities, max-subtracted for stability."""
    arr = np.asarray(log_probs, dtype=np.float64)
    if arr.size == 0:
        raise FcmError("cannot normalize an empty posterior list")
    if not np.all(np.isfinite(arr)):
        raise FcmError("non-finite log probability in posterior list")
    shifted = np.exp(arr - arr.max())
    return shifted / shifted.sum()


@dataclass(frozen=True)
class ScoredHypothesis:
    tokens: tuple[int, ...]
    text: str
    log_prob: float
    posterior: float
    consistency: float
    scaled_score: float
    finished: bool


@dataclass
class ScoredNBest:
    """An N-best list with posteriors, consistency scores and the expectation."""

    hypotheses: list[ScoredHypothesis]
    ref_word_count: int
    expected_score: float

    def validate(self) -> None:
        posteriors = np.array([h.posterior for h in self.hypotheses])
        if abs(posteriors.sum() - 1.0) > 1e-9 or np.any(posteriors <= 0):
            raise FcmError("normalized posteriors must be positive and sum to 1")
        expected = float(sum(h.posterior * h.scaled_score for h in self.hypotheses))
        if abs(expected - self.expected_score) > 1e-9:
            raise FcmError(
                f"expected score {self.expected_score} inconsistent with "
                f"hypothesis set (recomputed {expected})"
            )


def render_hypothesis(tokens: Sequence[int], token_vocab: Sequence[str]) -> str:
    """Surface text for scoring: spaces between words, punctuation attached."""
    return detokenize(token_vocab[t] for t in tokens)


def expected_consistency(
    nbest: NBestList,
    sample: Sample,
    scorer: ConsistencyScorer,
    token_vocab: Sequence[str],
) -> ScoredNBest:
    """Score an N-best list against the sample reference and take the expectation."""
    posteriors = normalize_posteriors([h.log_prob for h in nbest.hypotheses])
    scored: list[ScoredHypothesis] = []
    expected = 0.0
    for hyp, posterior in zip(nbest.hypotheses, posteriors):
        text = render_hypothesis(hyp.tokens, token_vocab)
        consistency = scorer(text, sample.reference)
        scaled = sample.ref_word_count * consistency
        expected += float(posterior) * scaled
        scored.append(ScoredHypothesis(
            tokens=hyp.tokens,
            text=text,
            log_prob=hyp.log_prob,
            posterior=float(posterior),
            consistency=consistency,
            scaled_score=scaled,
            finished=hyp.finished,
        ))
    return ScoredNBest(
        hypotheses=scored,
        ref_word_count=sample.ref_word_count,
        expected_score=expected,
    )


def fcm_step_gradients(scored: ScoredNBest, eos_id: int) -> list[StepGradient]:
    """Per-hypothesis sparse gradients with respect to log outputs.

    Every step of a hypothesis receives the same coefficient at the token the
    hypothesis actually took there.  Unfinished hypotheses have no EOS step
    and therefore contribute no EOS cell.
    """
    grads: list[StepGradient] = []
    for hyp in scored.hypotheses:
        coeff = hyp.posterior * (hyp.scaled_score - scored.expected_score)
        entries = [(n, tok, coeff) for n, tok in enumerate(hyp.tokens)]
        if hyp.finished:
            entries.append((len(hyp.tokens), eos_id, coeff))
        grads.append(StepGradient(tuple(entries)))
    return grads


def fcm_corpus_objective(
    corpus: Corpus,
    params: ModelParams,
    scorer: ConsistencyScorer,
    beam_size: int,
    max_len: int,
    nbest_size: int | None = None,
) -> float:
    """Sum of per-sample expected scaled consistency over the whole corpus."""
    total = 0.0
    for sample in corpus.samples:
        try:
            nbest = beam_decode(
                params, sample.input, beam_size, max_len,
                bos_id=corpus.bos_id, eos_id=corpus.eos_id,
            )
            if nbest_size is not None:
                nbest = nbest.top(nbest_size)
            scored = expected_consistency(nbest, sample, scorer, corpus.token_vocab)
        except Exception as exc:
            raise FcmError(f"sample {sample.id!r}: {exc}") from exc
        total += scored.expected_score
    return total
