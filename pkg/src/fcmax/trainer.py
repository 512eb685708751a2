"""Training loops: likelihood pretraining and consistency fine-tuning.

Both loops are plain gradient ascent with a linear-decay learning rate and a
seeded shuffle, so identical inputs give bit-identical checkpoints.  The
consistency loop decodes each batch sample, scores the N-best list, turns
the expectation's derivative into sparse per-step gradients, backpropagates
them per hypothesis and sums.  Two safeguards bound it: a hard iteration cap
(fine-tuning starts from a well-trained likelihood model and runs briefly)
and a deletion tripwire that halts the run if dev deletions grow past a
limit, returning the best previously-passing checkpoint instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .beam import beam_decode
from .corpus import Corpus
from .fcm import expected_consistency, fcm_step_gradients
from .metrics import EditBreakdown, avg_consistency, corpus_wer
from .model import (
    ModelParams, StepGradient, accumulate, apply_update, backward, forward_teacher,
)
from .scorers import ConsistencyScorer


class TrainerError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingSchedule:
    total_iterations: int
    initial_lr: float
    batch_size: int = 1
    beam_size: int = 4
    nbest_size: int = 4
    max_len: int = 24
    seed: int = 0
    checkpoint_every: int = 100
    lr_decay: str = "linear"

    def validate(self) -> None:
        if self.total_iterations < 0:
            raise TrainerError(f"total_iterations must be >= 0, got {self.total_iterations}")
        if self.initial_lr <= 0:
            raise TrainerError(f"initial_lr must be > 0, got {self.initial_lr}")
        if self.batch_size < 1:
            raise TrainerError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.nbest_size > self.beam_size:
            raise TrainerError(
                f"nbest_size {self.nbest_size} exceeds beam_size {self.beam_size}"
            )
        if min(self.beam_size, self.nbest_size, self.max_len, self.checkpoint_every) < 1:
            raise TrainerError("beam_size, nbest_size, max_len, checkpoint_every must be >= 1")
        if self.lr_decay != "linear":
            raise TrainerError(f"unsupported lr_decay {self.lr_decay!r}")


@dataclass(frozen=True)
class SafeguardConfig:
    max_fcm_iterations: int = 500
    deletion_rate_limit: float = 0.25
    dev_check_every: int = 50
    ce_interpolation_weight: float = 0.0

    def validate(self) -> None:
        if self.max_fcm_iterations < 1:
            raise TrainerError(
                f"max_fcm_iterations must be >= 1, got {self.max_fcm_iterations}"
            )
        if not 0.0 < self.deletion_rate_limit <= 1.0:
            raise TrainerError(
                f"deletion_rate_limit must be in (0, 1], got {self.deletion_rate_limit}"
            )
        if self.dev_check_every < 1:
            raise TrainerError(f"dev_check_every must be >= 1, got {self.dev_check_every}")
        if not 0.0 <= self.ce_interpolation_weight < 1.0:
            raise TrainerError(
                f"ce_interpolation_weight must be in [0, 1), got {self.ce_interpolation_weight}"
            )


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict] = field(default_factory=list)
    guard_tripped: bool = False
    guard_report: str | None = None


def linear_decay_lr(step: int, total: int, initial_lr: float) -> float:
    """Learning rate at a 0-based step: initial * (1 - step/total)."""
    if not 0 <= step < total:
        raise TrainerError(f"step {step} outside [0, {total})")
    return initial_lr * (1.0 - step / total)


def _batch_iterator(rng: np.random.Generator, n: int, batch_size: int):
    """Yield index batches forever, reshuffling at every epoch boundary."""
    while True:
        order = rng.permutation(n)
        for at in range(0, n, batch_size):
            chunk = order[at:at + batch_size]
            if len(chunk) == batch_size:
                yield [int(i) for i in chunk]
        # a short final chunk is folded into the next epoch's first batch


def _ce_gradient(params: ModelParams, corpus: Corpus, sample) -> tuple[ModelParams, float]:
    """Log-likelihood ascent gradient for one sample, plus its NLL."""
    ref_ids = corpus.reference_ids(sample)
    cond = [corpus.bos_id] + ref_ids
    targets = ref_ids + [corpus.eos_id]
    trace = forward_teacher(params, sample.input, cond)
    grad = StepGradient(tuple((n, tok, 1.0) for n, tok in enumerate(targets)))
    nll = -float(sum(trace.log_probs[n, tok] for n, tok in enumerate(targets)))
    return backward(params, trace, grad), nll


def corpus_nll(params: ModelParams, corpus: Corpus) -> float:
    """Total teacher-forced negative log likelihood over a corpus."""
    total = 0.0
    for sample in corpus.samples:
        ref_ids = corpus.reference_ids(sample)
        trace = forward_teacher(params, sample.input, [corpus.bos_id] + ref_ids)
        targets = ref_ids + [corpus.eos_id]
        total -= float(sum(trace.log_probs[n, tok] for n, tok in enumerate(targets)))
    return total


def decode_corpus_top1(params: ModelParams, corpus: Corpus, beam_size: int, max_len: int) -> list[str]:
    texts = []
    for sample in corpus.samples:
        nbest = beam_decode(params, sample.input, beam_size, max_len,
                            bos_id=corpus.bos_id, eos_id=corpus.eos_id)
        texts.append(corpus.decode_ids(nbest.hypotheses[0].tokens))
    return texts


def evaluate_on(params: ModelParams, corpus: Corpus, scorer: ConsistencyScorer,
                beam_size: int, nbest_size: int, max_len: int) -> dict:
    """Dev-set metrics: pooled WER, deletion rate, mean consistency, objective."""
    from .fcm import fcm_corpus_objective

    texts = decode_corpus_top1(params, corpus, beam_size, max_len)
    pairs = [(t, s.reference) for t, s in zip(texts, corpus.samples)]
    breakdown = corpus_wer(pairs)
    mean_consistency, _ = avg_consistency(pairs, scorer)
    objective = fcm_corpus_objective(corpus, params, scorer, beam_size, max_len,
                                     nbest_size=nbest_size)
    return {
        "dev_wer": breakdown.wer,
        "dev_del_rate": breakdown.deletion_rate,
        "dev_avg_consistency": mean_consistency,
        "dev_fcm_objective": objective,
        "_breakdown": breakdown,
    }


def _log_entry(iteration: int, lr: float, dev_metrics: dict | None) -> dict:
    entry = {"iter": iteration, "lr": lr}
    if dev_metrics is not None:
        entry.update({k: v for k, v in dev_metrics.items() if not k.startswith("_")})
    return entry


def deletion_guard(dev_wer_breakdown: EditBreakdown, limit: float) -> bool:
    """True means trip: dev deletions per reference word strictly exceed the limit."""
    if dev_wer_breakdown.ref_words <= 0:
        raise TrainerError("deletion guard needs a breakdown with reference words")
    return dev_wer_breakdown.deletions / dev_wer_breakdown.ref_words > limit


def train_ce(
    params: ModelParams,
    corpus: Corpus,
    schedule: TrainingSchedule,
    dev: Corpus | None = None,
    scorer: ConsistencyScorer | None = None,
) -> TrainResult:
    """Teacher-forced likelihood training (gradient ascent on log likelihood)."""
    schedule.validate()
    if not corpus.samples:
        raise TrainerError("training corpus is empty")
    if scorer is None:
        from .scorers import weighted_f1_scorer
        scorer = weighted_f1_scorer()
    params = params.copy()
    rng = np.random.default_rng(np.uint64(schedule.seed))
    batches = _batch_iterator(rng, len(corpus.samples), min(schedule.batch_size, len(corpus.samples)))
    log: list[dict] = []
    for it in range(schedule.total_iterations):
        lr = linear_decay_lr(it, schedule.total_iterations, schedule.initial_lr)
        total = params.zeros_like()
        batch = next(batches)
        for idx in batch:
            grad, nll = _ce_gradient(params, corpus, corpus.samples[idx])
            if not np.isfinite(nll):
                raise TrainerError(f"non-finite loss at iteration {it}")
            accumulate(total, grad, 1.0 / len(batch))
        params = apply_update(params, total, lr)
        if dev is not None and ((it + 1) % schedule.checkpoint_every == 0
                                or it + 1 == schedule.total_iterations):
            metrics = evaluate_on(params, dev, scorer, schedule.beam_size,
                                  schedule.nbest_size, schedule.max_len)
            log.append(_log_entry(it + 1, lr, metrics))
    return TrainResult(params=params, log=log)


def _fcm_sample_gradient(params: ModelParams, corpus: Corpus, sample,
                         scorer: ConsistencyScorer, schedule: TrainingSchedule,
                         ce_weight: float) -> ModelParams:
    nbest = beam_decode(params, sample.input, schedule.beam_size, schedule.max_len,
                        bos_id=corpus.bos_id, eos_id=corpus.eos_id)
    nbest = nbest.top(schedule.nbest_size)
    scored = expected_consistency(nbest, sample, scorer, corpus.token_vocab)
    step_grads = fcm_step_gradients(scored, corpus.eos_id)
    total = params.zeros_like()
    for hyp, grad in zip(scored.hypotheses, step_grads):
        if not grad.entries:
            continue
        cond = (corpus.bos_id,) + hyp.tokens
        trace = forward_teacher(params, sample.input, cond)
        accumulate(total, backward(params, trace, grad), 1.0 - ce_weight)
    if ce_weight > 0.0:
        ce_grad, _ = _ce_gradient(params, corpus, sample)
        accumulate(total, ce_grad, ce_weight)
    return total


def train_fcm(
    params: ModelParams,
    corpus: Corpus,
    scorer: ConsistencyScorer,
    schedule: TrainingSchedule,
    safeguard: SafeguardConfig = SafeguardConfig(),
    dev: Corpus | None = None,
) -> TrainResult:
    """Consistency fine-tuning of an already likelihood-trained model.

    Runs at most min(total_iterations, max_fcm_iterations) updates.  When a
    dev corpus is given, dev metrics are logged every dev_check_every
    iterations and the deletion tripwire is checked; a trip ends training and
    the result carries the best passing checkpoint (highest dev objective)
    together with a report.  The returned checkpoint never has a dev deletion
    rate above the limit.
    """
    schedule.validate()
    safeguard.validate()
    if not corpus.samples:
        raise TrainerError("training corpus is empty")
    params = params.copy()
    rng = np.random.default_rng(np.uint64(schedule.seed))
    batches = _batch_iterator(rng, len(corpus.samples), min(schedule.batch_size, len(corpus.samples)))
    log: list[dict] = []
    limit = safeguard.deletion_rate_limit
    total_iters = min(schedule.total_iterations, safeguard.max_fcm_iterations)

    best_params: ModelParams | None = None
    best_objective = -np.inf
    if dev is not None:
        metrics = evaluate_on(params, dev, scorer, schedule.beam_size,
                              schedule.nbest_size, schedule.max_len)
        log.append(_log_entry(0, schedule.initial_lr, metrics))
        if not deletion_guard(metrics["_breakdown"], limit):
            best_params, best_objective = params.copy(), metrics["dev_fcm_objective"]

    def finish(current: ModelParams, tripped: bool, report: str | None) -> TrainResult:
        if not tripped:
            return TrainResult(params=current, log=log)
        fallback = best_params if best_params is not None else params
        return TrainResult(params=fallback, log=log, guard_tripped=True, guard_report=report)

    current = params
    for it in range(total_iters):
        lr = linear_decay_lr(it, schedule.total_iterations, schedule.initial_lr)
        batch = next(batches)
        total = current.zeros_like()
        for idx in batch:
            sample = corpus.samples[idx]
            try:
                grad = _fcm_sample_gradient(current, corpus, sample, scorer, schedule,
                                            safeguard.ce_interpolation_weight)
            except Exception as exc:
                raise TrainerError(f"iteration {it}, sample {sample.id!r}: {exc}") from exc
            accumulate(total, grad, 1.0 / len(batch))
        current = apply_update(current, total, lr)
        if dev is not None and ((it + 1) % safeguard.dev_check_every == 0
                                or it + 1 == total_iters):
            metrics = evaluate_on(current, dev, scorer, schedule.beam_size,
                                  schedule.nbest_size, schedule.max_len)
            log.append(_log_entry(it + 1, lr, metrics))
            if deletion_guard(metrics["_breakdown"], limit):
                report = (
                    f"deletion guard tripped at iteration {it + 1}: dev deletion rate "
                    f"{metrics['dev_del_rate']:.4f} > limit {limit:.4f}; "
                    f"returning best passing checkpoint"
                )
                return finish(current, True, report)
            if metrics["dev_fcm_objective"] > best_objective:
                best_params = current.copy()
                best_objective = metrics["dev_fcm_objective"]
    return finish(current, False, None)
