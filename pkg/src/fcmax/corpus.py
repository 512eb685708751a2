"""Training samples, synthetic corpus generation, JSONL I/O and text normalization.

The synthetic corpus is a desk-scale stand-in for a meeting-transcription
dataset: each sample pairs a cased, punctuated reference sentence with a
discrete "acoustic" input sequence produced by passing the reference tokens
through a stochastic confusion channel.  The channel can replace content
words with confusable words and can drop the acoustic evidence for negation
words, so a decoder working from the input alone faces hypotheses whose edit
error and whose semantic fidelity rank in opposite orders.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BOS = "<s>"
EOS = "</s>"

PUNCTUATION_TOKENS = (".", ",", "?", "!")

# Word inventory for the sentence grammar.  Subjects are capitalized when they
# open a sentence; the second clause of a compound sentence uses the lowercase
# forms ("I" stays capitalized).
_SUBJECTS = ("I", "We", "They", "You")
_SUBJECTS_CLAUSE2 = ("I", "we", "they", "you")
_NEGATIONS = ("don't", "never", "won't")
_VERBS = ("know", "like", "need", "remember", "support", "trust", "understand", "want")
_ADVERBS = ("really", "just", "still", "also", "probably")
_DETERMINERS = ("the", "this", "that")
_NOUNS = (
    "plan", "answer", "budget", "schedule", "report",
    "deadline", "proposal", "meeting", "contract", "forecast",
)
_TAILS = ("anyway", "though", "somehow")
_CONJUNCTION = "but"

# Acoustically plausible mishearings.  Targets live in the token vocabulary so
# the decoder is able to emit them, but they (almost) never occur in
# references; emitting one is the desk-scale analog of a hallucinated word.
DEFAULT_CONFUSION_TABLE: dict[str, list[tuple[str, float]]] = {
    "plan": [("plant", 0.6)],
    "budget": [("bucket", 0.6)],
    "report": [("resort", 0.6)],
    "deadline": [("headline", 0.6)],
    "contract": [("contrast", 0.6)],
    "forecast": [("forest", 0.6)],
    "know": [("owe", 0.5)],
    "need": [("knead", 0.5)],
    "trust": [("thrust", 0.5)],
}

_CONTENT_TOKENS = frozenset(_NEGATIONS) | frozenset(_VERBS) | frozenset(_NOUNS)

_MIN_SENTENCE_WORDS = 4
_MAX_SENTENCE_WORDS = 15


class CorpusError(ValueError):
    """Raised for invalid corpus files or invalid generator configuration."""


def _base_vocab(confusion_table: dict[str, list[tuple[str, float]]]) -> list[str]:
    vocab: list[str] = [BOS, EOS]
    vocab.extend(PUNCTUATION_TOKENS)
    seen = set(vocab)
    groups = (
        _SUBJECTS, _SUBJECTS_CLAUSE2, _NEGATIONS, _VERBS, _ADVERBS,
        _DETERMINERS, _NOUNS, _TAILS, (_CONJUNCTION,),
    )
    for group in groups:
        for tok in group:
            if tok not in seen:
                vocab.append(tok)
                seen.add(tok)
    extras = []
    for options in confusion_table.values():
        for tok, _ in options:
            if tok not in seen:
                extras.append(tok)
                seen.add(tok)
    vocab.extend(sorted(set(extras)))
    return vocab


DEFAULT_TOKEN_VOCAB: tuple[str, ...] = tuple(_base_vocab(DEFAULT_CONFUSION_TABLE))


@dataclass(frozen=True)
class Sample:
    """One training pair: discrete acoustic input and its reference transcript."""

    id: str
    input: tuple[int, ...]
    reference: str
    ref_word_count: int
    speaker: int = 0
    start_s: float = 0.0
    session: str = ""

    def validate(self, source_vocab_size: int) -> None:
        if self.ref_word_count != len(self.reference.split()) or self.ref_word_count < 1:
            raise CorpusError(
                f"sample {self.id!r}: ref_word_count {self.ref_word_count} does not match "
                f"reference word count {len(self.reference.split())}"
            )
        if len(self.input) == 0:
            raise CorpusError(f"sample {self.id!r}: empty input sequence")
        for idx in self.input:
            if not 0 <= idx < source_vocab_size:
                raise CorpusError(
                    f"sample {self.id!r}: input symbol {idx} outside source vocabulary "
                    f"of size {source_vocab_size}"
                )


@dataclass
class Corpus:
    """An ordered collection of samples plus the shared vocabularies."""

    samples: list[Sample]
    source_vocab_size: int
    token_vocab: tuple[str, ...]
    _token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.token_vocab = tuple(self.token_vocab)
        if self.token_vocab.count(BOS) != 1 or self.token_vocab.count(EOS) != 1:
            raise CorpusError("token_vocab must contain exactly one BOS and one EOS entry")
        ids = set()
        for s in self.samples:
            if s.id in ids:
                raise CorpusError(f"duplicate sample id {s.id!r}")
            ids.add(s.id)
            s.validate(self.source_vocab_size)
        self._token_to_id = {tok: i for i, tok in enumerate(self.token_vocab)}

    @property
    def bos_id(self) -> int:
        return self._token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self._token_to_id[EOS]

    def token_id(self, token: str) -> int:
        try:
            return self._token_to_id[token]
        except KeyError:
            raise CorpusError(f"token {token!r} not in vocabulary") from None

    def encode_text(self, text: str) -> list[int]:
        """Tokenize a surface string into vocabulary ids (no BOS/EOS added)."""
        return [self.token_id(t) for t in surface_tokens(text)]

    def decode_ids(self, ids) -> str:
        return detokenize(self.token_vocab[i] for i in ids)

    def reference_ids(self, sample: Sample) -> list[int]:
        return self.encode_text(sample.reference)

    def split(self, *sizes: int) -> list["Corpus"]:
        """Partition samples by position into consecutive sub-corpora."""
        if sum(sizes) > len(self.samples):
            raise CorpusError(
                f"cannot split {len(self.samples)} samples into parts of {sizes}"
            )
        out, at = [], 0
        for n in sizes:
            out.append(Corpus(self.samples[at:at + n], self.source_vocab_size, self.token_vocab))
            at += n
        return out


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic noisy-transcription generator."""

    n_samples: int
    seed: int = 0
    min_len: int = 5
    max_len: int = 12
    confusion_table: dict[str, list[tuple[str, float]]] = field(
        default_factory=lambda: {k: list(v) for k, v in DEFAULT_CONFUSION_TABLE.items()}
    )
    negation_drop_rate: float = 0.3
    content_weight: float = 3.0
    filler_weight: float = 0.5

    def validate(self) -> None:
        if self.n_samples < 0:
            raise CorpusError(f"n_samples must be >= 0, got {self.n_samples}")
        if not 0.0 <= self.negation_drop_rate <= 1.0:
            raise CorpusError(
                f"negation_drop_rate must be in [0, 1], got {self.negation_drop_rate}"
            )
        if self.min_len > self.max_len:
            raise CorpusError(
                f"min_len {self.min_len} exceeds max_len {self.max_len}"
            )
        if self.min_len < _MIN_SENTENCE_WORDS:
            raise CorpusError(
                f"min_len must be >= {_MIN_SENTENCE_WORDS} (shortest grammar sentence), "
                f"got {self.min_len}"
            )
        if self.max_len > _MAX_SENTENCE_WORDS:
            raise CorpusError(
                f"max_len must be <= {_MAX_SENTENCE_WORDS} (longest grammar sentence), "
                f"got {self.max_len}"
            )
        if self.max_len < _MIN_SENTENCE_WORDS + 1:
            raise CorpusError(
                f"max_len must be >= {_MIN_SENTENCE_WORDS + 1} so negated sentences fit, "
                f"got {self.max_len}"
            )
        if self.content_weight <= 0 or self.filler_weight <= 0:
            raise CorpusError(
                f"token weights must be > 0, got content={self.content_weight} "
                f"filler={self.filler_weight}"
            )
        for word, options in self.confusion_table.items():
            for alt, weight in options:
                if weight <= 0:
                    raise CorpusError(
                        f"confusion weight for {word!r}->{alt!r} must be > 0, got {weight}"
                    )
                if alt in _NEGATIONS:
                    raise CorpusError(
                        f"confusable {alt!r} for {word!r} is a negation token; "
                        "the channel may not fabricate negation evidence"
                    )

    def token_vocab(self) -> tuple[str, ...]:
        return tuple(_base_vocab(self.confusion_table))


def detokenize(tokens) -> str:
    """Render a token sequence as surface text.

    Word tokens are joined by single spaces; punctuation tokens attach to the
    preceding word without a space.
    """
    out: list[str] = []
    for tok in tokens:
        if tok in PUNCTUATION_TOKENS or not out:
            out.append(tok)
        else:
            out.append(" " + tok)
    return "".join(out)


def surface_tokens(text: str) -> list[str]:
    """Split surface text back into grammar tokens (inverse of detokenize)."""
    toks: list[str] = []
    for word in text.split():
        suffix: list[str] = []
        while word and word[-1] in PUNCTUATION_TOKENS:
            suffix.append(word[-1])
            word = word[:-1]
        if word:
            toks.append(word)
        toks.extend(reversed(suffix))
    return toks


_STRIP_RE = re.compile(r"[.,?!;:\"()\-]")
_EDGE_APOSTROPHE_RE = re.compile(r"(?<!\w)'|'(?!\w)")


def normalize_text(text: str) -> list[str]:
    """Lowercased token list used for edit-error scoring.

    Lowercases, deletes underscores inside words, replaces the punctuation
    characters . , ? ! ; : " ( ) and hyphens with spaces, drops apostrophes
    that are not embedded inside a word, and collapses whitespace.
    Consistency scoring never uses this; it sees the raw text.
    """
    t = text.lower().replace("_", "")
    t = _STRIP_RE.sub(" ", t)
    t = _EDGE_APOSTROPHE_RE.sub(" ", t)
    return t.split()


def _allocate(rng: np.random.Generator, needed: int, caps: list[int]) -> list[int]:
    counts = [0] * len(caps)
    while needed > 0:
        open_slots = [i for i in range(len(caps)) if counts[i] < caps[i]]
        if not open_slots:
            break
        pick = open_slots[int(rng.integers(len(open_slots)))]
        counts[pick] += 1
        needed -= 1
    return counts


def _choose(rng: np.random.Generator, pool: tuple[str, ...]) -> str:
    return pool[int(rng.integers(len(pool)))]


def _choose_distinct(rng: np.random.Generator, pool: tuple[str, ...], k: int) -> list[str]:
    if k == 0:
        return []
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[int(i)] for i in idx]


def _build_clause(rng, subject: str, negation: str | None, n_adverbs: int) -> list[str]:
    toks = [subject]
    if negation is not None:
        toks.append(negation)
    toks.extend(_choose_distinct(rng, _ADVERBS, n_adverbs))
    toks.append(_choose(rng, _VERBS))
    toks.append(_choose(rng, _DETERMINERS))
    toks.append(_choose(rng, _NOUNS))
    return toks


def _build_sentence(rng: np.random.Generator, target_words: int, negated: bool) -> list[str]:
    """Assemble one sentence's token list with exactly target_words words."""
    negation = _choose(rng, _NEGATIONS) if negated else None
    base = 4 + (1 if negated else 0)
    needed = target_words - base
    use_second = needed >= 5
    if use_second:
        needed -= 5
        c1_adv, c2_adv, tail = _allocate(rng, needed, [3, 2, 1])
    else:
        c1_adv, tail = _allocate(rng, needed, [3, 1])
        c2_adv = 0
    toks = _build_clause(rng, _choose(rng, _SUBJECTS), negation, c1_adv)
    if use_second:
        toks.append(",")
        toks.append(_CONJUNCTION)
        toks.extend(_build_clause(rng, _choose(rng, _SUBJECTS_CLAUSE2), None, c2_adv))
    if tail:
        toks.append(_choose(rng, _TAILS))
    end = rng.random()
    toks.append("." if end < 0.8 else ("?" if end < 0.95 else "!"))
    return toks


def _channel(rng, tokens: list[str], cfg: SynthConfig, token_to_id: dict[str, int]) -> list[int]:
    """Pass reference tokens through the confusion channel, yielding input symbols."""
    out: list[int] = []
    for tok in tokens:
        if tok in _NEGATIONS:
            if rng.random() < cfg.negation_drop_rate:
                continue
            out.append(token_to_id[tok])
            continue
        options = cfg.confusion_table.get(tok)
        if options:
            weights = np.array([1.0] + [w for _, w in options])
            pick = int(rng.choice(len(weights), p=weights / weights.sum()))
            emitted = tok if pick == 0 else options[pick - 1][0]
            out.append(token_to_id[emitted])
        else:
            out.append(token_to_id[tok])
    return out


def generate_synthetic_corpus(config: SynthConfig) -> Corpus:
    """Deterministically generate a noisy-transcription corpus from a seed.

    Every tenth sample is forced to contain a negation word so the corpus
    always carries sentences where a dropped negation makes the short, low
    edit-error hypothesis the semantically wrong one.
    """
    config.validate()
    vocab = config.token_vocab()
    token_to_id = {tok: i for i, tok in enumerate(vocab)}
    rng = np.random.default_rng(np.uint64(config.seed))
    samples: list[Sample] = []
    for i in range(config.n_samples):
        negated = (i % 10 == 0) or rng.random() < 0.45
        target = int(rng.integers(config.min_len, config.max_len + 1))
        if negated:
            target = max(target, _MIN_SENTENCE_WORDS + 1)
        tokens = _build_sentence(rng, target, negated)
        reference = detokenize(tokens)
        input_ids = _channel(rng, tokens, config, token_to_id)
        start = round(float(i % 50) * 4.0 + float(rng.random()) * 2.0, 3)
        samples.append(Sample(
            id=f"synth-{config.seed}-{i:06d}",
            input=tuple(input_ids),
            reference=reference,
            ref_word_count=len(reference.split()),
            speaker=int(rng.integers(4)),
            start_s=start,
            session=f"session-{i // 50:03d}",
        ))
    return Corpus(samples=samples, source_vocab_size=len(vocab), token_vocab=vocab)


NEGATION_TOKENS: tuple[str, ...] = _NEGATIONS
CONTENT_TOKENS: frozenset[str] = _CONTENT_TOKENS


def default_token_weights(config: SynthConfig):
    """TokenWeights matching the generator: content words heavy, fillers light.

    Confusable targets count as content so a hallucinated content word costs
    as much as a dropped one.
    """
    from .scorers import TokenWeights

    content = set(_CONTENT_TOKENS)
    for options in config.confusion_table.values():
        content.update(tok for tok, _ in options)
    weights = {tok.lower(): config.content_weight for tok in content}
    return TokenWeights(weights=weights, default=config.filler_weight)


_REQUIRED_FIELDS = {
    "id": str,
    "input": list,
    "reference": str,
    "speaker": int,
    "start_s": (int, float),
    "session": str,
}


def _parse_line(line: str, lineno: int) -> Sample:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise CorpusError(f"line {lineno}: expected a JSON object")
    for name, typ in _REQUIRED_FIELDS.items():
        if name not in obj:
            raise CorpusError(f"line {lineno}: missing field {name!r}")
        if not isinstance(obj[name], typ) or isinstance(obj[name], bool):
            raise CorpusError(f"line {lineno}: field {name!r} has wrong type")
    if not all(isinstance(x, int) and not isinstance(x, bool) for x in obj["input"]):
        raise CorpusError(f"line {lineno}: field 'input' must be a list of integers")
    return Sample(
        id=obj["id"],
        input=tuple(obj["input"]),
        reference=obj["reference"],
        ref_word_count=len(obj["reference"].split()),
        speaker=obj["speaker"],
        start_s=float(obj["start_s"]),
        session=obj["session"],
    )


def load_corpus(path, token_vocab: tuple[str, ...] | None = None) -> Corpus:
    """Load a JSONL corpus; the word count is always recomputed, never trusted.

    The JSONL file carries samples only.  The token vocabulary defaults to the
    canonical generator vocabulary; pass token_vocab for corpora generated
    with a customized confusion table.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    vocab = tuple(token_vocab) if token_vocab is not None else DEFAULT_TOKEN_VOCAB
    samples = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip() == "":
                continue
            samples.append(_parse_line(line, lineno))
    return Corpus(samples=samples, source_vocab_size=len(vocab), token_vocab=vocab)


def corpus_to_jsonl(corpus: Corpus) -> str:
    lines = []
    for s in corpus.samples:
        lines.append(json.dumps({
            "id": s.id,
            "input": list(s.input),
            "reference": s.reference,
            "speaker": s.speaker,
            "start_s": s.start_s,
            "session": s.session,
        }, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def atomic_write_text(path, text: str) -> None:
    """Write text to path via a temp file in the same directory plus rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_corpus(corpus: Corpus, path) -> None:
    """Write the corpus as UTF-8 JSONL via a temp file and atomic rename."""
    atomic_write_text(path, corpus_to_jsonl(corpus))
