"""Chunked summarization evaluation over speaker-attributed transcripts.

Session recordings are cut into fixed non-overlapping windows (60 s by
default) by utterance start time.  Each window's hypothesis utterances are
rendered as "Speaker N: text" lines in start-time order, wrapped in a
summarization prompt, summarized, and the summary is scored for consistency
against the window's ground-truth transcript formatted the same way.  The
per-window score vector feeds paired significance tests between systems.

A deterministic built-in mock summarizer (first sentence spoken by each
speaker, in speaker order) keeps the whole pipeline offline and
byte-reproducible; a real model is reached through the same HTTP interface
as a remote summarizer.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .corpus import Corpus, atomic_write_text
from .scorers import ConsistencyScorer, RemoteProtocolError, post_json

MOCK_SUMMARIZER = "mock"
PROMPT_INSTRUCTION = "\nSummarize the conversation above.\n"


class SummEvalError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    speaker: int
    start_s: float
    text: str
    session: str = ""

    def __post_init__(self) -> None:
        if self.start_s < 0:
            raise SummEvalError(f"utterance start time must be >= 0, got {self.start_s}")
        if self.speaker < 0:
            raise SummEvalError(f"speaker index must be >= 0, got {self.speaker}")


@dataclass
class SessionChunk:
    session: str
    start: float
    end: float
    utterances: list[Utterance]

    def __post_init__(self) -> None:
        for u in self.utterances:
            if not self.start <= u.start_s < self.end:
                raise SummEvalError(
                    f"utterance at {u.start_s}s outside window [{self.start}, {self.end})"
                )
        self.utterances = sorted(self.utterances, key=lambda u: (u.start_s, u.speaker))


@dataclass(frozen=True)
class SummarizerParams:
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 200

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise SummEvalError(f"temperature must be >= 0, got {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise SummEvalError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise SummEvalError(f"max_tokens must be >= 1, got {self.max_tokens}")


def chunk_session(utterances: Sequence[Utterance], chunk_seconds: float = 60.0) -> list[SessionChunk]:
    """Assign utterances to [0, w), [w, 2w), ... windows by start time.

    Empty windows are omitted; a trailing partial window is kept.  All
    utterances must belong to one session.
    """
    if chunk_seconds <= 0:
        raise SummEvalError(f"chunk_seconds must be > 0, got {chunk_seconds}")
    if not utterances:
        return []
    sessions = {u.session for u in utterances}
    if len(sessions) > 1:
        raise SummEvalError(f"chunk_session got utterances from sessions {sorted(sessions)}")
    session = utterances[0].session
    buckets: dict[int, list[Utterance]] = {}
    for u in utterances:
        buckets.setdefault(int(u.start_s // chunk_seconds), []).append(u)
    return [
        SessionChunk(
            session=session,
            start=idx * chunk_seconds,
            end=(idx + 1) * chunk_seconds,
            utterances=buckets[idx],
        )
        for idx in sorted(buckets)
    ]


def format_speaker_attributed(chunk: SessionChunk) -> str:
    """Render "Speaker {index}: {text}" lines in start-time order."""
    return "".join(f"Speaker {u.speaker}: {u.text}\n" for u in chunk.utterances)


_SPEAKER_LINE_RE = re.compile(r"^Speaker (\d+): (.*)$")


def parse_speaker_attributed(transcript: str) -> list[tuple[int, str]]:
    """Recover (speaker, text) pairs from a formatted transcript."""
    pairs = []
    for line in transcript.split("\n"):
        m = _SPEAKER_LINE_RE.match(line)
        if m:
            pairs.append((int(m.group(1)), m.group(2)))
    return pairs


def build_prompt(transcript: str) -> str:
    return transcript + PROMPT_INSTRUCTION


_SENTENCE_END_RE = re.compile(r"[.?!]")


def mock_summarize(prompt: str) -> str:
    """Deterministic stand-in: each speaker's first sentence, in speaker order.

    Deliberately crude; it exists so the pipeline is testable offline, not to
    approximate a language model.
    """
    firsts: dict[int, str] = {}
    for speaker, text in parse_speaker_attributed(prompt):
        if speaker in firsts:
            continue
        m = _SENTENCE_END_RE.search(text)
        firsts[speaker] = text[: m.end()] if m else text
    return " ".join(firsts[s] for s in sorted(firsts))


def summarize(
    endpoint: str,
    prompt: str,
    params: SummarizerParams = SummarizerParams(),
    timeout: float = 30.0,
) -> str:
    """Produce a summary via the wire protocol, or via the built-in mock.

    The endpoint "mock" selects the offline backend; anything else is taken
    as a service base URL and POSTed to {endpoint}/summarize.
    """
    if endpoint == MOCK_SUMMARIZER:
        return mock_summarize(prompt)
    url = endpoint.rstrip("/") + "/summarize"
    doc = post_json(url, {
        "prompt": prompt,
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
    }, timeout)
    if "summary" not in doc or not isinstance(doc["summary"], str):
        raise RemoteProtocolError(f"{url} response is missing a string 'summary' field")
    return doc["summary"]


def make_summarizer(
    endpoint: str,
    params: SummarizerParams = SummarizerParams(),
    timeout: float = 30.0,
) -> Callable[[str], str]:
    return lambda prompt: summarize(endpoint, prompt, params, timeout)


def _group_by_session(utterances: Sequence[Utterance]) -> dict[str, list[Utterance]]:
    groups: dict[str, list[Utterance]] = {}
    for u in utterances:
        groups.setdefault(u.session, []).append(u)
    return groups


def evaluate_summaries(
    reference_utterances: Sequence[Utterance],
    hypothesis_utterances: Sequence[Utterance],
    summarizer: Callable[[str], str],
    scorer: ConsistencyScorer,
    chunk_seconds: float = 60.0,
) -> tuple[list[float], float]:
    """Run the chunked pipeline and score summaries against the ground truth.

    Windows are derived from reference timings and shared with the hypothesis
    side; a hypothesis utterance falling into a window with no reference
    material is a chunk mismatch.  Windows whose hypothesis side is empty are
    still summarized so that missing output cannot inflate the mean.
    Returns the per-chunk score vector (chunk order: session, then window)
    and its mean.
    """
    ref_groups = _group_by_session(reference_utterances)
    hyp_groups = _group_by_session(hypothesis_utterances)
    if set(hyp_groups) - set(ref_groups):
        extra = sorted(set(hyp_groups) - set(ref_groups))
        raise SummEvalError(f"hypothesis sessions {extra} have no reference side")
    scores: list[float] = []
    for session in sorted(ref_groups):
        ref_chunks = chunk_session(ref_groups[session], chunk_seconds)
        windows = {int(c.start // chunk_seconds) for c in ref_chunks}
        hyp_buckets: dict[int, list[Utterance]] = {w: [] for w in windows}
        for u in hyp_groups.get(session, []):
            w = int(u.start_s // chunk_seconds)
            if w not in windows:
                raise SummEvalError(
                    f"session {session!r}: hypothesis utterance at {u.start_s}s falls in "
                    f"window {w}, which has no reference chunk"
                )
            hyp_buckets[w].append(u)
        for ref_chunk in ref_chunks:
            w = int(ref_chunk.start // chunk_seconds)
            hyp_chunk = SessionChunk(
                session=session,
                start=ref_chunk.start,
                end=ref_chunk.end,
                utterances=hyp_buckets[w],
            )
            prompt = build_prompt(format_speaker_attributed(hyp_chunk))
            summary = summarizer(prompt)
            scores.append(scorer(summary, format_speaker_attributed(ref_chunk)))
    if not scores:
        raise SummEvalError("no chunks to evaluate")
    return scores, sum(scores) / len(scores)


def corpus_to_utterances(corpus: Corpus, texts: dict[str, str] | None = None) -> list[Utterance]:
    """View corpus samples as utterances; texts override the references.

    With texts=None the result is the ground-truth side of the pipeline; pass
    a sample-id to decoded-text mapping to build the hypothesis side.
    """
    out = []
    for s in corpus.samples:
        text = s.reference if texts is None else texts[s.id]
        out.append(Utterance(speaker=s.speaker, start_s=s.start_s, text=text, session=s.session))
    return out


def load_utterances(path) -> list[Utterance]:
    """Read the utterance JSONL (corpus schema plus a "text" field)."""
    path = Path(path)
    if not path.exists():
        raise SummEvalError(f"utterance file not found: {path}")
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SummEvalError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            for name in ("speaker", "start_s", "session", "text"):
                if name not in obj:
                    raise SummEvalError(f"line {lineno}: missing field {name!r}")
            out.append(Utterance(
                speaker=int(obj["speaker"]),
                start_s=float(obj["start_s"]),
                text=str(obj["text"]),
                session=str(obj["session"]),
            ))
    return out


def save_utterances(utterances: Sequence[Utterance], path) -> None:
    lines = [
        json.dumps({
            "speaker": u.speaker, "start_s": u.start_s,
            "session": u.session, "text": u.text,
        }, ensure_ascii=False)
        for u in utterances
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
