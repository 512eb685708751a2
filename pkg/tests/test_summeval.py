"""Chunking, speaker-attributed formatting and the summarization pipeline."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from fcmax.scorers import RemoteNetworkError, RemoteProtocolError, weighted_f1_scorer
from fcmax.summeval import (
    SessionChunk, SummarizerParams, SummEvalError, Utterance, build_prompt,
    chunk_session, evaluate_summaries, format_speaker_attributed, load_utterances,
    make_summarizer, mock_summarize, parse_speaker_attributed, save_utterances,
    summarize,
)

THREE_UTTS = [
    Utterance(speaker=1, start_s=1.0, text="Hello."),
    Utterance(speaker=2, start_s=3.0, text="Hi, how are you?"),
    Utterance(speaker=1, start_s=5.0, text="I'm fine."),
]
THREE_LINES = "Speaker 1: Hello.\nSpeaker 2: Hi, how are you?\nSpeaker 1: I'm fine.\n"


def test_single_chunk_when_all_start_early():
    chunks = chunk_session(THREE_UTTS)
    assert len(chunks) == 1
    assert (chunks[0].start, chunks[0].end) == (0.0, 60.0)
    assert len(chunks[0].utterances) == 3


def test_three_windows():
    utts = [Utterance(speaker=0, start_s=t, text=f"u{t}") for t in (10.0, 70.0, 130.0)]
    chunks = chunk_session(utts)
    assert [(c.start, c.end) for c in chunks] == [(0, 60), (60, 120), (120, 180)]
    assert all(len(c.utterances) == 1 for c in chunks)


def test_empty_utterance_list():
    assert chunk_session([]) == []


def test_empty_windows_omitted_and_partial_kept():
    utts = [Utterance(speaker=0, start_s=t, text="x") for t in (5.0, 125.0)]
    chunks = chunk_session(utts)
    assert [(c.start, c.end) for c in chunks] == [(0, 60), (120, 180)]


def test_chunk_rejects_mixed_sessions():
    utts = [Utterance(speaker=0, start_s=0, text="a", session="s1"),
            Utterance(speaker=0, start_s=1, text="b", session="s2")]
    with pytest.raises(SummEvalError, match="sessions"):
        chunk_session(utts)


def test_formatting_matches_template():
    chunk = chunk_session(THREE_UTTS)[0]
    assert format_speaker_attributed(chunk) == THREE_LINES


def test_formatting_empty_and_single():
    assert format_speaker_attributed(SessionChunk("", 0, 60, [])) == ""
    one = SessionChunk("", 0, 60, [Utterance(speaker=3, start_s=2, text="Yes?")])
    assert format_speaker_attributed(one) == "Speaker 3: Yes?\n"


def test_format_sorts_by_start_time():
    chunk = SessionChunk("", 0, 60, list(reversed(THREE_UTTS)))
    assert format_speaker_attributed(chunk) == THREE_LINES


def test_build_prompt_exact_bytes():
    assert build_prompt("") == "\nSummarize the conversation above.\n"
    assert build_prompt("Speaker 1: Hello.\n") == (
        "Speaker 1: Hello.\n\nSummarize the conversation above.\n"
    )


def test_build_prompt_not_idempotent():
    once = build_prompt("x")
    assert build_prompt(once) == once + "\nSummarize the conversation above.\n"


@given(st.lists(
    st.tuples(st.integers(min_value=0, max_value=9),
              st.floats(min_value=0, max_value=299),
              st.text(alphabet=st.characters(codec="ascii", exclude_characters="\n\r"),
                      max_size=20)),
    max_size=15,
))
def test_chunk_partitioning_property(raw):
    utts = [Utterance(speaker=s, start_s=t, text=txt) for s, t, txt in raw]
    chunks = chunk_session(utts)
    assert sum(len(c.utterances) for c in chunks) == len(utts)
    spans = [(c.start, c.end) for c in chunks]
    assert all(b1 <= a2 for (_, b1), (a2, _) in zip(spans, spans[1:]))
    for c in chunks:
        for u in c.utterances:
            assert c.start <= u.start_s < c.end


@given(st.lists(
    st.tuples(st.integers(min_value=0, max_value=9),
              st.text(alphabet=st.characters(codec="ascii", exclude_characters="\n\r"),
                      max_size=20)),
    max_size=8,
))
def test_format_parse_round_trip(raw):
    utts = [Utterance(speaker=s, start_s=float(i), text=t) for i, (s, t) in enumerate(raw)]
    chunk = SessionChunk("", 0, max(60.0, len(raw) + 1), utts)
    parsed = parse_speaker_attributed(format_speaker_attributed(chunk))
    assert parsed == [(u.speaker, u.text) for u in chunk.utterances]


def test_mock_summarizer_takes_first_sentences():
    prompt = build_prompt(THREE_LINES)
    assert mock_summarize(prompt) == "Hello. Hi, how are you?"


def test_mock_summarizer_truncates_to_first_sentence():
    prompt = build_prompt("Speaker 2: One. Two.\nSpeaker 1: Fine then!\n")
    assert mock_summarize(prompt) == "Fine then! One."


def test_summarize_mock_endpoint():
    assert summarize("mock", build_prompt(THREE_LINES)) == "Hello. Hi, how are you?"


def test_summarize_remote_passthrough(wire_server):
    wire_server.respond({"summary": "SUMMARY"})
    params = SummarizerParams()
    out = summarize(wire_server.url, "some prompt", params)
    assert out == "SUMMARY"
    path, body = wire_server.requests[-1]
    assert path == "/summarize"
    assert body == {"prompt": "some prompt", "temperature": 0.0, "top_p": 1.0,
                    "max_tokens": 200}


def test_summarize_remote_missing_field(wire_server):
    wire_server.respond({"text": "x"})
    with pytest.raises(RemoteProtocolError, match="summary"):
        summarize(wire_server.url, "p")


def test_summarize_unreachable_names_endpoint():
    with pytest.raises(RemoteNetworkError, match="127.0.0.1:1"):
        summarize("http://127.0.0.1:1", "p", timeout=0.5)


def test_summarizer_params_validation():
    with pytest.raises(SummEvalError):
        SummarizerParams(temperature=-0.1)
    with pytest.raises(SummEvalError):
        SummarizerParams(top_p=0.0)
    with pytest.raises(SummEvalError):
        SummarizerParams(max_tokens=0)


def _session_utts(session: str, texts: dict[float, str], speaker: int = 0):
    return [Utterance(speaker=speaker, start_s=t, text=x, session=session)
            for t, x in sorted(texts.items())]


def test_evaluate_summaries_reference_input_reproduces_exactly():
    refs = _session_utts("s", {1.0: "We know the plan.", 70.0: "They trust the budget."})
    summarizer = make_summarizer("mock")
    scorer = weighted_f1_scorer()
    scores, mean = evaluate_summaries(refs, refs, summarizer, scorer)
    again, mean_again = evaluate_summaries(refs, refs, summarizer, scorer)
    assert scores == again and mean == mean_again
    assert len(scores) == 2


def test_evaluate_summaries_corruption_scores_lower():
    refs = _session_utts("s", {1.0: "We know the plan.", 70.0: "They trust the budget."})
    hyps = _session_utts("s", {1.0: "We know the plant.", 70.0: "They thrust the bucket."})
    summarizer = make_summarizer("mock")
    scorer = weighted_f1_scorer()
    clean_scores, clean = evaluate_summaries(refs, refs, summarizer, scorer)
    bad_scores, corrupted = evaluate_summaries(refs, hyps, summarizer, scorer)
    assert corrupted < clean
    assert all(c >= b for c, b in zip(clean_scores, bad_scores))


def test_evaluate_summaries_no_chunks_is_error():
    with pytest.raises(SummEvalError, match="no chunks"):
        evaluate_summaries([], [], make_summarizer("mock"), weighted_f1_scorer())


def test_evaluate_summaries_rejects_unmatched_windows():
    refs = _session_utts("s", {1.0: "Early words."})
    hyps = _session_utts("s", {100.0: "Late words."})
    with pytest.raises(SummEvalError, match="window"):
        evaluate_summaries(refs, hyps, make_summarizer("mock"), weighted_f1_scorer())


def test_evaluate_summaries_rejects_unknown_session():
    refs = _session_utts("s", {1.0: "Words."})
    hyps = _session_utts("other", {1.0: "Words."})
    with pytest.raises(SummEvalError, match="other"):
        evaluate_summaries(refs, hyps, make_summarizer("mock"), weighted_f1_scorer())


def test_empty_hypothesis_chunk_still_summarized():
    refs = _session_utts("s", {1.0: "We know the plan."})
    scores, mean = evaluate_summaries(refs, [], make_summarizer("mock"),
                                      weighted_f1_scorer())
    assert scores == [0.0]  # empty summary scored against real transcript


def test_utterance_round_trip(tmp_path):
    path = tmp_path / "utts.jsonl"
    utts = _session_utts("sess", {0.0: "One.", 61.0: "Two."}, speaker=2)
    save_utterances(utts, path)
    assert load_utterances(path) == utts


def test_load_utterances_missing_field(tmp_path):
    path = tmp_path / "utts.jsonl"
    path.write_text('{"speaker": 0, "start_s": 1.0, "session": "s"}\n')
    with pytest.raises(SummEvalError, match="text"):
        load_utterances(path)
