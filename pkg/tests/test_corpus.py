from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ambigkit.backend import GenerationParams
from ambigkit.corpus import (
    PromptTemplate,
    QASample,
    ambiguate,
    filter_allowlist,
    load_dataset,
    load_templates,
    save_dataset,
    template_fingerprints,
    trim_continuation,
    validate_ambiguation,
)
from ambigkit.errors import (
    ConfigurationError,
    DataIntegrityError,
    ParseError,
    TemplateError,
)

from helpers import ScriptedBackend


# -- dataset I/O ----------------------------------------------------------------


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def test_load_preserves_order(tmp_path):
    path = tmp_path / "d.jsonl"
    write_lines(path, [
        json.dumps({"id": "a", "question": "qa?", "answers": ["x"]}),
        json.dumps({"id": "b", "question": "qb?", "answers": [], "ambiguous": True}),
        json.dumps({"id": "c", "question": "qc?", "answers": ["y", "z"]}),
    ])
    samples = load_dataset(path)
    assert [s.id for s in samples] == ["a", "b", "c"]
    assert samples[1].gold_ambiguous is True
    assert samples[2].answers == ("y", "z")


def test_unambiguous_needs_answers(tmp_path):
    path = tmp_path / "d.jsonl"
    write_lines(path, [
        json.dumps({"id": "a", "question": "q?", "answers": [], "ambiguous": False}),
    ])
    with pytest.raises(DataIntegrityError):
        load_dataset(path)


def test_empty_file_is_empty_list(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text("", encoding="utf-8")
    assert load_dataset(path) == []


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "d.jsonl"
    write_lines(path, [
        json.dumps({"id": "a", "question": "q?", "answers": ["x"]}),
        "{not json",
    ])
    with pytest.raises(ParseError, match="line 2"):
        load_dataset(path)


def test_duplicate_ids_rejected(tmp_path):
    path = tmp_path / "d.jsonl"
    record = json.dumps({"id": "a", "question": "q?", "answers": ["x"]})
    write_lines(path, [record, record])
    with pytest.raises(DataIntegrityError, match="duplicate"):
        load_dataset(path)


def test_save_load_round_trip(tmp_path, corpus_samples):
    path = tmp_path / "round.jsonl"
    save_dataset(corpus_samples, path)
    assert load_dataset(path) == corpus_samples


# -- templates --------------------------------------------------------------------


def test_direct_template_renders_exactly():
    templates = load_templates()
    assert templates["direct"].render(question="Who won?") == (
        "Answer the following question.\nQuestion: Who won?\nAnswer:"
    )


def test_all_canonical_templates_load():
    templates = load_templates()
    assert set(templates) == {
        "direct", "disambiguation", "clarification", "ambiguity_aware",
        "self_ask", "ambiguate", "ambiguation_validation",
    }
    fingerprints = template_fingerprints(templates)
    assert all(len(h) == 64 for h in fingerprints.values())


def test_disambiguation_template_keeps_few_shot_block():
    body = load_templates()["disambiguation"].body
    assert "When did the Frozen ride open at Epcot?" in body
    assert body.endswith("Input Question: <question>\nDisambiguation:")


def test_clarification_template_has_both_slots():
    rendered = load_templates()["clarification"].render(
        question="Who won?", disambiguation="Who won the cup final?"
    )
    assert "Ambiguous Question: Who won?" in rendered
    assert "Disambiguation: Who won the cup final?" in rendered
    assert rendered.endswith("Clarification Request:")


def test_slot_value_containing_marker_not_recursed():
    template = PromptTemplate(
        name="t", body="A <question> B <disambiguation> C",
        slots={"question": "<question>", "disambiguation": "<disambiguation>"},
    )
    rendered = template.render(question="<disambiguation>", disambiguation="x")
    assert rendered == "A <disambiguation> B x C"


def test_missing_slot_is_an_error():
    template = load_templates()["clarification"]
    with pytest.raises(TemplateError, match="disambiguation"):
        template.render(question="Who won?")


def test_unknown_slot_is_an_error():
    template = load_templates()["direct"]
    with pytest.raises(TemplateError, match="bogus"):
        template.render(question="q", bogus="x")


def test_marker_must_appear_exactly_once():
    with pytest.raises(TemplateError):
        PromptTemplate(name="bad", body="<q> and <q>", slots={"q": "<q>"})
    with pytest.raises(TemplateError):
        PromptTemplate(name="bad", body="no marker", slots={"q": "<q>"})


def test_missing_template_file_is_config_error(tmp_path):
    with pytest.raises(ConfigurationError):
        load_templates(tmp_path)


def test_answer_cue():
    templates = load_templates()
    assert templates["direct"].answer_cue == "\nAnswer:"
    assert templates["clarification"].answer_cue == "\nClarification Request:"


@given(st.text(alphabet="abc d", min_size=1, max_size=12),
       st.text(alphabet="abc d", min_size=1, max_size=12))
def test_render_injective_in_question(q1, q2):
    template = load_templates()["direct"]
    if q1 != q2:
        assert template.render(question=q1) != template.render(question=q2)


# -- trimming -----------------------------------------------------------------------


@pytest.mark.parametrize(
    "raw,expected",
    [
        (" answer \nnext line", "answer"),
        ("answer", "answer"),
        ("\nleading", ""),
        ("  ", ""),
    ],
)
def test_trim_continuation(raw, expected):
    assert trim_continuation(raw) == expected


# -- ambiguation -------------------------------------------------------------------


def q(question, sid="a1", ambiguous=False, answers=("g",)):
    return QASample(id=sid, question=question, answers=tuple(answers),
                    gold_ambiguous=ambiguous)


def test_ambiguate_returns_trimmed_candidate(toy_templates):
    template = toy_templates["ambiguate"]
    prompt = template.render(question="Who wrote the novel?")
    backend = ScriptedBackend(exact={prompt: " Who wrote a novel? \nJunk"})
    result = ambiguate(q("Who wrote the novel?"), backend, template,
                       GenerationParams())
    assert result == "Who wrote a novel?"


def test_ambiguate_discards_empty_generation(toy_templates):
    template = toy_templates["ambiguate"]
    backend = ScriptedBackend(default="")
    assert ambiguate(q("Whatever?"), backend, template, GenerationParams()) is None


@pytest.mark.parametrize(
    "reply,expected",
    [
        ("Yes", True),
        ("Yes.", True),
        ("yes it is", True),
        ("No.", False),
        ("Maybe yes", False),
        ("", False),
    ],
)
def test_validate_ambiguation_first_word_rule(toy_templates, reply, expected):
    template = toy_templates["ambiguation_validation"]
    backend = ScriptedBackend(default=reply)
    assert validate_ambiguation("candidate?", backend, template,
                                GenerationParams()) is expected


def test_validate_requires_candidate(toy_templates):
    with pytest.raises(ValueError):
        validate_ambiguation("", ScriptedBackend(),
                             toy_templates["ambiguation_validation"],
                             GenerationParams())


def test_allowlist_filter(tmp_path, corpus_samples):
    path = tmp_path / "allow.txt"
    path.write_text("s3\ns1\n\n", encoding="utf-8")
    kept = filter_allowlist(corpus_samples, path)
    assert [s.id for s in kept] == ["s1", "s3"]  # input order preserved
