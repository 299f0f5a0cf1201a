import json
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtevalkit.corpus import (
    ADEQUACY_CATEGORIES,
    FLUENCY_CATEGORIES,
    Annotation,
    AnnotationSet,
    ErrorSpan,
    LanguagePair,
    TranslationTriple,
    TripleSet,
    load_annotations,
    load_triples,
    save_annotations,
    save_triples,
)
from mtevalkit.errors import DataError, MalformedRecordError, ValidationError

from conftest import LP, make_annotation, make_span, make_triple


def write_triples_file(tmp_path, records):
    path = tmp_path / "triples.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path


def triple_record(segment_id, src="a b", mt="c d", ref="e f"):
    return {
        "segment_id": segment_id,
        "lp": {"src_lang": "eng", "tgt_lang": "yor"},
        "src": src,
        "mt": mt,
        "ref": ref,
    }


# -- loading ------------------------------------------------------------------


def test_load_three_distinct_records(tmp_path):
    path = write_triples_file(
        tmp_path, [triple_record(f"s{i}", src=f"src {i}") for i in range(3)]
    )
    assert len(load_triples(path)) == 3


def test_load_drops_duplicate_content_keep_first(tmp_path):
    first = triple_record("s1")
    second = triple_record("s2")  # identical <src, mt, ref>
    path = write_triples_file(tmp_path, [first, second])
    triples = load_triples(path)
    assert len(triples) == 1
    assert triples.get("s1").segment_id == "s1"
    assert triples.dropped_duplicates == 1


def test_load_empty_mt_is_malformed_with_line(tmp_path):
    records = [triple_record("s1"), triple_record("s2", src="x", mt="")]
    path = write_triples_file(tmp_path, records)
    with pytest.raises(MalformedRecordError) as err:
        load_triples(path)
    assert err.value.line_no == 2


def test_load_duplicate_segment_id(tmp_path):
    path = write_triples_file(
        tmp_path, [triple_record("s1"), triple_record("s1", src="other")]
    )
    with pytest.raises(DataError):
        load_triples(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_triples(tmp_path / "absent.jsonl")


def test_load_invalid_json_names_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"segment_id": "s1"}\nnot json\n', encoding="utf-8")
    with pytest.raises(MalformedRecordError) as err:
        load_triples(path)
    assert err.value.line_no in (1, 2)


def test_triples_round_trip(tmp_path):
    triples = TripleSet(
        [
            make_triple("s1", split="dev"),
            make_triple("s2", src="x y", mt="z w", ref=None),
        ]
    )
    path = tmp_path / "out.jsonl"
    save_triples(triples, path)
    loaded = load_triples(path)
    assert [t for t in loaded] == [t for t in triples]


# -- annotations ----------------------------------------------------------------


def test_annotation_round_trip_two_spans(tmp_path):
    ann = make_annotation(
        "s1",
        "eval1",
        45,
        spans=[make_span(0, 3), make_span(2, 8, category="Omission")],
    )
    original = AnnotationSet([ann])
    path = tmp_path / "anns.jsonl"
    save_annotations(original, path)
    assert load_annotations(path) == original


def test_empty_annotation_set_round_trip(tmp_path):
    path = tmp_path / "empty.jsonl"
    save_annotations(AnnotationSet(), path)
    assert len(load_annotations(path)) == 0


def test_import_rejects_span_past_text_end(tmp_path):
    triples = TripleSet([make_triple("s1", mt="short")])
    ann = make_annotation("s1", "e1", 50, spans=[make_span(0, 99)])
    path = tmp_path / "anns.jsonl"
    save_annotations(AnnotationSet([ann]), path)
    with pytest.raises(MalformedRecordError):
        load_annotations(path, triples)


def test_multibyte_offsets_survive_round_trip(tmp_path):
    # combining character + astral-plane code points
    mt = "éǵ \U0001F600\U0001F601 tail"
    triples = TripleSet([make_triple("s1", mt=mt)])
    span = make_span(5, 7)  # exactly the two emoji
    assert mt[span.start : span.end] == "\U0001F600\U0001F601"
    ann = make_annotation("s1", "e1", 70, spans=[span])
    path = tmp_path / "anns.jsonl"
    save_annotations(AnnotationSet([ann]), path)
    loaded = list(load_annotations(path, triples))[0]
    got = loaded.spans[0]
    assert mt[got.start : got.end] == "\U0001F600\U0001F601"


# -- invariants ----------------------------------------------------------------


def test_language_pair_validation():
    with pytest.raises(ValidationError):
        LanguagePair("en", "yor")
    with pytest.raises(ValidationError):
        LanguagePair("eng", "ENG")
    with pytest.raises(ValidationError):
        LanguagePair("eng", "eng")
    assert LanguagePair("eng", "eng", domain_tag="paraphrase").label() == "eng-eng (paraphrase)"
    assert LanguagePair("eng", "yor", "ted").label() == "eng-yor (ted)"


def test_da_score_bounds():
    with pytest.raises(ValidationError):
        make_annotation("s1", "e1", 101)
    with pytest.raises(ValidationError):
        make_annotation("s1", "e1", -1)


def test_span_category_must_match_dimension():
    with pytest.raises(ValidationError):
        make_annotation("s1", "e1", 50, dimension="fluency", spans=[make_span(0, 2, category="Omission")])
    ann = make_annotation("s1", "e1", 50, dimension="fluency", spans=[make_span(0, 2, category="Grammar")])
    assert ann.spans[0].category == "Grammar"


def test_fluency_span_must_target_translation():
    span = ErrorSpan(0, 2, "source_side", "Grammar")
    with pytest.raises(ValidationError):
        span.check_against("fluency", "src text", "mt text")


def test_span_offset_order():
    with pytest.raises(ValidationError):
        ErrorSpan(5, 5, "translation_side", "Grammar")
    with pytest.raises(ValidationError):
        ErrorSpan(-1, 3, "translation_side", "Grammar")


def test_triple_requires_nonempty_sides():
    with pytest.raises(ValidationError):
        TranslationTriple("s1", LP, src="", mt="x")
    with pytest.raises(ValidationError):
        TranslationTriple("s1", LP, src="x", mt="")


def test_schema_version_mismatch(tmp_path):
    path = tmp_path / "bad_version.jsonl"
    record = make_annotation("s1", "e1", 10).to_json()
    record["schema_version"] = 99
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(MalformedRecordError):
        load_annotations(path)


# -- property: export then import is the identity ----------------------------------

_text = st.text(
    alphabet=st.characters(
        codec="utf-8", exclude_characters="\x00", exclude_categories=("Cs",)
    ),
    min_size=1,
    max_size=40,
)


@st.composite
def valid_annotations(draw):
    dimension = draw(st.sampled_from(["adequacy", "fluency"]))
    mt = draw(_text)
    src = draw(_text)
    categories = ADEQUACY_CATEGORIES if dimension == "adequacy" else FLUENCY_CATEGORIES
    spans = []
    for _ in range(draw(st.integers(0, 3))):
        if dimension == "adequacy":
            target = draw(st.sampled_from(["source_side", "translation_side"]))
        else:
            target = "translation_side"
        text = src if target == "source_side" else mt
        if len(text) < 1:
            continue
        start = draw(st.integers(0, len(text) - 1))
        end = draw(st.integers(start + 1, len(text)))
        spans.append(ErrorSpan(start, end, target, draw(st.sampled_from(categories))))
    return (
        Annotation(
            segment_id=draw(st.uuids()).hex,
            evaluator_id=draw(st.sampled_from(["e1", "e2", "réviseur-3"])),
            dimension=dimension,
            spans=tuple(spans),
            da_score=draw(st.integers(0, 100)),
            submitted_at=datetime(2024, 1, 1, tzinfo=timezone.utc),
        ),
        src,
        mt,
    )


@settings(max_examples=60, deadline=None)
@given(st.lists(valid_annotations(), max_size=6))
def test_round_trip_identity_property(tmp_path_factory, items):
    tmp = tmp_path_factory.mktemp("roundtrip")
    original = AnnotationSet([item[0] for item in items])
    path = tmp / "anns.jsonl"
    save_annotations(original, path)
    assert load_annotations(path) == original
