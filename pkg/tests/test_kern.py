from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from nctreduce.kern import (
    Key, MalformedToken, MeterSig, MissingInterpretation, MultipleHarmSpines, NoKernSpine,
    UnsupportedSpinePath, check_durations, harm_timeline, parse_kern, parse_note, select_melody,
)


def kern(*lines, header="**kern\t**harm"):
    return "\n".join([header, *lines, "\t".join(["*-"] * header.count("**"))]) + "\n"


@pytest.mark.parametrize("token, midi, dur", [
    ("4c", 60, Fraction(1)),
    ("8.ee-", 75, Fraction(3, 4)),
    ("2CC#", 37, Fraction(2)),
    ("16b", 71, Fraction(1, 4)),
    ("12dd", 74, Fraction(1, 3)),
    ("0G", 55, Fraction(8)),
    ("3%2a", 69, Fraction(8, 3)),
    ("4.cLn'", 60, Fraction(3, 2)),
])
def test_parse_note(token, midi, dur):
    note = parse_note(token)
    assert note.midi == midi
    assert note.duration_q == dur


def test_rest_and_grace():
    rest = parse_note("2r")
    assert rest.is_rest and rest.duration_q == 2 and rest.midi is None
    grace = parse_note("8gq")
    assert grace.is_grace and grace.duration_q == 0 and grace.midi == 67


@pytest.mark.parametrize("token", ["4", "4cd", "x", "c"])
def test_bad_note(token):
    with pytest.raises(ValueError):
        parse_note(token)


def test_tie_merged_event():
    doc = parse_kern(kern("*M4/4\t*", "*C:\t*", "[4g\tI", "4g]\t.", "2r\t."))
    events = select_melody(doc)
    assert len(events) == 2
    g, rest = events
    assert g.midi_pitch == 67 and g.duration_q == 2 and g.tie_merged
    assert g.records == (3, 4)
    assert rest.is_rest and rest.onset_q == 2


def test_tie_merging_preserves_total_duration():
    doc = parse_kern(kern("*M4/4\t*", "*C:\t*", "[8c\tI", "8c_\t.", "4c]\t.", "2d\t."))
    events = select_melody(doc)
    assert sum(e.duration_q for e in events) == Fraction(4)
    assert [e.duration_q for e in events] == [2, 2]


def test_chord_reduces_to_top_note():
    doc = parse_kern(kern("*M4/4\t*", "*C:\t*", "4c 4e 4g\tI"))
    (event,) = select_melody(doc)
    assert event.midi_pitch == 67 and event.duration_q == 1


def test_grace_notes_dropped():
    doc = parse_kern(kern("*M4/4\t*", "*C:\t*", "4c\tI", "8gq\t.", "4d\t."))
    events = select_melody(doc)
    assert [e.midi_pitch for e in events] == [60, 62]
    assert events[1].onset_q == 1


def test_rightmost_kern_is_default_melody():
    text = kern("*M4/4\t*M4/4", "*C:\t*C:", "2C\t4e", ".\t4g", header="**kern\t**kern")
    doc = parse_kern(text)
    assert [e.midi_pitch for e in select_melody(doc)] == [64, 67]
    assert [e.midi_pitch for e in select_melody(doc, 0)] == [48]


def test_no_kern_spine():
    doc = parse_kern("**harm\n*M4/4\n*C:\nI\n*-\n")
    with pytest.raises(NoKernSpine):
        select_melody(doc)


def test_harm_timeline_forward_fill():
    doc = parse_kern(kern("*M4/4\t*", "*C:\t*", "2c\tI", "2e\tV", "=\t="))
    timeline = harm_timeline(doc)
    assert [(e.onset_q, e.token) for e in timeline] == [(0, "I"), (2, "V")]


def test_harm_timeline_null_placeholders():
    doc = parse_kern(kern("*M4/4\t*", "*C:\t*", "4c\tI", "4d\t.", "4e\t.", "4f\t."))
    assert [(e.onset_q, e.token) for e in harm_timeline(doc)] == [(0, "I")]


def test_key_change_mid_piece():
    lines = ["*M4/4\t*", "*C:\t*"] + ["2c\tI", "2c\t.", "=\t="] * 2
    lines += ["*G:\t*G:", "1g\tI"]
    doc = parse_kern(kern(*lines))
    timeline = harm_timeline(doc)
    assert timeline[-1].onset_q == 8
    assert timeline[-1].key == Key(7, "major")
    assert timeline[0].key == Key(0, "major")


def test_harm_timeline_empty_without_harm():
    doc = parse_kern("**kern\n*M4/4\n*C:\n4c\n*-\n")
    assert harm_timeline(doc) == []


def test_multiple_harm_spines():
    doc = parse_kern(kern("*M4/4\t*\t*", "*C:\t*\t*", "4c\tI\tI", header="**kern\t**harm\t**harm"))
    with pytest.raises(MultipleHarmSpines):
        harm_timeline(doc)


@pytest.mark.parametrize("manip", ["*^", "*v", "*x", "*+"])
def test_spine_paths_rejected(manip):
    with pytest.raises(UnsupportedSpinePath):
        parse_kern(kern("*M4/4\t*", "*C:\t*", f"{manip}\t*", "4c\tI"))


def test_malformed_token_coordinates():
    with pytest.raises(MalformedToken) as info:
        parse_kern(kern("*M4/4\t*", "*C:\t*", "4c\tI", "4xz\t."))
    assert info.value.line == 5
    assert info.value.spine == 0


def test_wrong_token_count():
    with pytest.raises(MalformedToken):
        parse_kern(kern("*M4/4\t*", "*C:\t*", "4c"))


@pytest.mark.parametrize("lines", [["*C:\t*", "4c\tI"], ["*M4/4\t*", "4c\tI"]])
def test_missing_interpretation(lines):
    with pytest.raises(MissingInterpretation):
        parse_kern(kern(*lines))


def test_meter_beats():
    assert MeterSig(4, 4).beat_q == 1
    assert MeterSig(6, 8).beat_q == Fraction(3, 2)
    assert MeterSig(3, 8).beat_q == Fraction(1, 2)
    assert MeterSig(12, 8).bar_q == 6
    with pytest.raises(ValueError):
        MeterSig(3, 6)


def test_key_designations():
    assert Key.from_kern("*C:") == Key(0, "major")
    assert Key.from_kern("*a:") == Key(9, "minor")
    assert Key.from_kern("*B-:") == Key(10, "major")
    assert Key.from_kern("*f#:") == Key(6, "minor")


def test_pickup_counts_back_from_barline():
    doc = parse_kern(kern("*M3/4\t*", "*F:\t*", "8c\tI", "8e\t.", "=1\t=1", "2.f\tI", "==\t=="))
    events = select_melody(doc)
    assert [e.onset_in_bar_q for e in events] == [2, Fraction(5, 2), 0]
    assert [e.onset_q for e in events] == [0, Fraction(1, 2), 1]


def test_onsets_from_multiple_spines():
    text = kern("*M4/4\t*M4/4", "*C:\t*C:", "2c\t4e", ".\t8f", ".\t8e", "2d\t2d", header="**kern\t**kern")
    doc = parse_kern(text)
    assert [e.onset_q for e in select_melody(doc)] == [0, 1, Fraction(3, 2), 2]
    assert [e.onset_q for e in select_melody(doc, 0)] == [0, 2]


def test_harm_only_record_gets_interpolated_onset():
    text = kern("*M4/4\t*M4/4\t*", "*C:\t*C:\t*", "2c\t2e\tI", ".\t.\t.", "2G\t2d\tV", header="**kern\t**kern\t**harm")
    doc = parse_kern(text)
    assert [r.onset_q for r in doc.data_records] == [0, 2, 2]


def test_duration_warning(caplog):
    doc = parse_kern(kern("*M4/4\t*", "*C:\t*", "=1\t=1", "2c\tI", "4d\t.", "=2\t=2", "1e\t.", "==\t=="))
    problems = check_durations(doc)
    assert len(problems) == 1 and "3 q" in problems[0]


def test_minicorpus_is_metrically_clean(minicorpus_files):
    from nctreduce.kern import read_kern

    for path in minicorpus_files:
        assert check_durations(read_kern(path)) == []


def test_round_trip_preserves_comments_and_crlf_free_text():
    text = "!!!COM: x\n**kern\n!local\n*M2/4\n*D:\n=1-\n4d\n4f#\n== \n*-\n!!!END\n"
    assert parse_kern(text).serialize() == text
    assert parse_kern(text.rstrip("\n")).serialize() == text.rstrip("\n")


def test_melody_onsets_strictly_increase(minicorpus_files):
    from nctreduce.kern import read_kern

    for path in minicorpus_files:
        onsets = [e.onset_q for e in select_melody(read_kern(path))]
        assert all(a < b for a, b in zip(onsets, onsets[1:]))


_pitch = st.sampled_from(["c", "d", "e-", "f#", "g", "a", "b-", "cc", "B", "A"])
_dur = st.sampled_from(["4", "8", "2", "4.", "16"])


@given(st.lists(st.tuples(_dur, _pitch, st.booleans()), min_size=1, max_size=20))
def test_random_melodies_round_trip(notes):
    body = [f"{d}{'r' if rest else p}\t{'I' if i == 0 else '.'}" for i, (d, p, rest) in enumerate(notes)]
    text = kern("*M4/4\t*", "*C:\t*", *body)
    doc = parse_kern(text)
    assert doc.serialize() == text
    events = select_melody(doc)
    assert len(events) == len(notes)
    assert sum(e.duration_q for e in events) == sum(parse_note(f"{d}r").duration_q for d, _, _ in notes)
