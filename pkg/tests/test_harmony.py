import pytest
from hypothesis import given, strategies as st

from nctreduce.harmony import NoteLabel, UnparseableRN, chord_pitch_classes, label_note, parse_rn
from nctreduce.kern import Key

C = Key(0, "major")
A_MIN = Key(9, "minor")


def pcs(token, key):
    return set(chord_pitch_classes(parse_rn(token), key).pcs)


def test_parse_v7():
    rn = parse_rn("V7")
    assert (rn.degree, rn.quality, rn.has_seventh, rn.seventh) == (5, "major", True, 10)


def test_parse_viiob():
    rn = parse_rn("viiob")
    assert (rn.degree, rn.quality, rn.inversion) == (7, "diminished", 1)


def test_parse_applied():
    rn = parse_rn("V/V")
    assert rn.degree == 5 and rn.quality == "major"
    assert len(rn.applied_chain) == 1 and rn.applied_chain[0].degree == 5


@pytest.mark.parametrize("token", ["???", "", ".", "Cad64", "VIII", "N/V"])
def test_unparseable(token):
    with pytest.raises(UnparseableRN):
        parse_rn(token)


@pytest.mark.parametrize("token, key, expected, root", [
    ("I", C, {0, 4, 7}, 0),
    ("V", A_MIN, {4, 8, 11}, 4),
    ("V7/IV", C, {0, 4, 7, 10}, 0),
    ("V/V", C, {2, 6, 9}, 2),
    ("viio7", C, {11, 2, 5, 8}, 11),
    ("viio7", A_MIN, {8, 11, 2, 5}, 8),
    ("ii%7", C, {2, 5, 8, 0}, 2),
    ("IVM7", C, {5, 9, 0, 4}, 5),
    ("III+", A_MIN, {0, 4, 8}, 0),
    ("-VI", C, {8, 0, 3}, 8),
    ("N", C, {1, 5, 8}, 1),
    ("Gn", A_MIN, {5, 9, 0, 3}, 5),
    ("It", C, {8, 0, 6}, 8),
    ("Fr", C, {8, 0, 2, 6}, 8),
    ("V/V/V", C, {9, 1, 4}, 9),
    ("viio7/V", C, {6, 9, 0, 3}, 6),
])
def test_chord_members(token, key, expected, root):
    members = chord_pitch_classes(parse_rn(token), key)
    assert set(members.pcs) == expected
    assert members.root_pc == root


def test_label_examples():
    assert label_note(5, "V7", C) is NoteLabel.CT
    assert label_note(2, "I", C) is NoteLabel.NCT
    assert label_note(0, "???", C) is NoteLabel.UNLABELED
    assert label_note(0, None, C) is NoteLabel.UNLABELED
    with pytest.raises(UnparseableRN):
        label_note(0, "???", C, policy="strict")


def test_markup_is_ignored():
    assert pcs("(V7)", C) == pcs("V7", C)
    assert pcs("I;", C) == {0, 4, 7}


def test_triad_and_seventh_sizes():
    for numeral in ["I", "ii", "iii", "IV", "V", "vi", "viio", "III+"]:
        assert len(pcs(numeral, C)) == 3
        assert len(pcs(numeral + "7", C)) == 4


_numerals = st.sampled_from(["I", "i", "ii", "IV", "V", "vi", "viio", "V/V", "V7/IV", "ii/vi", "N", "Ger"])
_figures = st.sampled_from(["", "7"])


@given(_numerals, st.sampled_from(["", "b", "c"]), st.integers(0, 11), st.sampled_from(["major", "minor"]))
def test_inversion_does_not_change_membership(numeral, inv, tonic, mode):
    key = Key(tonic, mode)
    assert pcs(numeral + inv, key) == pcs(numeral, key)


@given(_numerals, _figures, st.integers(0, 11), st.integers(0, 11), st.sampled_from(["major", "minor"]))
def test_transposition_equivariance(numeral, fig, tonic, shift, mode):
    if numeral in ("N", "Ger") or "7" in numeral:
        fig = ""
    token = numeral.replace("/", fig + "/", 1) if "/" in numeral else numeral + fig
    base = pcs(token, Key(tonic, mode))
    moved = pcs(token, Key((tonic + shift) % 12, mode))
    assert moved == {(p + shift) % 12 for p in base}
