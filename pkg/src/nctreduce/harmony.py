"""Roman-numeral parsing and chord-tone membership for ``**harm`` tokens."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Optional

from .kern import Key

MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
MINOR_SCALE = (0, 2, 3, 5, 7, 8, 10)

TRIAD_OFFSETS = {
    "major": (0, 4, 7),
    "minor": (0, 3, 7),
    "diminished": (0, 3, 6),
    "augmented": (0, 4, 8),
}
# "7" on a triad of this quality; M7 and half-diminished are explicit
SEVENTH_BY_QUALITY = {"major": 10, "minor": 10, "diminished": 9, "augmented": 10}

# relative to the tonic; the first entry is reported as the root
SPECIAL_CHORDS = {
    "neapolitan": (1, 5, 8),
    "italian6": (8, 0, 6),
    "french6": (8, 0, 2, 6),
    "german6": (8, 0, 3, 6),
}

_NUMERALS = ("VII", "III", "VI", "IV", "II", "V", "I")
_NUMERAL_DEGREE = {"I": 1, "II": 2, "III": 3, "IV": 4, "V": 5, "VI": 6, "VII": 7}
_FIGURES = {  # figure -> (has seventh, inversion)
    "7": (True, 0), "65": (True, 1), "43": (True, 2), "42": (True, 3), "2": (True, 3),
    "6": (False, 1), "64": (False, 2),
}
_CHORD_RE = re.compile(
    r"""^(?P<acc>[#-]*)
    (?P<numeral>{numerals})
    (?P<quality>[o+%ø]?)
    (?P<major7>M(?=7))?
    (?P<figure>65|64|43|42|7|6|2)?
    (?P<inv>[abcd]?)$""".format(numerals="|".join(n + "|" + n.lower() for n in _NUMERALS)),
    re.VERBOSE,
)
_SPECIAL_RE = re.compile(r"^(?P<name>N|Lt|It|Fr|Gn|Ger|Gr)(?P<fig>\d*)(?P<inv>[abcd]?)$")
_SPECIAL_NAMES = {
    "N": "neapolitan", "Lt": "italian6", "It": "italian6", "Fr": "french6",
    "Gn": "german6", "Ger": "german6", "Gr": "german6",
}
_MARKUP = "(){}[];'\" \t"


class UnparseableRN(ValueError):
    pass


class NoteLabel(str, enum.Enum):
    CT = "CT"
    NCT = "NCT"
    UNLABELED = "Unlabeled"


@dataclass(frozen=True)
class RomanNumeral:
    degree: Optional[int]
    quality: str = "major"
    seventh: Optional[int] = None  # semitones above the root, None = triad
    inversion: int = 0
    alteration: int = 0
    applied_chain: tuple["RomanNumeral", ...] = ()
    special: Optional[str] = None

    def __post_init__(self):
        if self.special is None and self.degree is None:
            raise ValueError("degree required unless the chord is special")
        if self.special is not None and self.applied_chain:
            raise ValueError("special chords cannot be applied chords")

    @property
    def has_seventh(self) -> bool:
        return self.seventh is not None


@dataclass(frozen=True)
class ChordMembers:
    pcs: frozenset[int]
    root_pc: int


def _parse_chord(text: str) -> RomanNumeral:
    m = _CHORD_RE.match(text)
    if not m:
        raise UnparseableRN(text)
    numeral = m.group("numeral")
    degree = _NUMERAL_DEGREE[numeral.upper()]
    quality = "major" if numeral.isupper() else "minor"
    mark = m.group("quality")
    half_dim = mark in ("%", "ø")
    if mark == "o" or half_dim:
        quality = "diminished"
    elif mark == "+":
        quality = "augmented"

    has_seventh, inversion = _FIGURES.get(m.group("figure") or "", (False, 0))
    if m.group("major7"):
        seventh = 11
    elif half_dim:
        seventh = 10 if has_seventh else None
    else:
        seventh = SEVENTH_BY_QUALITY[quality] if has_seventh else None
    if m.group("inv"):
        inversion = "abcd".index(m.group("inv"))

    acc = m.group("acc")
    alteration = acc.count("#") - acc.count("-")
    return RomanNumeral(degree, quality, seventh, inversion, alteration)


def parse_rn(token: str) -> RomanNumeral:
    """Parse a ``**harm`` token such as ``V7``, ``viiob``, ``V/V`` or ``Gn``."""
    text = token.strip(_MARKUP)
    if not text or text == ".":
        raise UnparseableRN(token)
    head, *targets = text.split("/")
    special = _SPECIAL_RE.match(head)
    if special:
        if targets:
            raise UnparseableRN(token)
        inv = special.group("inv")
        return RomanNumeral(
            None, "major", special=_SPECIAL_NAMES[special.group("name")],
            inversion="abcd".index(inv) if inv else 0,
        )
    chain = tuple(_parse_chord(t) for t in targets)
    try:
        rn = _parse_chord(head)
    except UnparseableRN:
        raise UnparseableRN(token) from None
    return RomanNumeral(
        rn.degree, rn.quality, rn.seventh, rn.inversion, rn.alteration, applied_chain=chain,
    )


def _root_pc(rn: RomanNumeral, key: Key) -> int:
    scale = MAJOR_SCALE if key.mode == "major" else MINOR_SCALE
    offset = scale[rn.degree - 1]
    if key.mode == "minor" and rn.degree == 7 and rn.quality == "diminished" and not rn.alteration:
        offset = 11  # leading-tone chord uses the raised seventh
    return (key.tonic_pc + offset + rn.alteration) % 12


def _tonicized_key(target: RomanNumeral, key: Key) -> Key:
    mode = "major" if target.quality in ("major", "augmented") else "minor"
    return Key(_root_pc(target, key), mode)


def chord_pitch_classes(rn: RomanNumeral, key: Key) -> ChordMembers:
    if rn.special is not None:
        offsets = SPECIAL_CHORDS[rn.special]
        pcs = frozenset((key.tonic_pc + o) % 12 for o in offsets)
        return ChordMembers(pcs, (key.tonic_pc + offsets[0]) % 12)

    local = key
    for target in reversed(rn.applied_chain):
        local = _tonicized_key(target, local)
    root = _root_pc(rn, local)
    offsets = TRIAD_OFFSETS[rn.quality]
    if rn.seventh is not None:
        offsets = offsets + (rn.seventh,)
    return ChordMembers(frozenset((root + o) % 12 for o in offsets), root)


def label_note(
    pc: int, rn_token: Optional[str], key: Key, policy: str = "skip"
) -> NoteLabel:
    """CT if the pitch class belongs to the chord named by ``rn_token``.

    With ``policy="skip"`` an absent or unparseable token yields
    ``NoteLabel.UNLABELED``; ``policy="strict"`` re-raises ``UnparseableRN``.
    """
    if policy not in ("skip", "strict"):
        raise ValueError(f"unknown policy {policy!r}")
    if rn_token is None:
        return NoteLabel.UNLABELED
    try:
        rn = parse_rn(rn_token)
    except UnparseableRN:
        if policy == "strict":
            raise
        return NoteLabel.UNLABELED
    members = chord_pitch_classes(rn, key)
    return NoteLabel.CT if pc % 12 in members.pcs else NoteLabel.NCT
