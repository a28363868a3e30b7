"""Humdrum ``**kern`` / ``**harm`` reader.

Only a pragmatic subset of Humdrum is understood: a single spine layout that
is opened by one exclusive-interpretation record and closed by ``*-``.  Spine
splits, joins, exchanges and additions are rejected.  Every record is kept as
its raw tab-separated tokens so a parsed document serializes back to the
exact input text.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

LOGGER = logging.getLogger(__name__)

LETTERS = "CDEFGAB"
LETTER_PC = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
ACCIDENTALS = {"#": 1, "##": 2, "###": 3, "-": -1, "--": -2, "---": -3, "n": 0}

NULL_TOKEN = "."
SPINE_PATH_TOKENS = {"*^", "*v", "*x", "*+"}

_DURATION_RE = re.compile(r"(\d+)(?:%(\d+))?(\.*)")
_PITCH_RE = re.compile(r"([A-Ga-g])\1*")
_METER_RE = re.compile(r"^\*M(\d+)/(\d+)$")
_KEY_RE = re.compile(r"^\*([A-Ga-g])([#-]*):$")


class KernError(ValueError):
    """Base class for everything the reader refuses."""


class UnsupportedSpinePath(KernError):
    def __init__(self, source_id: str, line: int, token: str):
        super().__init__(f"{source_id}:{line}: spine path {token!r} is not supported")
        self.source_id = source_id
        self.line = line
        self.token = token


class MalformedToken(KernError):
    def __init__(self, source_id: str, line: int, spine: int, token: str, reason: str = ""):
        msg = f"{source_id}:{line}: spine {spine + 1}: malformed token {token!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)
        self.source_id = source_id
        self.line = line
        self.spine = spine
        self.token = token


class MissingInterpretation(KernError):
    pass


class NoKernSpine(KernError):
    pass


class MultipleHarmSpines(KernError):
    pass


@dataclass(frozen=True)
class MeterSig:
    numerator: int
    denominator: int

    def __post_init__(self):
        if self.numerator < 1:
            raise ValueError(f"bad meter numerator {self.numerator}")
        if self.denominator < 1 or self.denominator & (self.denominator - 1):
            raise ValueError(f"meter denominator must be a power of two, got {self.denominator}")

    @property
    def bar_q(self) -> Fraction:
        return Fraction(4 * self.numerator, self.denominator)

    @property
    def beat_q(self) -> Fraction:
        # compound meters (6/8, 9/8, 12/16 ...) beat on the dotted value
        unit = Fraction(4, self.denominator)
        if self.numerator > 3 and self.numerator % 3 == 0:
            return 3 * unit
        return unit

    def __str__(self) -> str:
        return f"{self.numerator}/{self.denominator}"


@dataclass(frozen=True)
class Key:
    tonic_pc: int
    mode: str  # "major" | "minor"
    tonic_letter: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if self.mode not in ("major", "minor"):
            raise ValueError(f"mode must be major or minor, got {self.mode!r}")
        if not 0 <= self.tonic_pc < 12:
            raise ValueError(f"tonic pitch class out of range: {self.tonic_pc}")

    @classmethod
    def from_kern(cls, token: str) -> "Key":
        """``*C:`` -> C major, ``*f#:`` -> F-sharp minor, ``*B-:`` -> B-flat major."""
        m = _KEY_RE.match(token)
        if not m:
            raise ValueError(f"not a key designation: {token!r}")
        letter, acc = m.groups()
        alter = ACCIDENTALS.get(acc, 0) if acc else 0
        pc = (LETTER_PC[letter.upper()] + alter) % 12
        return cls(pc, "major" if letter.isupper() else "minor", letter.upper())

    def transpose(self, semitones: int) -> "Key":
        return Key((self.tonic_pc + semitones) % 12, self.mode)


@dataclass(frozen=True)
class KernNote:
    """One note (or rest) inside a kern data token."""

    midi: Optional[int]
    letter: Optional[str]
    alter: int
    duration_q: Fraction
    is_rest: bool = False
    is_grace: bool = False
    tie_start: bool = False
    tie_continue: bool = False
    tie_end: bool = False

    @property
    def pitch_class(self) -> Optional[int]:
        return None if self.midi is None else self.midi % 12


def parse_duration(text: str) -> Optional[Fraction]:
    """Kern reciprocal rhythm, e.g. ``4`` -> 1, ``8.`` -> 3/4, ``0`` -> 8, ``3%2`` -> 8/3."""
    m = _DURATION_RE.search(text)
    if not m:
        return None
    digits, denom, dots = m.groups()
    if set(digits) == {"0"}:
        base = Fraction(4 * 2 ** len(digits))  # breve, long, maxima
    else:
        base = Fraction(4 * int(denom or 1), int(digits))
    if dots:
        base *= 2 - Fraction(1, 2 ** len(dots))
    return base


def parse_note(text: str) -> KernNote:
    """Parse one space-free kern note/rest subtoken.  Raises ValueError on junk."""
    is_grace = "q" in text or "Q" in text
    duration = parse_duration(text)
    ties = dict(
        tie_start="[" in text,
        tie_continue="_" in text,
        tie_end="]" in text,
    )
    runs = list(_PITCH_RE.finditer(text))
    if "r" in text and not runs:
        if duration is None:
            raise ValueError("rest without duration")
        return KernNote(None, None, 0, duration, is_rest=True)
    if len(runs) != 1:
        raise ValueError("expected exactly one pitch name")
    run = runs[0].group(0)
    letter = run[0].upper()
    octave = 4 + len(run) - 1 if run[0].islower() else 3 - (len(run) - 1)
    acc = re.match(r"#+|-+|n", text[runs[0].end():])
    alter = ACCIDENTALS.get(acc.group(0), 0) if acc else 0
    if duration is None:
        if not is_grace:
            raise ValueError("note without duration")
        duration = Fraction(0)
    if is_grace:
        duration = Fraction(0)
    midi = 12 * (octave + 1) + LETTER_PC[letter] + alter
    if not 0 <= midi <= 127:
        raise ValueError(f"pitch out of MIDI range ({midi})")
    return KernNote(midi, letter, alter, duration, is_grace=is_grace, **ties)


def parse_kern_token(text: str) -> list[KernNote]:
    """A kern data token may be a chord: space-separated subtokens."""
    return [parse_note(sub) for sub in text.split(" ") if sub]


@dataclass(frozen=True)
class Record:
    """One line of the file.

    ``kind`` is one of ``global`` (``!!`` comments, blank lines and anything
    outside the spine block), ``exclusive``, ``interp``, ``comment``,
    ``barline`` or ``data``.
    """

    index: int
    kind: str
    tokens: tuple[str, ...]
    onset_q: Fraction = Fraction(0)
    bar_index: int = 0
    onset_in_bar_q: Fraction = Fraction(0)

    @property
    def is_spine_record(self) -> bool:
        return self.kind != "global"

    def text(self) -> str:
        return "\t".join(self.tokens)


@dataclass(frozen=True)
class Spine:
    exclusive_interp: str
    column: int
    tokens: tuple[tuple[int, str], ...]  # (record index, raw token)

    def __post_init__(self):
        if not self.exclusive_interp.startswith("**"):
            raise ValueError(f"exclusive interpretation must start with '**': {self.exclusive_interp!r}")

    @property
    def is_kern(self) -> bool:
        return self.exclusive_interp == "**kern"


@dataclass(frozen=True)
class NoteEvent:
    midi_pitch: Optional[int]
    pitch_class: Optional[int]
    onset_q: Fraction
    onset_in_bar_q: Fraction
    duration_q: Fraction
    is_rest: bool = False
    is_grace: bool = False
    tie_merged: bool = False
    bar_index: int = 0
    letter: Optional[str] = None
    records: tuple[int, ...] = ()


@dataclass(frozen=True)
class HarmEvent:
    onset_q: Fraction
    token: str
    key: Key


@dataclass(frozen=True)
class ScoreDocument:
    spines: tuple[Spine, ...]
    records: tuple[Record, ...]
    meter_map: tuple[tuple[Fraction, MeterSig], ...]
    key_map: tuple[tuple[Fraction, Key], ...]
    source_id: str = "<string>"
    trailing_newline: bool = True

    def serialize(self) -> str:
        text = "\n".join(r.text() for r in self.records)
        return text + "\n" if self.trailing_newline else text

    @property
    def kern_spines(self) -> list[Spine]:
        return [s for s in self.spines if s.is_kern]

    @property
    def data_records(self) -> list[Record]:
        return [r for r in self.records if r.kind == "data"]

    @property
    def length_q(self) -> Fraction:
        """Onset of the record following the last sounding token."""
        return max((r.onset_q for r in self.records), default=Fraction(0))

    def meter_at(self, onset: Fraction) -> MeterSig:
        return value_at(self.meter_map, onset)

    def key_at(self, onset: Fraction) -> Key:
        return value_at(self.key_map, onset)


def value_at(mapping: Sequence[tuple[Fraction, object]], onset: Fraction):
    current = mapping[0][1]
    for start, value in mapping:
        if start > onset:
            break
        current = value
    return current


def _classify(line: str) -> str:
    if line.startswith("!!") or not line.strip():
        return "global"
    if line.startswith("**"):
        return "exclusive"
    if line.startswith("*"):
        return "interp"
    if line.startswith("!"):
        return "comment"
    if line.startswith("="):
        return "barline"
    return "data"


def _token_duration(notes: Iterable[KernNote]) -> tuple[Fraction, bool]:
    """(duration, grace_only) of a parsed token; the first non-grace subtoken wins."""
    notes = list(notes)
    for note in notes:
        if not note.is_grace:
            return note.duration_q, False
    return Fraction(0), True


def parse_kern(text: str, source_id: str = "<string>") -> ScoreDocument:
    """Parse Humdrum text holding ``**kern`` (and optionally ``**harm``) spines."""
    trailing_newline = text.endswith("\n")
    lines = text.split("\n")
    if trailing_newline:
        lines.pop()
    lines = [ln[:-1] if ln.endswith("\r") else ln for ln in lines]

    raw: list[tuple[str, tuple[str, ...]]] = []
    n_spines = 0
    state = "header"  # header -> body -> closed
    for lineno, line in enumerate(lines, start=1):
        kind = _classify(line)
        if kind == "global" or state == "closed":
            if kind != "global":
                if kind == "exclusive":
                    raise UnsupportedSpinePath(source_id, lineno, line.split("\t")[0])
                raise MalformedToken(source_id, lineno, 0, line, "content after spine terminator")
            raw.append(("global", (line,)))
            continue
        tokens = tuple(line.split("\t"))
        if state == "header":
            if kind != "exclusive":
                raise MalformedToken(source_id, lineno, 0, tokens[0], "expected '**' exclusive interpretation")
            n_spines = len(tokens)
            for col, tok in enumerate(tokens):
                if not tok.startswith("**") or len(tok) < 3:
                    raise MalformedToken(source_id, lineno, col, tok, "bad exclusive interpretation")
            state = "body"
        elif kind == "exclusive":
            raise UnsupportedSpinePath(source_id, lineno, tokens[0])
        if len(tokens) != n_spines:
            raise MalformedToken(
                source_id, lineno, min(len(tokens), n_spines) - 1, line,
                f"expected {n_spines} tokens, found {len(tokens)}",
            )
        if kind == "interp":
            for tok in tokens:
                if tok in SPINE_PATH_TOKENS:
                    raise UnsupportedSpinePath(source_id, lineno, tok)
            terminators = [tok == "*-" for tok in tokens]
            if any(terminators):
                if not all(terminators):
                    raise UnsupportedSpinePath(source_id, lineno, "*-")
                state = "closed"
        raw.append((kind, tokens))

    if state == "header":
        raise MalformedToken(source_id, len(lines), 0, "", "no exclusive interpretation found")
    if state != "closed":
        LOGGER.warning("%s: spines are not terminated with '*-'", source_id)

    header = next(toks for kind, toks in raw if kind == "exclusive")
    kern_cols = [c for c, tok in enumerate(header) if tok == "**kern"]

    # timing pass
    records: list[Record] = []
    meters: list[tuple[Fraction, MeterSig]] = []
    keys: list[tuple[Fraction, Key]] = []
    seen_data = False
    now = Fraction(0)
    ends = {c: Fraction(0) for c in kern_cols}
    onsets: list[Fraction] = []
    for idx, (kind, tokens) in enumerate(raw):
        lineno = idx + 1
        onsets.append(now)
        if kind == "interp":
            meter = key = None
            for col, tok in enumerate(tokens):
                m = _METER_RE.match(tok)
                if m and meter is None:
                    try:
                        meter = MeterSig(int(m.group(1)), int(m.group(2)))
                    except ValueError as exc:
                        raise MalformedToken(source_id, lineno, col, tok, str(exc)) from None
                if _KEY_RE.match(tok) and key is None:
                    key = Key.from_kern(tok)
            if meter is not None:
                _push(meters, now, meter)
            if key is not None:
                _push(keys, now, key)
        elif kind == "data":
            if not seen_data:
                if not meters:
                    raise MissingInterpretation(f"{source_id}: no meter (*M) before the first data record")
                if not keys:
                    raise MissingInterpretation(f"{source_id}: no key designation (*X:) before the first data record")
                seen_data = True
            nonnull = False
            grace_only = True
            for col in kern_cols:
                tok = tokens[col]
                if tok == NULL_TOKEN:
                    continue
                try:
                    notes = parse_kern_token(tok)
                except ValueError as exc:
                    raise MalformedToken(source_id, lineno, col, tok, str(exc)) from None
                if not notes:
                    raise MalformedToken(source_id, lineno, col, tok, "empty token")
                nonnull = True
                dur, graces = _token_duration(notes)
                if graces:
                    continue
                grace_only = False
                ends[col] = now + dur
            if nonnull and grace_only:
                continue
            future = [end for end in ends.values() if end > now]
            if future:
                now = min(future)

    if not seen_data:
        if not meters or not keys:
            raise MissingInterpretation(f"{source_id}: no meter or key interpretation")
    # anything before the first interpretation still counts from zero
    meters[0] = (Fraction(0), meters[0][1])
    keys[0] = (Fraction(0), keys[0][1])

    # bar positions
    barline_onsets = [onsets[i] for i, (kind, _) in enumerate(raw) if kind == "barline"]
    meter_map = tuple(meters)
    key_map = tuple(keys)
    first_bar_end = barline_onsets[0] if barline_onsets else None
    bar_index = 0
    bar_start = Fraction(0)
    for idx, (kind, tokens) in enumerate(raw):
        onset = onsets[idx]
        if kind == "barline":
            bar_index += 1
            bar_start = onset
        bar_q = value_at(meter_map, bar_start).bar_q
        if bar_index == 0 and first_bar_end is not None and first_bar_end < bar_q:
            # pickup bar: count backwards from the first barline
            in_bar = bar_q - (first_bar_end - onset)
        else:
            in_bar = onset - bar_start
        if in_bar >= bar_q:
            in_bar %= bar_q
        records.append(Record(idx, kind, tokens, onset, bar_index, in_bar))

    spines = []
    for col, name in enumerate(header):
        toks = tuple((r.index, r.tokens[col]) for r in records if r.is_spine_record)
        spines.append(Spine(name, col, toks))

    return ScoreDocument(
        spines=tuple(spines),
        records=tuple(records),
        meter_map=meter_map,
        key_map=key_map,
        source_id=source_id,
        trailing_newline=trailing_newline,
    )


def _push(mapping: list, onset: Fraction, value) -> None:
    if mapping and mapping[-1][0] == onset:
        mapping[-1] = (onset, value)
    elif not mapping or mapping[-1][1] != value:
        mapping.append((onset, value))


def read_kern(path) -> ScoreDocument:
    from pathlib import Path

    path = Path(path)
    return parse_kern(path.read_text(encoding="utf-8"), source_id=str(path))


def check_durations(doc: ScoreDocument) -> list[str]:
    """Compare each bar's summed token durations with its meter.

    Returns human-readable warnings; the first bar is exempt when it is a
    pickup (shorter than a full bar).
    """
    problems = []
    for spine in doc.kern_spines:
        totals: dict[int, Fraction] = {}
        for rec_idx, tok in spine.tokens:
            rec = doc.records[rec_idx]
            if rec.kind != "data" or tok == NULL_TOKEN:
                continue
            dur, _ = _token_duration(parse_kern_token(tok))
            totals[rec.bar_index] = totals.get(rec.bar_index, Fraction(0)) + dur
        bar_starts = {r.bar_index: r.onset_q for r in doc.records if r.kind == "barline"}
        for bar, total in sorted(totals.items()):
            expected = doc.meter_at(bar_starts.get(bar, Fraction(0))).bar_q
            if bar == 0 and total < expected:
                continue
            if total != expected:
                problems.append(
                    f"{doc.source_id}: spine {spine.column + 1}, bar segment {bar}: "
                    f"durations sum to {total} q, meter implies {expected} q"
                )
    for msg in problems:
        LOGGER.warning(msg)
    return problems


MelodyPolicy = Union[None, str, int]


def melody_spine(doc: ScoreDocument, policy: MelodyPolicy = None) -> Spine:
    """Pick the melody spine: ``None``/``"last"`` is the right-most ``**kern``,
    an int indexes the kern spines left to right (negative counts from the right)."""
    kern = doc.kern_spines
    if not kern:
        raise NoKernSpine(f"{doc.source_id}: no **kern spine")
    if policy is None or policy == "last":
        return kern[-1]
    try:
        return kern[int(policy)]
    except (IndexError, ValueError):
        raise ValueError(f"melody spine {policy!r} not available ({len(kern)} kern spines)") from None


def select_melody(doc: ScoreDocument, policy: MelodyPolicy = None) -> list[NoteEvent]:
    """Note/rest stream of the melody spine.

    Ties are merged into a single event, grace notes dropped and chords
    reduced to their highest pitch.
    """
    spine = melody_spine(doc, policy)
    events: list[NoteEvent] = []
    open_tie: Optional[int] = None  # index into events
    for rec_idx, tok in spine.tokens:
        rec = doc.records[rec_idx]
        if rec.kind != "data" or tok == NULL_TOKEN:
            continue
        notes = [n for n in parse_kern_token(tok) if not n.is_grace]
        if not notes:
            continue
        pitched = [n for n in notes if not n.is_rest]
        top = max(pitched, key=lambda n: n.midi) if pitched else notes[0]
        duration = notes[0].duration_q
        if top.is_rest:
            open_tie = None
            events.append(NoteEvent(
                None, None, rec.onset_q, rec.onset_in_bar_q, duration,
                is_rest=True, bar_index=rec.bar_index, records=(rec_idx,),
            ))
            continue
        if (top.tie_continue or top.tie_end) and open_tie is not None:
            prev = events[open_tie]
            if prev.midi_pitch != top.midi:
                LOGGER.warning("%s: tie joins different pitches at record %d", doc.source_id, rec_idx + 1)
            events[open_tie] = replace(
                prev, duration_q=prev.duration_q + duration, tie_merged=True,
                records=prev.records + (rec_idx,),
            )
            if top.tie_end:
                open_tie = None
            continue
        if top.tie_continue or top.tie_end:
            LOGGER.warning("%s: tie continuation without a start at record %d", doc.source_id, rec_idx + 1)
        events.append(NoteEvent(
            top.midi, top.pitch_class, rec.onset_q, rec.onset_in_bar_q, duration,
            bar_index=rec.bar_index, letter=top.letter, records=(rec_idx,),
        ))
        open_tie = len(events) - 1 if top.tie_start else None
    return events


def harm_spine(doc: ScoreDocument) -> Optional[Spine]:
    harm = [s for s in doc.spines if s.exclusive_interp == "**harm"]
    if len(harm) > 1:
        raise MultipleHarmSpines(f"{doc.source_id}: {len(harm)} **harm spines")
    return harm[0] if harm else None


def harm_timeline(doc: ScoreDocument) -> list[HarmEvent]:
    """Harmony tokens with onsets; each governs until the next one starts."""
    spine = harm_spine(doc)
    if spine is None:
        return []
    timeline = []
    for rec_idx, tok in spine.tokens:
        rec = doc.records[rec_idx]
        if rec.kind != "data" or tok == NULL_TOKEN:
            continue
        timeline.append(HarmEvent(rec.onset_q, tok, doc.key_at(rec.onset_q)))
    return timeline


def harm_at(timeline: Sequence[HarmEvent], onset: Fraction) -> Optional[HarmEvent]:
    current = None
    for event in timeline:
        if event.onset_q > onset:
            break
        current = event
    return current
