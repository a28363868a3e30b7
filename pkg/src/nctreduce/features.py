"""Per-note melodic features and their CSV form."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .harmony import MAJOR_SCALE, MINOR_SCALE, NoteLabel, label_note
from .kern import (
    LETTERS, HarmEvent, Key, MeterSig, NoteEvent, ScoreDocument, harm_at, harm_timeline,
    select_melody, value_at,
)

CSV_COLUMNS = (
    "piece_id", "note_index", "duration_q", "on_beat", "arriving", "departing",
    "boundary", "from_rest", "to_rest", "scale_degree", "label",
)
CODINGS = ("ternary", "binary")


class SchemaMismatch(ValueError):
    pass


class IntervalClass(str, enum.Enum):
    STEP = "step"
    LEAP = "leap"
    UNISON = "unison"
    NONE = "none"


@dataclass(frozen=True)
class FeatureRow:
    piece_id: str
    note_index: int
    duration_q: Fraction
    on_beat: int
    arriving: IntervalClass
    departing: IntervalClass
    boundary: int
    from_rest: int
    to_rest: int
    scale_degree: str
    label: NoteLabel

    @property
    def is_labeled(self) -> bool:
        return self.label is not NoteLabel.UNLABELED


def classify_interval(semitones: Optional[int], adjacent_exists: bool = True) -> IntervalClass:
    if not adjacent_exists or semitones is None:
        return IntervalClass.NONE
    size = abs(semitones)
    if size == 0:
        return IntervalClass.UNISON
    if size <= 2:
        return IntervalClass.STEP
    return IntervalClass.LEAP


def is_on_beat(onset_in_bar_q: Fraction, meter: MeterSig) -> int:
    return int(Fraction(onset_in_bar_q) % meter.beat_q == 0)


def scale_degree(event: NoteEvent, key: Key) -> str:
    """Degree 1-7 prefixed by ``#``/``-`` alterations against the key's scale
    (natural minor in minor keys).  Uses the note's spelling when known."""
    scale = MAJOR_SCALE if key.mode == "major" else MINOR_SCALE
    rel = (event.pitch_class - key.tonic_pc) % 12
    if event.letter and key.tonic_letter:
        degree = (LETTERS.index(event.letter) - LETTERS.index(key.tonic_letter)) % 7 + 1
    else:
        degree = min(range(1, 8), key=lambda d: (abs((rel - scale[d - 1] + 6) % 12 - 6), -scale[d - 1]))
    alter = (rel - scale[degree - 1] + 6) % 12 - 6
    alter = max(-2, min(2, alter))
    return ("#" * alter if alter > 0 else "-" * -alter) + str(degree)


def extract_features(
    melody: Sequence[NoteEvent],
    harm: Sequence[HarmEvent],
    meters: Sequence[tuple[Fraction, MeterSig]],
    keys: Sequence[tuple[Fraction, Key]],
    piece_id: str,
    coding: str = "ternary",
    rn_policy: str = "skip",
) -> list[FeatureRow]:
    """One row per sounding melody note.

    Rests break melodic adjacency: the neighbouring interval becomes
    ``none`` and the matching rest flag is set.  The label comes from the
    harmony token sounding at the note's onset, read in the key in force at
    that onset.  ``coding="binary"`` drops rows whose arriving or departing
    interval is ``none``.
    """
    if coding not in CODINGS:
        raise ValueError(f"coding must be one of {CODINGS}")
    if not melody:
        raise ValueError(f"{piece_id}: empty melody")
    sounding = [i for i, e in enumerate(melody) if not e.is_rest]
    rows = []
    for note_index, pos in enumerate(sounding):
        event = melody[pos]
        prev = melody[pos - 1] if pos > 0 else None
        nxt = melody[pos + 1] if pos + 1 < len(melody) else None
        from_rest = int(prev is not None and prev.is_rest)
        to_rest = int(nxt is not None and nxt.is_rest)
        arriving = classify_interval(
            None if prev is None or prev.is_rest else event.midi_pitch - prev.midi_pitch,
            prev is not None and not prev.is_rest,
        )
        departing = classify_interval(
            None if nxt is None or nxt.is_rest else nxt.midi_pitch - event.midi_pitch,
            nxt is not None and not nxt.is_rest,
        )
        key = value_at(keys, event.onset_q)
        chord = harm_at(harm, event.onset_q)
        label = label_note(event.pitch_class, chord.token if chord else None, key, rn_policy)
        rows.append(FeatureRow(
            piece_id=piece_id,
            note_index=note_index,
            duration_q=event.duration_q,
            on_beat=is_on_beat(event.onset_in_bar_q, value_at(meters, event.onset_q)),
            arriving=arriving,
            departing=departing,
            boundary=int(note_index in (0, len(sounding) - 1)),
            from_rest=from_rest,
            to_rest=to_rest,
            scale_degree=scale_degree(event, key),
            label=label,
        ))
    if coding == "binary":
        rows = [r for r in rows if IntervalClass.NONE not in (r.arriving, r.departing)]
    return rows


def features_from_document(doc: ScoreDocument, piece_id: Optional[str] = None, melody_policy=None,
                           coding: str = "ternary", rn_policy: str = "skip") -> list[FeatureRow]:
    return extract_features(
        select_melody(doc, melody_policy), harm_timeline(doc), doc.meter_map, doc.key_map,
        piece_id or doc.source_id, coding=coding, rn_policy=rn_policy,
    )


def _format(row: FeatureRow) -> list[str]:
    return [
        row.piece_id, str(row.note_index), str(row.duration_q), str(row.on_beat),
        row.arriving.value, row.departing.value, str(row.boundary), str(row.from_rest),
        str(row.to_rest), row.scale_degree, row.label.value,
    ]


def write_feature_csv(rows: Iterable[FeatureRow], stream=None) -> str:
    """Write rows as CSV; returns the text (and writes to ``stream`` if given)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(_format(row))
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def read_feature_csv(text: str) -> list[FeatureRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_COLUMNS:
        raise SchemaMismatch(f"expected columns {','.join(CSV_COLUMNS)}, got {header}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(CSV_COLUMNS):
            raise SchemaMismatch(f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(rec)}")
        try:
            rows.append(FeatureRow(
                piece_id=rec[0],
                note_index=int(rec[1]),
                duration_q=Fraction(rec[2]),
                on_beat=_binary(rec[3]),
                arriving=IntervalClass(rec[4]),
                departing=IntervalClass(rec[5]),
                boundary=_binary(rec[6]),
                from_rest=_binary(rec[7]),
                to_rest=_binary(rec[8]),
                scale_degree=rec[9],
                label=NoteLabel(rec[10]),
            ))
        except ValueError as exc:
            raise SchemaMismatch(f"line {lineno}: {exc}") from None
    return rows


def _binary(text: str) -> int:
    value = int(text)
    if value not in (0, 1):
        raise ValueError(f"expected 0 or 1, got {text!r}")
    return value

