"""Melody reduction output: a ``**color`` spine marking predicted non-chord tones."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .features import FeatureRow
from .kern import MelodyPolicy, ScoreDocument, melody_spine, select_melody

COLOR_SPINE = "**color"
_HEX_RE = re.compile(r"^#[0-9A-Fa-f]{6}$")
_NAME_RE = re.compile(r"^[A-Za-z]+$")


class AlignmentMismatch(ValueError):
    pass


def _check_color(value: str) -> str:
    if not (_HEX_RE.match(value) or _NAME_RE.match(value)):
        raise ValueError(f"colour must be a name or #RRGGBB, got {value!r}")
    return value


@dataclass(frozen=True)
class ReduceConfig:
    threshold: float = 0.5
    ct_color: str = "black"
    nct_color: str = "hotpink"
    unscored_color: str = "black"

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")
        for value in (self.ct_color, self.nct_color, self.unscored_color):
            _check_color(value)

    def color_for(self, prob: float) -> str:
        return self.ct_color if prob >= self.threshold else self.nct_color


def colorize(
    doc: ScoreDocument,
    rows: Sequence[FeatureRow],
    probs: Sequence[float],
    config: ReduceConfig = ReduceConfig(),
    melody_policy: MelodyPolicy = None,
) -> str:
    """Return ``doc`` as kern text with a ``**color`` spine appended.

    Each melody note's records (every token of a tie chain) carry the colour
    for its predicted probability.  Rests, grace notes and notes without a
    row get ``unscored_color``; records where the melody spine holds a null
    token get ``.``.
    """
    if len(rows) != len(probs):
        raise AlignmentMismatch(f"{len(rows)} rows but {len(probs)} probabilities")
    events = select_melody(doc, melody_policy)
    sounding = [e for e in events if not e.is_rest]
    if len(rows) > len(sounding):
        raise AlignmentMismatch(f"{len(rows)} rows for {len(sounding)} melody notes")
    colors: dict[int, str] = {}
    for event in events:
        for rec_idx in event.records:
            colors[rec_idx] = config.unscored_color
    for row, prob in zip(rows, probs):
        if not 0 <= row.note_index < len(sounding):
            raise AlignmentMismatch(
                f"row note_index {row.note_index} outside the {len(sounding)} melody notes"
            )
        for rec_idx in sounding[row.note_index].records:
            colors[rec_idx] = config.color_for(float(prob))

    column = melody_spine(doc, melody_policy).column
    lines = []
    for rec in doc.records:
        if not rec.is_spine_record:
            lines.append(rec.text())
            continue
        if rec.kind == "exclusive":
            extra = COLOR_SPINE
        elif rec.kind == "interp":
            extra = "*-" if rec.tokens[0] == "*-" else "*"
        elif rec.kind == "comment":
            extra = "!"
        elif rec.kind == "barline":
            extra = rec.tokens[column]
        elif rec.index in colors:
            extra = colors[rec.index]
        elif rec.tokens[column] != ".":
            extra = config.unscored_color  # grace note
        else:
            extra = "."
        lines.append("\t".join(rec.tokens + (extra,)))
    text = "\n".join(lines)
    return text + "\n" if doc.trailing_newline else text


def strip_color(text: str) -> str:
    """Remove the last spine of ``text`` when it is a ``**color`` spine."""
    lines = text.split("\n")
    out = []
    in_spines = False
    done = False
    for line in lines:
        if not in_spines and not done and line.startswith("**"):
            if line.split("\t")[-1] != COLOR_SPINE:
                return text
            in_spines = True
        if in_spines and line and not line.startswith("!!"):
            tokens = line.split("\t")
            out.append("\t".join(tokens[:-1]))
            if tokens[-1] == "*-":
                in_spines, done = False, True
            continue
        out.append(line)
    return "\n".join(out)
