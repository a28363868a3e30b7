"""Synthetic feature rows for model tests."""

from fractions import Fraction

import numpy as np

from nctreduce.features import FeatureRow, IntervalClass
from nctreduce.harmony import NoteLabel

_LEVELS = [IntervalClass.STEP, IntervalClass.LEAP, IntervalClass.NONE]


def row(label=1, dur=1, beat=1, ai="step", di="step", piece="p", index=0, boundary=0,
        from_rest=0, to_rest=0):
    return FeatureRow(
        piece_id=piece, note_index=index, duration_q=Fraction(dur), on_beat=beat,
        arriving=IntervalClass(ai), departing=IntervalClass(di), boundary=boundary,
        from_rest=from_rest, to_rest=to_rest, scale_degree="1",
        label=NoteLabel.CT if label else NoteLabel.NCT,
    )


def planted_rows(n, seed, coef=(0.5, 1.2, -1.5, 1.0)):
    """Rows drawn from logit p = b0 + b1 Beat + b2 DI_leap + b3 DI_leap*Beat.

    AI and Dur are drawn independently of the label."""
    rng = np.random.default_rng(seed)
    beat = rng.integers(0, 2, n)
    di = rng.choice(3, n, p=[0.5, 0.4, 0.1])
    ai = rng.choice(3, n, p=[0.5, 0.4, 0.1])
    dur = rng.choice([Fraction(1, 2), Fraction(1), Fraction(3, 2), Fraction(2)], n)
    leap = (di == 1).astype(float)
    eta = coef[0] + coef[1] * beat + coef[2] * leap + coef[3] * leap * beat
    y = rng.random(n) < 1.0 / (1.0 + np.exp(-eta))
    return [
        FeatureRow(
            piece_id=f"s{i // 50}", note_index=i % 50, duration_q=dur[i], on_beat=int(beat[i]),
            arriving=_LEVELS[ai[i]], departing=_LEVELS[di[i]], boundary=0, from_rest=0,
            to_rest=0, scale_degree="1", label=NoteLabel.CT if y[i] else NoteLabel.NCT,
        )
        for i in range(n)
    ]
