"""Chord-tone / non-chord-tone labelling of melodies in Humdrum scores."""

__version__ = "0.1.0"
