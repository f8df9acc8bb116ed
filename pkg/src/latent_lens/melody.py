"""Quantized monophonic melody representation.

A melody lives on a fixed 16th-note grid (4 steps per quarter, 4/4 only) and
is stored either as note spans (pitch, onset step, duration in steps) or as a
flat token sequence over a 130-symbol vocabulary: codes 0..127 start a note at
that MIDI pitch, 128 starts a silence, 129 holds whatever state is active.
The two forms convert losslessly via :func:`tokenize` / :func:`detokenize`.

Corpora of token sequences are stored as JSONL, one object per line:
``{"bars": n, "tempo_qpm": x, "tokens": [ints]}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

STEPS_PER_QUARTER = 4
QUARTERS_PER_BAR = 4
STEPS_PER_BAR = STEPS_PER_QUARTER * QUARTERS_PER_BAR

MIN_PITCH = 0
MAX_PITCH = 127
REST = 128
HOLD = 129
VOCAB_SIZE = 130

SUPPORTED_BARS = (2, 16)


class InvalidMelody(ValueError):
    """Raised when note spans violate the monophonic piano-roll constraints."""


class InvalidTokenSequence(ValueError):
    """Raised when a token sequence violates vocabulary or layout constraints."""


@dataclass(frozen=True)
class NoteSpan:
    """One note: MIDI pitch, onset grid step, duration in grid steps."""

    pitch: int
    onset_step: int
    duration_steps: int

    def __post_init__(self) -> None:
        if not MIN_PITCH <= self.pitch <= MAX_PITCH:
            raise InvalidMelody(f"pitch {self.pitch} outside MIDI range 0..127")
        if self.onset_step < 0:
            raise InvalidMelody(f"negative onset step {self.onset_step}")
        if self.duration_steps < 1:
            raise InvalidMelody(
                f"duration must be at least one step, got {self.duration_steps}"
            )

    @property
    def end_step(self) -> int:
        return self.onset_step + self.duration_steps


@dataclass(frozen=True)
class Melody:
    """A monophonic melody: sorted non-overlapping spans on the step grid."""

    spans: tuple[NoteSpan, ...]
    bars: int = 2
    tempo_qpm: float = 120.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "spans", tuple(self.spans))
        if self.bars not in SUPPORTED_BARS:
            raise InvalidMelody(f"bars must be one of {SUPPORTED_BARS}, got {self.bars}")
        if not self.tempo_qpm > 0:
            raise InvalidMelody(f"tempo must be positive, got {self.tempo_qpm}")
        total = self.total_steps
        prev_end = 0
        prev_onset = -1
        for span in self.spans:
            if span.onset_step < prev_onset:
                raise InvalidMelody("spans must be sorted by onset step")
            if span.onset_step < prev_end:
                raise InvalidMelody(
                    f"span at step {span.onset_step} overlaps the previous note"
                )
            if span.end_step > total:
                raise InvalidMelody(
                    f"span ending at step {span.end_step} exceeds {total} steps"
                )
            prev_onset = span.onset_step
            prev_end = span.end_step

    @property
    def total_steps(self) -> int:
        return STEPS_PER_BAR * self.bars

    @property
    def pitches(self) -> tuple[int, ...]:
        return tuple(span.pitch for span in self.spans)


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length token form of a melody; 16 x bars codes in 0..129."""

    tokens: tuple[int, ...]
    bars: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if self.bars not in SUPPORTED_BARS:
            raise InvalidTokenSequence(
                f"bars must be one of {SUPPORTED_BARS}, got {self.bars}"
            )
        expected = STEPS_PER_BAR * self.bars
        if len(self.tokens) != expected:
            raise InvalidTokenSequence(
                f"expected {expected} tokens for {self.bars} bars, got {len(self.tokens)}"
            )
        for i, tok in enumerate(self.tokens):
            if not 0 <= tok < VOCAB_SIZE:
                raise InvalidTokenSequence(f"token {tok} at step {i} outside 0..129")
        if self.tokens[0] == HOLD:
            raise InvalidTokenSequence("sequence may not start with a hold token")

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]


def tokenize(melody: Melody) -> TokenSequence:
    """Render a melody onto the token grid.

    Each note contributes a note-on code at its onset and holds for the rest
    of its duration.  Silence contributes a rest code at its first step (step
    0, or the first silent step after a note ends) and holds while it lasts.
    """
    total = melody.total_steps
    tokens = [HOLD] * total
    sounding = [False] * total
    for span in melody.spans:
        tokens[span.onset_step] = span.pitch
        for step in range(span.onset_step, span.end_step):
            sounding[step] = True
    for step in range(total):
        if sounding[step]:
            continue
        if step == 0 or sounding[step - 1]:
            tokens[step] = REST
    return TokenSequence(tuple(tokens), melody.bars)


def detokenize(seq: TokenSequence, tempo_qpm: float = 120.0) -> Melody:
    """Inverse of :func:`tokenize`; tempo is passed through as metadata."""
    spans: list[NoteSpan] = []
    cur_pitch: int | None = None
    cur_onset = 0
    for step, tok in enumerate(seq.tokens):
        if tok == HOLD:
            continue
        if cur_pitch is not None:
            spans.append(NoteSpan(cur_pitch, cur_onset, step - cur_onset))
            cur_pitch = None
        if tok <= MAX_PITCH:
            cur_pitch = tok
            cur_onset = step
    if cur_pitch is not None:
        spans.append(NoteSpan(cur_pitch, cur_onset, len(seq.tokens) - cur_onset))
    return Melody(tuple(spans), seq.bars, tempo_qpm)


def duration_seconds(seq: TokenSequence, tempo_qpm: float) -> float:
    """Wall-clock length of a token sequence at the given tempo."""
    if not tempo_qpm > 0:
        raise ValueError(f"tempo must be positive, got {tempo_qpm}")
    return seq.bars * QUARTERS_PER_BAR * 60.0 / tempo_qpm


def step_seconds(tempo_qpm: float) -> float:
    """Length of one grid step (a 16th note) in seconds."""
    if not tempo_qpm > 0:
        raise ValueError(f"tempo must be positive, got {tempo_qpm}")
    return 60.0 / (tempo_qpm * STEPS_PER_QUARTER)


def to_json_line(seq: TokenSequence, tempo_qpm: float) -> str:
    return json.dumps(
        {"bars": seq.bars, "tempo_qpm": tempo_qpm, "tokens": list(seq.tokens)}
    )


def from_json_line(line: str) -> tuple[TokenSequence, float]:
    obj = json.loads(line)
    seq = TokenSequence(tuple(obj["tokens"]), int(obj["bars"]))
    return seq, float(obj["tempo_qpm"])


def save_corpus(path: str | Path, entries: Iterable[tuple[TokenSequence, float]]) -> int:
    """Write (token sequence, tempo) pairs as JSONL; returns the line count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for seq, tempo in entries:
            fh.write(to_json_line(seq, tempo))
            fh.write("\n")
            count += 1
    return count


def iter_corpus(path: str | Path) -> Iterator[tuple[TokenSequence, float]]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield from_json_line(line)


def load_corpus(path: str | Path) -> list[tuple[TokenSequence, float]]:
    return list(iter_corpus(path))


def melodies_to_entries(melodies: Iterable[Melody]) -> list[tuple[TokenSequence, float]]:
    return [(tokenize(m), m.tempo_qpm) for m in melodies]
