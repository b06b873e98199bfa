"""Time-varying conditioning signals derived from a vocal score.

Every signal lives on a shared frame grid: frame ``f`` sits at ``f /
frame_rate`` seconds and the grid has ``T = ceil(duration * frame_rate)``
frames.  A :class:`ConditionBundle` packs the four framewise matrices
(rhythm activation, chord chromagram, structure labels, pitch contour)
together with per-section key labels.

Rhythm activation follows the "soft target" convention: a unit impulse at
every beat/downbeat, smoothed with a Gaussian of width ``sigma`` seconds and
combined by maximum so each event peaks at 1.0.  Chords are binary 12-bin
chromagrams of root-position triads.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .score import (
    SECTION_LABELS,
    VocalScore,
    section_index_at_tick,
    tick_to_seconds,
)

DEFAULT_FRAME_RATE = 50.0
DEFAULT_SIGMA = 0.05

#: Pitch-class spellings used by the chord text format (sharps only on write).
PITCH_CLASS_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")

_FLAT_ALIASES = {
    "DB": 1, "EB": 3, "GB": 6, "AB": 8, "BB": 10,
}

CONDITIONS_JSON_FORMAT = "conditions"
CONDITIONS_JSON_VERSION = 1


def pitch_class_name(pc: int) -> str:
    return PITCH_CLASS_NAMES[pc % 12]


def parse_pitch_class(name: str) -> int:
    """Parse a pitch-class name (sharp or flat spelling) to an integer 0-11."""
    key = name.strip().upper()
    if key in _FLAT_ALIASES:
        return _FLAT_ALIASES[key]
    normalized = key.replace("♯", "#")
    for i, candidate in enumerate(PITCH_CLASS_NAMES):
        if normalized == candidate:
            return i
    raise ValueError(f"unknown pitch class name: {name!r}")


@dataclass(frozen=True)
class KeyLabel:
    """A key as tonic pitch class (0-11) plus mode ('major' or 'minor')."""

    tonic: int
    mode: str

    def __post_init__(self) -> None:
        if not 0 <= self.tonic <= 11:
            raise ValueError(f"tonic must be in [0, 11], got {self.tonic}")
        if self.mode not in ("major", "minor"):
            raise ValueError(f"mode must be 'major' or 'minor', got {self.mode!r}")

    def __str__(self) -> str:
        return f"{pitch_class_name(self.tonic)}:{'maj' if self.mode == 'major' else 'min'}"

    @classmethod
    def parse(cls, text: str) -> "KeyLabel":
        name, sep, mode = text.strip().partition(":")
        if not sep:
            raise ValueError(f"key label must look like 'C:maj', got {text!r}")
        mode = mode.strip().lower()
        if mode in ("maj", "major"):
            return cls(parse_pitch_class(name), "major")
        if mode in ("min", "minor"):
            return cls(parse_pitch_class(name), "minor")
        raise ValueError(f"unknown key mode {mode!r}")


@dataclass(frozen=True)
class ChordSpan:
    """One chord over ``[start_sec, end_sec)``: root pitch class and maj/min quality."""

    start_sec: float
    end_sec: float
    root: int
    quality: str

    def __post_init__(self) -> None:
        if not 0 <= self.root <= 11:
            raise ValueError(f"chord root must be in [0, 11], got {self.root}")
        if self.quality not in ("maj", "min"):
            raise ValueError(f"chord quality must be 'maj' or 'min', got {self.quality!r}")
        if not self.end_sec > self.start_sec:
            raise ValueError(
                f"chord span [{self.start_sec}, {self.end_sec}) is empty or inverted"
            )

    def pitch_classes(self) -> tuple[int, int, int]:
        return triad_pitch_classes(self.root, self.quality)

    def __str__(self) -> str:
        return f"{pitch_class_name(self.root)}:{self.quality}"


def triad_pitch_classes(root: int, quality: str) -> tuple[int, int, int]:
    """Pitch classes of a root-position triad: root, third, fifth (mod 12)."""
    third = 4 if quality == "maj" else 3
    return (root % 12, (root + third) % 12, (root + 7) % 12)


@dataclass(frozen=True)
class ChordSequence:
    """A sorted, non-overlapping sequence of :class:`ChordSpan` entries."""

    entries: tuple[ChordSpan, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        for i in range(1, len(self.entries)):
            prev, cur = self.entries[i - 1], self.entries[i]
            if cur.start_sec < prev.end_sec - 1e-9:
                raise ValueError(f"chord entries {i - 1} and {i} overlap")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def end_sec(self) -> float:
        return self.entries[-1].end_sec if self.entries else 0.0

    def shifted(self, offset: float) -> "ChordSequence":
        return ChordSequence(
            tuple(
                ChordSpan(c.start_sec + offset, c.end_sec + offset, c.root, c.quality)
                for c in self.entries
            )
        )


def format_chords(chords: ChordSequence) -> str:
    """Render a chord sequence as text lines ``start_sec end_sec ROOT:quality``."""
    lines = [f"{c.start_sec:.6f} {c.end_sec:.6f} {c}" for c in chords]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_chords(text: str) -> ChordSequence:
    """Parse the three-column chord text format; '#' starts a comment line."""
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"chord line {lineno}: expected 3 columns, got {len(parts)}")
        try:
            start, end = float(parts[0]), float(parts[1])
        except ValueError:
            raise ValueError(f"chord line {lineno}: bad time columns") from None
        name, sep, quality = parts[2].partition(":")
        if not sep or quality not in ("maj", "min"):
            raise ValueError(f"chord line {lineno}: chord must look like 'C:maj'")
        entries.append(ChordSpan(start, end, parse_pitch_class(name), quality))
    return ChordSequence(tuple(entries))


@dataclass(frozen=True)
class ConditionBundle:
    """All framewise conditioning signals for one song on a shared grid.

    rhythm:        (T, 2) float array; column 0 beats, column 1 downbeats.
    chroma:        (T, 12) binary array of active triad pitch classes.
    structure:     (T,) int array of section-label ids (index into SECTION_LABELS).
    pitch_contour: (T,) float array; sounding MIDI pitch, 0 where silent.
    keys:          one ``(section_index, KeyLabel)`` pair per section.
    """

    frame_rate: float
    rhythm: np.ndarray
    chroma: np.ndarray
    structure: np.ndarray
    pitch_contour: np.ndarray
    keys: tuple[tuple[int, KeyLabel], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "keys", tuple(self.keys))
        t = len(self.rhythm)
        if self.rhythm.shape != (t, 2):
            raise ValueError(f"rhythm must have shape (T, 2), got {self.rhythm.shape}")
        if self.chroma.shape != (t, 12):
            raise ValueError(f"chroma must have shape (T, 12), got {self.chroma.shape}")
        if self.structure.shape != (t,):
            raise ValueError(f"structure must have shape (T,), got {self.structure.shape}")
        if self.pitch_contour.shape != (t,):
            raise ValueError(
                f"pitch_contour must have shape (T,), got {self.pitch_contour.shape}"
            )
        if self.frame_rate <= 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")

    @property
    def num_frames(self) -> int:
        return len(self.rhythm)

    @property
    def duration_sec(self) -> float:
        return self.num_frames / self.frame_rate

    def frame_times(self) -> np.ndarray:
        return np.arange(self.num_frames) / self.frame_rate


# ---------------------------------------------------------------------------
# Signal builders


def beat_downbeat_events(score: VocalScore) -> tuple[list[float], list[float]]:
    """Quarter-note beat and bar-start downbeat times over the whole score.

    Beats sit on the tick grid every quarter note from tick 0 up to (but not
    including) the score end; every fourth beat is a downbeat.
    """
    end = score.end_tick
    if end <= 0:
        raise ValueError("score is empty; no beat grid to derive")
    beat_ticks = range(0, end, score.ticks_per_quarter)
    beats = [tick_to_seconds(score, t) for t in beat_ticks]
    downbeats = beats[::4]
    return beats, downbeats


def rhythm_activation(
    beats: list[float] | np.ndarray,
    downbeats: list[float] | np.ndarray,
    duration_sec: float,
    frame_rate: float = DEFAULT_FRAME_RATE,
    sigma: float = DEFAULT_SIGMA,
) -> np.ndarray:
    """Gaussian-smoothed beat/downbeat activation curves, shape (T, 2).

    Each event contributes ``exp(-(t - t_event)^2 / (2 sigma^2))``; bumps are
    combined with max so the peak at an event frame is exactly 1.0.  Values
    are clipped to [0, 1].
    """
    if duration_sec <= 0:
        raise ValueError(f"duration must be positive, got {duration_sec}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if frame_rate <= 0:
        raise ValueError(f"frame_rate must be positive, got {frame_rate}")
    t = math.ceil(duration_sec * frame_rate)
    times = np.arange(t) / frame_rate
    out = np.zeros((t, 2))
    for column, events in enumerate((beats, downbeats)):
        for event in events:
            if not 0.0 <= event <= duration_sec:
                raise ValueError(
                    f"event at {event} s lies outside [0, {duration_sec}] s"
                )
            bump = np.exp(-((times - event) ** 2) / (2.0 * sigma * sigma))
            np.maximum(out[:, column], bump, out=out[:, column])
    return np.clip(out, 0.0, 1.0)


def chord_chromagram(
    chords: ChordSequence,
    duration_sec: float,
    frame_rate: float = DEFAULT_FRAME_RATE,
) -> np.ndarray:
    """Binary (T, 12) chromagram with triad pitch classes active per frame.

    A frame at time ``t`` belongs to the chord span with ``start <= t < end``;
    frames outside every span stay all-zero.
    """
    if duration_sec < chords.end_sec - 1e-9:
        raise ValueError(
            f"duration {duration_sec} s is shorter than the chord sequence "
            f"({chords.end_sec} s)"
        )
    t = math.ceil(duration_sec * frame_rate)
    times = np.arange(t) / frame_rate
    out = np.zeros((t, 12))
    for chord in chords:
        mask = (times >= chord.start_sec) & (times < chord.end_sec)
        for pc in chord.pitch_classes():
            out[mask, pc] = 1.0
    return out


def pitch_contour_from_score(
    score: VocalScore,
    duration_sec: float | None = None,
    frame_rate: float = DEFAULT_FRAME_RATE,
) -> np.ndarray:
    """Framewise MIDI pitch of the sounding note; 0.0 in vocal silence.

    At a boundary frame where one note ends exactly as the next begins, the
    frame reports the later note.
    """
    if duration_sec is None:
        duration_sec = score.duration_seconds()
    t = math.ceil(duration_sec * frame_rate)
    out = np.zeros(t)
    times = np.arange(t) / frame_rate
    for note in score.notes:
        start = tick_to_seconds(score, note.onset_tick)
        end = tick_to_seconds(score, note.end_tick)
        out[(times >= start) & (times < end)] = float(note.pitch)
    return out


def structure_labels(
    score: VocalScore,
    duration_sec: float | None = None,
    frame_rate: float = DEFAULT_FRAME_RATE,
) -> np.ndarray:
    """Framewise section-label ids; frames at/after the last section keep its id."""
    if not score.sections:
        raise ValueError("score has no sections")
    if duration_sec is None:
        duration_sec = score.duration_seconds()
    t = math.ceil(duration_sec * frame_rate)
    out = np.zeros(t, dtype=np.int64)
    edges = [tick_to_seconds(score, s.start_tick) for s in score.sections]
    times = np.arange(t) / frame_rate
    # np.searchsorted maps each frame to the section whose start precedes it.
    idx = np.searchsorted(np.asarray(edges), times, side="right") - 1
    idx = np.clip(idx, 0, len(score.sections) - 1)
    labels = np.array([SECTION_LABELS.index(s.label) for s in score.sections])
    out[:] = labels[idx]
    return out


def snap_boundaries(
    boundaries: list[float],
    downbeats: list[float],
    section_edges: list[float],
) -> list[float]:
    """Snap each boundary to the nearest downbeat or section edge.

    Targets are the union of the two lists; ties between equally distant
    targets resolve to the earlier one.  The result is sorted with duplicates
    removed.
    """
    targets = sorted(set(downbeats) | set(section_edges))
    if not targets:
        raise ValueError("no snap targets: downbeats and section edges both empty")
    snapped = []
    for b in boundaries:
        best = min(targets, key=lambda t: (abs(t - b), t))
        snapped.append(best)
    return sorted(set(snapped))


def _snap_chords(chords: ChordSequence, targets_beats: list[float],
                 section_edges: list[float]) -> ChordSequence:
    """Snap every chord boundary onto the downbeat/section-edge grid.

    Spans that collapse to zero length after snapping are dropped.
    """
    if not chords.entries:
        return chords
    grid = sorted(set(targets_beats) | set(section_edges))
    if not grid:
        return chords
    def nearest(x: float) -> float:
        return min(grid, key=lambda t: (abs(t - x), t))
    entries = []
    for c in chords:
        a, b = nearest(c.start_sec), nearest(c.end_sec)
        if b > a:
            entries.append(ChordSpan(a, b, c.root, c.quality))
    return ChordSequence(tuple(entries))


def build_condition_bundle(
    score: VocalScore,
    chords: ChordSequence,
    keys: list[tuple[int, KeyLabel]],
    frame_rate: float = DEFAULT_FRAME_RATE,
    sigma: float = DEFAULT_SIGMA,
    pitch_contour: np.ndarray | None = None,
) -> ConditionBundle:
    """Assemble every conditioning signal for a score on one frame grid.

    Chord boundaries are snapped to the union of downbeats and section edges
    before rasterization, so all conditioning transitions line up with
    structural transitions or the beat grid.  ``keys`` must carry exactly one
    entry per section.  An externally supplied ``pitch_contour`` (length T)
    replaces the score-derived one.
    """
    problems_keys = {i for i, _ in keys}
    if problems_keys != set(range(len(score.sections))):
        raise ValueError(
            f"keys must cover every section exactly once; got sections {sorted(problems_keys)} "
            f"for {len(score.sections)} sections"
        )
    duration = score.duration_seconds()
    if duration <= 0:
        raise ValueError("score has zero duration")
    beats, downbeats = beat_downbeat_events(score)
    section_edges = [tick_to_seconds(score, s.start_tick) for s in score.sections]
    section_edges.append(duration)
    snapped = _snap_chords(chords, downbeats, section_edges)
    if snapped.end_sec > duration + 1e-9:
        raise ValueError("chord sequence extends past the end of the score")

    rhythm = rhythm_activation(beats, downbeats, duration, frame_rate, sigma)
    chroma = chord_chromagram(snapped, duration, frame_rate)
    structure = structure_labels(score, duration, frame_rate)
    t = len(rhythm)
    if pitch_contour is None:
        contour = pitch_contour_from_score(score, duration, frame_rate)
    else:
        contour = np.asarray(pitch_contour, dtype=float)
        if contour.shape != (t,):
            raise ValueError(
                f"external pitch contour has shape {contour.shape}, expected ({t},)"
            )
    return ConditionBundle(
        frame_rate=frame_rate,
        rhythm=rhythm,
        chroma=chroma,
        structure=structure,
        pitch_contour=contour,
        keys=tuple(sorted(keys)),
    )


# ---------------------------------------------------------------------------
# Serialization


def bundle_to_json(bundle: ConditionBundle) -> str:
    """Serialize a bundle as the canonical versioned JSON document."""
    doc = {
        "format": CONDITIONS_JSON_FORMAT,
        "version": CONDITIONS_JSON_VERSION,
        "frame_rate": bundle.frame_rate,
        "num_frames": bundle.num_frames,
        "rhythm": [[float(b), float(d)] for b, d in bundle.rhythm],
        "chroma": [[int(x) for x in row] for row in bundle.chroma],
        "structure": [int(x) for x in bundle.structure],
        "pitch_contour": [float(x) for x in bundle.pitch_contour],
        "keys": [
            {"section": i, "tonic": k.tonic, "mode": k.mode} for i, k in bundle.keys
        ],
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def bundle_from_json(text: str | bytes) -> ConditionBundle:
    try:
        doc = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CONDITIONS_JSON_FORMAT:
        raise ValueError("missing or wrong format tag, expected 'conditions'")
    if doc.get("version") != CONDITIONS_JSON_VERSION:
        raise ValueError(f"unsupported conditions version {doc.get('version')!r}")
    try:
        bundle = ConditionBundle(
            frame_rate=float(doc["frame_rate"]),
            rhythm=np.asarray(doc["rhythm"], dtype=float).reshape(-1, 2),
            chroma=np.asarray(doc["chroma"], dtype=float).reshape(-1, 12),
            structure=np.asarray(doc["structure"], dtype=np.int64),
            pitch_contour=np.asarray(doc["pitch_contour"], dtype=float),
            keys=tuple(
                (int(k["section"]), KeyLabel(int(k["tonic"]), str(k["mode"])))
                for k in doc["keys"]
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed conditions document: {exc}") from exc
    if bundle.num_frames != int(doc["num_frames"]):
        raise ValueError("num_frames does not match matrix length")
    return bundle
