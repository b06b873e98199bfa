"""Evaluation metrics for rhythm, key, chords and phoneme transcripts.

Conventions shared by the beat metric follow common MIR practice: an
estimate matches a reference event when they differ by at most 70 ms
(inclusive, with a small numeric slack), each event may be used once, and
matching is greedy left-to-right over the two sorted lists — which attains
the maximum one-to-one matching for a fixed symmetric window.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conditioning import KeyLabel

#: Beat-matching tolerance in seconds.
RHYTHM_TOLERANCE_SEC = 0.07

#: Absolute slack so comparisons at exactly the tolerance are inclusive.
_SLACK = 1e-9

#: Krumhansl-Schmuckler key profiles (probe-tone ratings), tonic first.
KS_MAJOR_PROFILE = (6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88)
KS_MINOR_PROFILE = (6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17)


@dataclass(frozen=True)
class MatchReport:
    """Counts and derived rates of a one-to-one matching evaluation."""

    true_positives: int
    false_positives: int
    false_negatives: int

    @property
    def precision(self) -> float:
        denom = self.true_positives + self.false_positives
        return self.true_positives / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.true_positives + self.false_negatives
        return self.true_positives / denom if denom else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.true_positives + self.false_positives + self.false_negatives
        if denom == 0:
            # Nothing to find and nothing found: perfect agreement.
            return 1.0
        return 2 * self.true_positives / denom


def match_events(
    reference: list[float],
    estimate: list[float],
    tolerance: float = RHYTHM_TOLERANCE_SEC,
) -> MatchReport:
    """Greedily match two sorted event lists one-to-one within a tolerance."""
    if tolerance < 0:
        raise ValueError(f"tolerance must be non-negative, got {tolerance}")
    ref = sorted(reference)
    est = sorted(estimate)
    i = j = tp = 0
    while i < len(ref) and j < len(est):
        delta = est[j] - ref[i]
        if abs(delta) <= tolerance + _SLACK:
            tp += 1
            i += 1
            j += 1
        elif delta < 0:
            j += 1
        else:
            i += 1
    return MatchReport(tp, len(est) - tp, len(ref) - tp)


def rhythm_f1(
    reference: list[float],
    estimate: list[float],
    tolerance: float = RHYTHM_TOLERANCE_SEC,
) -> float:
    """F1 of matched beat events at the given tolerance (default 70 ms).

    Both lists empty scores 1.0; one empty list scores 0.0.
    """
    return match_events(reference, estimate, tolerance).f1


def key_accuracy(
    reference: list[KeyLabel], estimate: list[KeyLabel]
) -> float:
    """Fraction of positions where tonic and mode both agree."""
    if len(reference) != len(estimate):
        raise ValueError(
            f"length mismatch: {len(reference)} reference vs {len(estimate)} estimated keys"
        )
    if not reference:
        raise ValueError("key lists are empty")
    hits = sum(1 for r, e in zip(reference, estimate) if r == e)
    return hits / len(reference)


def chord_f1(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Micro-averaged binary F1 over all chromagram cells.

    Both arguments are (T, 12) arrays; any nonzero cell counts as active.
    Identical all-zero chromagrams score 1.0 (nothing to find, nothing
    found); an all-zero estimate against a nonempty reference scores 0.0.
    """
    ref = np.asarray(reference) != 0
    est = np.asarray(estimate) != 0
    if ref.shape != est.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {est.shape}")
    if ref.ndim != 2 or ref.shape[1] != 12:
        raise ValueError(f"chromagrams must have shape (T, 12), got {ref.shape}")
    tp = int(np.sum(ref & est))
    fp = int(np.sum(~ref & est))
    fn = int(np.sum(ref & ~est))
    return MatchReport(tp, fp, fn).f1


def edit_distance(reference: list, hypothesis: list) -> int:
    """Levenshtein distance (substitutions, deletions, insertions all cost 1)."""
    m, n = len(reference), len(hypothesis)
    prev = np.arange(n + 1)
    for i in range(1, m + 1):
        cur = np.empty(n + 1, dtype=np.int64)
        cur[0] = i
        for j in range(1, n + 1):
            sub = prev[j - 1] + (reference[i - 1] != hypothesis[j - 1])
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return int(prev[n])


def per(reference: list, hypothesis: list) -> float:
    """Phoneme error rate: edit distance over the reference length.

    Values can exceed 1.0 when the hypothesis is much longer than the
    reference.  An empty reference is undefined and raises.
    """
    if not reference:
        raise ValueError("reference sequence is empty; error rate is undefined")
    return edit_distance(reference, hypothesis) / len(reference)


def dedup_lines(lines: list[str]) -> list[str]:
    """Collapse runs of consecutive identical lines to one occurrence."""
    out: list[str] = []
    for line in lines:
        if not out or line != out[-1]:
            out.append(line)
    return out


def estimate_key(chroma: np.ndarray) -> KeyLabel:
    """Estimate a key from a chromagram by template correlation.

    The chromagram is summed over time and Pearson-correlated against the 24
    rotated Krumhansl-Schmuckler profiles; the best-correlated (tonic, mode)
    wins, ties resolving to the lower tonic with major before minor.  An
    all-zero chromagram raises.
    """
    chroma = np.asarray(chroma, dtype=float)
    if chroma.ndim == 1:
        chroma = chroma[None, :]
    if chroma.ndim != 2 or chroma.shape[1] != 12:
        raise ValueError(f"chroma must have shape (T, 12), got {chroma.shape}")
    profile = chroma.sum(axis=0)
    if not np.any(profile):
        raise ValueError("chromagram is all-zero; key is undefined")
    best: tuple[float, int, int] | None = None
    for tonic in range(12):
        for mode_index, template in enumerate((KS_MAJOR_PROFILE, KS_MINOR_PROFILE)):
            rotated = np.roll(np.asarray(template), tonic)
            score = _pearson(profile, rotated)
            key = (-score, tonic, mode_index)
            if best is None or key < best:
                best = key
    assert best is not None
    return KeyLabel(best[1], "major" if best[2] == 0 else "minor")


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da**2).sum() * (db**2).sum())
    if denom == 0.0:
        return 0.0
    return float((da * db).sum() / denom)


# ---------------------------------------------------------------------------
# Audio-side chroma estimation (closed-loop oracle for the stub renderer)


def chroma_from_audio(
    samples: np.ndarray,
    sample_rate: int,
    frame_rate: float,
    num_frames: int | None = None,
    low_midi: int = 48,
    high_midi: int = 84,
    window_size: int = 8192,
    silence_threshold: float = 1e-4,
) -> np.ndarray:
    """Estimate a binary (T, 12) chromagram from audio by DFT peak picking.

    Each frame takes a Hann-windowed slice centred on the frame time, reads
    the zero-padded spectrum at every equal-tempered note frequency between
    ``low_midi`` and ``high_midi``, folds the magnitudes into pitch classes
    and marks the three strongest classes — or none when the slice is
    essentially silent.  Designed as an independent check of the stub
    renderer's triad pad, not a general transcription tool.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples.mean(axis=0)
    if samples.ndim != 1:
        raise ValueError("samples must be 1-D or (channels, n)")
    if num_frames is None:
        num_frames = int(np.ceil(len(samples) / sample_rate * frame_rate))
    n_fft = 4 * window_size
    hann = np.hanning(window_size)
    note_freqs = 440.0 * 2.0 ** ((np.arange(low_midi, high_midi) - 69) / 12.0)
    note_bins = np.round(note_freqs * n_fft / sample_rate).astype(int)
    note_pcs = np.arange(low_midi, high_midi) % 12

    out = np.zeros((num_frames, 12))
    half = window_size // 2
    for f in range(num_frames):
        centre = int(round(f / frame_rate * sample_rate))
        lo = centre - half
        hi = centre + half
        slice_ = np.zeros(window_size)
        src_lo, src_hi = max(lo, 0), min(hi, len(samples))
        if src_hi > src_lo:
            slice_[src_lo - lo : src_hi - lo] = samples[src_lo:src_hi]
        if np.sqrt((slice_**2).mean()) < silence_threshold:
            continue
        spectrum = np.abs(np.fft.rfft(slice_ * hann, n=n_fft))
        energy = np.zeros(12)
        np.maximum.at(energy, note_pcs, spectrum[note_bins])
        top = np.argsort(energy, kind="stable")[-3:]
        active = top[energy[top] > 0.05 * energy.max()]
        out[f, active] = 1.0
    return out
