"""Release acceptance gate: six criteria, one printed verdict line each.

Every test prints exactly one ``criterion N (<name>): PASS|FAIL`` line
(run pytest with ``-s`` to see the lines as they happen) and enforces the
stated tolerances plus, where one applies, a wall-clock budget.  The
checks here deliberately re-derive expected values with independent
brute-force oracles instead of trusting the library's own fast paths.
"""
from __future__ import annotations

import contextlib
import math
import os
import random
import time
from functools import lru_cache

import numpy as np

from songpipe import conditioning, harmony, metrics, planner, prep, render, score_io
from songpipe.beatgrid import VoicedSegment, detect_voiced_segments, interpolate_beats
from songpipe.cli import PipelineConfig, run_pipeline

from helpers import random_buffer, random_score, random_sheet, simple_score


@contextlib.contextmanager
def _criterion(number: int, name: str, budget_sec: float | None = None):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if budget_sec is not None and elapsed > budget_sec:
            raise AssertionError(
                f"runtime {elapsed:.2f}s exceeds the {budget_sec:.0f}s budget"
            )
    except BaseException:
        print(f"criterion {number} ({name}): FAIL", flush=True)
        raise
    print(f"criterion {number} ({name}): PASS", flush=True)


# ---------------------------------------------------------------------------
# Independent oracles


def _max_matching(reference: list[float], estimate: list[float], tol: float) -> int:
    """Maximum bipartite matching size via Kuhn's augmenting paths."""
    adjacency = [
        [j for j, e in enumerate(estimate) if abs(e - r) <= tol + 1e-9]
        for r in reference
    ]
    owner = [-1] * len(estimate)

    def augment(i: int, seen: set[int]) -> bool:
        for j in adjacency[i]:
            if j not in seen:
                seen.add(j)
                if owner[j] < 0 or augment(owner[j], seen):
                    owner[j] = i
                    return True
        return False

    return sum(augment(i, set()) for i in range(len(reference)))


def _edit_distance_oracle(ref: tuple, hyp: tuple) -> int:
    """Plain memoised alignment recursion, independent of the DP table code."""

    @lru_cache(maxsize=None)
    def dist(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            dist(i - 1, j) + 1,
            dist(i, j - 1) + 1,
            dist(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]),
        )

    return dist(len(ref), len(hyp))


def _suffix_chord_max(emissions: np.ndarray, transitions: np.ndarray) -> float:
    """Maximum total score over every chord sequence, by suffix recursion."""
    n, k = emissions.shape

    @lru_cache(maxsize=None)
    def best_from(t: int, prev: int) -> float:
        if t == n:
            return 0.0
        return max(
            emissions[t, c]
            + (0.0 if prev < 0 else transitions[prev, c])
            + best_from(t + 1, c)
            for c in range(k)
        )

    return best_from(0, -1)


def _tensor_chord_max(emissions: np.ndarray, transitions: np.ndarray) -> float:
    """Literal enumeration: score every chord sequence as one dense tensor.

    Memory-bound to five bars (24**5 float64 cells); longer sequences use
    :func:`_suffix_chord_max`, which the tensor path cross-validates here.
    """
    total = emissions[0].copy()
    for t in range(1, len(emissions)):
        total = total[..., None] + transitions + emissions[t]
    return float(total.max())


def _energy_peak_times(samples: np.ndarray, sample_rate: int) -> list[float]:
    """Recover click onsets from audio alone via 1 kHz demodulated energy.

    The click band sits well above the chord-pad partials, so the magnitude
    of a 5 ms moving average of the demodulated signal peaks at each click
    onset; thresholded local maxima, merged within 50 ms, are the onsets.
    """
    mono = samples.mean(axis=0)
    t = np.arange(mono.shape[0]) / sample_rate
    demodulated = mono * np.exp(-2j * np.pi * render.CLICK_FREQ_HZ * t)
    width = int(round(0.005 * sample_rate))
    if mono.shape[0] < width:
        return []
    running = np.cumsum(np.concatenate(([0.0 + 0.0j], demodulated)))
    envelope = np.abs(running[width:] - running[:-width]) / width
    peak = float(envelope.max(initial=0.0))
    if peak <= 0.0:
        return []
    times: list[float] = []
    for index in render.local_maxima(envelope, 0.45 * peak):
        onset = index / sample_rate
        if not times or onset - times[-1] > 0.05:
            times.append(onset)
    return times


# ---------------------------------------------------------------------------
# Criterion 1: the fixed numeric contract


def test_criterion_1_fixed_constants():
    with _criterion(1, "fixed constants", budget_sec=5.0):
        # The 70 ms beat-matching tolerance flips exactly at the boundary.
        assert metrics.rhythm_f1([1.0], [1.07]) == 1.0
        assert metrics.rhythm_f1([1.0], [0.93]) == 1.0
        assert metrics.rhythm_f1([1.0], [1.07 + 1e-6]) == 0.0
        assert metrics.rhythm_f1([1.0], [0.93 - 1e-6]) == 0.0

        # Penalty total is the fixed 0.4/0.4/0.2 blend of its components.
        rng = random.Random(101)
        for _ in range(200):
            breakdown = prep.penalty_score(random_sheet(rng), random_sheet(rng))
            blend = (
                0.4 * breakdown.sentence
                + 0.4 * breakdown.profile
                + 0.2 * breakdown.structure
            )
            assert abs(breakdown.total - blend) <= 1e-12

        # Register search covers exactly {-12, 0, +12} x the default profiles,
        # and agrees with an independent argmin over that grid.
        assert prep.OCTAVE_SHIFTS == (-12, 0, 12)
        assert [(p.name, p.low, p.high) for p in prep.DEFAULT_PROFILES] == [
            ("male", 45, 64),
            ("female", 55, 74),
        ]
        for _ in range(500):
            score = random_score(rng)
            decision = prep.register_match(score)
            grid = [
                (
                    -sum(1 for n in score.notes if p.contains(n.pitch + s)),
                    abs(s),
                    pi,
                    s,
                )
                for pi, p in enumerate(prep.DEFAULT_PROFILES)
                for s in prep.OCTAVE_SHIFTS
            ]
            best = min(grid)
            assert decision.shift == best[3]
            assert decision.profile == prep.DEFAULT_PROFILES[best[2]]
            assert decision.in_range == -best[0]
            assert decision.shift in prep.OCTAVE_SHIFTS

        # No planned window, inference or training, may exceed the 47 s cap.
        assert planner.MAX_WINDOW_SEC == 47.0
        for _ in range(60):
            bars = rng.randint(8, 90)
            labels = ("intro", "verse") if rng.random() < 0.5 else ("verse",)
            score = simple_score(
                [60 + (i % 12) for i in range(4 * bars)],
                bpm=rng.uniform(60.0, 160.0),
                labels=labels,
            )
            for window in planner.plan_inference(score):
                assert window.duration_sec <= planner.MAX_WINDOW_SEC + 1e-9
            for item in planner.plan_training_slices(score, seed=rng.randrange(1000)):
                assert item.window.duration_sec <= planner.MAX_WINDOW_SEC + 1e-9

        # Intro-anchored training slices swap references at p = 0.5.
        score = simple_score([60] * 16, labels=("intro", "verse"))
        hits = sum(
            planner.plan_training_slices(score, seed=s)[0].reference_swapped
            for s in range(10000)
        )
        assert abs(hits / 10000 - 0.5) <= 0.02


# ---------------------------------------------------------------------------
# Criterion 2: fast paths equal brute-force oracles


def test_criterion_2_oracle_equivalence():
    with _criterion(2, "oracle equivalence", budget_sec=60.0):
        rng = random.Random(202)

        # Greedy one-to-one beat matching is optimal on sorted lists.
        for _ in range(1000):
            ref = sorted(rng.uniform(0.0, 3.0) for _ in range(rng.randint(0, 10)))
            est = sorted(rng.uniform(0.0, 3.0) for _ in range(rng.randint(0, 10)))
            tol = rng.choice((0.07, 0.02, 0.3, rng.uniform(0.0, 0.5)))
            report = metrics.match_events(ref, est, tol)
            assert report.true_positives == _max_matching(ref, est, tol)

        # The edit-distance table equals the exhaustive alignment recursion.
        alphabet = "aeiou"
        for _ in range(1000):
            ref = [rng.choice(alphabet) for _ in range(rng.randint(1, 8))]
            hyp = [rng.choice(alphabet) for _ in range(rng.randint(0, 8))]
            oracle = _edit_distance_oracle(tuple(ref), tuple(hyp))
            assert metrics.edit_distance(ref, hyp) == oracle
            assert metrics.per(ref, hyp) == oracle / len(ref)

        # The harmonizer's Viterbi score equals the exhaustive maximum over
        # all chord sequences, for melodies of one to six bars.
        weights = harmony.HarmonizerWeights()
        transitions = harmony.transition_matrix(weights)
        for _ in range(100):
            bars = rng.randint(1, 6)
            score = random_score(rng, min_bars=bars, max_bars=bars, with_intro=False)
            emissions = weights.emission_weight * harmony.emission_matrix(
                harmony.bar_pitch_class_weights(score)
            )
            path = harmony.viterbi_path(emissions, transitions)
            dp_score = harmony.path_score(path, emissions, transitions)
            oracle = _suffix_chord_max(emissions, transitions)
            assert abs(dp_score - oracle) <= 1e-9
            if bars <= 5:
                assert abs(_tensor_chord_max(emissions, transitions) - oracle) <= 1e-9

        # Reference selection equals a linear-scan argmin over the bank.
        for _ in range(20):
            target = random_sheet(rng)
            bank = [random_sheet(rng) for _ in range(100)]
            index, breakdown = prep.select_reference(target, bank)
            totals = [prep.penalty_score(target, entry).total for entry in bank]
            best = min(range(len(bank)), key=lambda i: (totals[i], i))
            assert index == best
            assert breakdown.total == totals[best]


# ---------------------------------------------------------------------------
# Criterion 3: the full pipeline closes the loop on its own conditions


def test_criterion_3_closed_loop(tmp_path):
    with _criterion(3, "closed-loop fidelity", budget_sec=120.0):
        rng = random.Random(303)
        for case in range(20):
            score = random_score(rng, min_bars=8, max_bars=32)
            score_path = tmp_path / f"case_{case:02d}.mid"
            score_path.write_bytes(score_io.write_smf(score))
            outdir = tmp_path / f"case_{case:02d}"
            manifest = run_pipeline(PipelineConfig(str(score_path), str(outdir)))

            bundle = conditioning.bundle_from_json(
                (outdir / "conditions.json").read_text()
            )
            events = render.parse_events((outdir / "events.txt").read_text())
            accompaniment = render.read_wav(outdir / "accompaniment.wav")

            # Rhythm: the event log matches the condition-grid beats, and an
            # independent energy-peak detector recovers the log from audio
            # alone to within 5 ms.
            frames = render.local_maxima(bundle.rhythm[:, 0], render.CLICK_THRESHOLD)
            expected = [f / bundle.frame_rate for f in frames]
            logged = [e.time_sec for e in events if e.kind in ("beat", "downbeat")]
            assert metrics.rhythm_f1(expected, logged) >= 0.99
            recovered = _energy_peak_times(
                accompaniment.samples, accompaniment.sample_rate
            )
            assert metrics.rhythm_f1(logged, recovered, tolerance=0.005) >= 0.99

            # Harmony: chroma estimated from the rendered audio agrees with
            # the condition chromagram.
            audio_chroma = metrics.chroma_from_audio(
                accompaniment.samples,
                accompaniment.sample_rate,
                bundle.frame_rate,
                bundle.num_frames,
            )
            chord = metrics.chord_f1(bundle.chroma, audio_chroma)
            assert chord >= 0.95

            # Key: every active section's audio key matches its condition key.
            ref_keys, est_keys = [], []
            for section in sorted(set(bundle.structure.tolist())):
                mask = (bundle.structure == section) & bundle.chroma.any(axis=1)
                if mask.any() and audio_chroma[mask].any():
                    ref_keys.append(metrics.estimate_key(bundle.chroma[mask]))
                    est_keys.append(metrics.estimate_key(audio_chroma[mask]))
            assert ref_keys, "no active key segment in rendered audio"
            assert metrics.key_accuracy(ref_keys, est_keys) == 1.0

            # The pipeline's own report agrees with the recomputation.
            report = manifest["report"]
            assert report["rhythm_f1_log_vs_conditions"] >= 0.99
            assert abs(report["chord_f1_audio_vs_conditions"] - chord) <= 1e-12
            assert report["key_accuracy_audio_vs_conditions"] == 1.0


# ---------------------------------------------------------------------------
# Criterion 4: beat interpolation across silent gaps


def test_criterion_4_beat_interpolation():
    with _criterion(4, "beat interpolation"):
        rng = random.Random(404)

        # Equal neighbour tempo: inserted beats keep that spacing to 1e-9 s.
        for _ in range(200):
            step = 60.0 / rng.uniform(60.0, 160.0)
            run1 = [i * step for i in range(rng.randint(2, 6))]
            gap = step * rng.uniform(1.5, 12.0)
            start2 = run1[-1] + gap
            run2 = [start2 + i * step for i in range(rng.randint(2, 6))]
            total = run2[-1] + rng.uniform(0.0, 0.4)
            segments = [
                VoicedSegment(0.0, run1[-1] + 0.1),
                VoicedSegment(start2 - 0.1, total + 1e-6),
            ]
            grid = interpolate_beats([run1, run2], segments, total + 1e-6)
            inserted = [b for b in grid.beats if run1[-1] < b < start2 - 1e-12]
            assert inserted, "gap produced no interpolated beats"
            sequence = [run1[-1], *inserted]
            for a, b in zip(sequence, sequence[1:]):
                assert abs((b - a) - step) <= 1e-9

        # Any valid input yields a strictly increasing, in-range grid with
        # downbeats on every fourth beat.
        for _ in range(1000):
            segments, beat_lists = [], []
            cursor = 0.0
            for _ in range(rng.randint(1, 4)):
                cursor += rng.uniform(0.05, 1.5)
                start = cursor
                cursor += rng.uniform(0.5, 6.0)
                segments.append(VoicedSegment(start, cursor))
                beats: list[float] = []
                for p in sorted(
                    rng.uniform(start, cursor)
                    for _ in range(rng.choice((0, 1, 2, 3, 5, 8)))
                ):
                    if not beats or p - beats[-1] > 0.15:
                        beats.append(p)
                beat_lists.append(beats)
            total = cursor + rng.uniform(0.0, 2.0)
            if not any(len(b) >= 2 for b in beat_lists):
                first = segments[0]
                beat_lists[0] = [first.start_sec + 0.05, first.start_sec + 0.45]
            grid = interpolate_beats(beat_lists, segments, total)
            array = np.asarray(grid.beats)
            assert np.all(np.diff(array) > 0)
            assert array[0] >= 0.0
            assert array[-1] <= total + 1e-9
            assert grid.downbeats == grid.beats[::4]

        # A synthetic song with a 10 s silent bridge is reconstructed against
        # its known ground-truth grid.
        sample_rate = 22050
        step = 0.6  # 100 BPM
        total = 40.0
        truth = [i * step for i in range(int(total / step) + 1) if i * step <= total]
        t = np.arange(int(total * sample_rate)) / sample_rate
        audio = 0.5 * np.sin(2 * np.pi * 440.0 * t)
        audio[(t >= 14.0) & (t < 24.0)] = 0.0
        segments = detect_voiced_segments(audio, sample_rate)
        assert len(segments) == 2
        jitter = random.Random(99)
        beat_lists = [
            [
                b + jitter.uniform(-0.005, 0.005)
                for b in truth
                if seg.start_sec + 0.02 <= b <= seg.end_sec - 0.02
            ]
            for seg in segments
        ]
        grid = interpolate_beats(beat_lists, segments, total)
        assert metrics.rhythm_f1(truth, list(grid.beats)) >= 0.95


# ---------------------------------------------------------------------------
# Criterion 5: container formats round-trip and survive fuzzing


def test_criterion_5_format_round_trips():
    with _criterion(5, "format round trips"):
        rng = random.Random(505)
        for _ in range(500):
            score = random_score(
                rng,
                with_syllables=rng.random() < 0.7,
                multi_tempo=rng.random() < 0.3,
            )
            assert score_io.read_smf(score_io.write_smf(score)) == score

        for _ in range(500):
            buffer = render.AudioBuffer(sample_rate=44100, samples=random_buffer(rng))
            back = render.wav_from_bytes(render.wav_bytes(buffer))
            assert back.sample_rate == buffer.sample_rate
            assert np.array_equal(back.samples, buffer.samples)

        # 10,000 random byte strings (some with plausible magic prefixes)
        # must raise only the readers' typed errors, never crash.
        heads = (b"", b"", b"MThd", b"RIFF", b"RIFF\x24\x00\x00\x00WAVE")
        for i in range(10000):
            blob = rng.choice(heads) + rng.randbytes(rng.randrange(0, 300))
            reader = score_io.read_smf if i % 2 == 0 else render.wav_from_bytes
            try:
                reader(blob)
            except (score_io.ScoreFormatError, render.WavFormatError):
                pass


# ---------------------------------------------------------------------------
# Criterion 6: deterministic reruns, editable intermediates


def _artifact_bytes(outdir) -> dict[str, bytes]:
    return {name: (outdir / name).read_bytes() for name in sorted(os.listdir(outdir))}


def test_criterion_6_determinism_and_editability(tmp_path):
    with _criterion(6, "determinism and editability"):
        rng = random.Random(606)
        score = random_score(rng, min_bars=10, max_bars=14)
        score_path = tmp_path / "song.mid"
        score_path.write_bytes(score_io.write_smf(score))

        run_a, run_b = tmp_path / "run_a", tmp_path / "run_b"
        for directory in (run_a, run_b):
            run_pipeline(PipelineConfig(str(score_path), str(directory), seed=7))
        bytes_a, bytes_b = _artifact_bytes(run_a), _artifact_bytes(run_b)
        assert bytes_a.keys() == bytes_b.keys()
        for name in bytes_a:
            assert bytes_a[name] == bytes_b[name], f"{name} differs between reruns"

        # Transpose the chord chart by a whole tone and resume downstream:
        # upstream artifacts stay byte-identical, the conditions reflect the
        # edit exactly as a chroma rotation.
        before = bytes_a
        old_bundle = conditioning.bundle_from_json(
            (run_a / "conditions.json").read_text()
        )
        chords = conditioning.parse_chords((run_a / "chords.txt").read_text())
        shifted = conditioning.ChordSequence(
            tuple(
                conditioning.ChordSpan(
                    c.start_sec, c.end_sec, (c.root + 2) % 12, c.quality
                )
                for c in chords
            )
        )
        (run_a / "chords.txt").write_text(conditioning.format_chords(shifted))
        run_pipeline(
            PipelineConfig(str(score_path), str(run_a), seed=7),
            from_stage="condition",
        )
        after = _artifact_bytes(run_a)

        upstream = (
            "input.score.json",
            "lyrics.txt",
            "reference.json",
            "validation.json",
            "register.json",
            "registered.score.json",
            "song.score.json",
            "harmonize.json",
        )
        for name in upstream:
            if name in before:
                assert after[name] == before[name], f"{name} changed upstream"
        for name in ("conditions.json", "accompaniment.wav", "mix.wav"):
            assert after[name] != before[name], f"{name} did not change"
        new_bundle = conditioning.bundle_from_json(
            (run_a / "conditions.json").read_text()
        )
        np.testing.assert_array_equal(
            new_bundle.chroma, np.roll(old_bundle.chroma, 2, axis=1)
        )
