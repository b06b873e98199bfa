"""Command-line interface and pipeline orchestration.

``songpipe run`` drives the full deterministic chain

    load -> validate -> register -> harmonize -> condition -> plan
         -> render -> mix -> report

writing one artifact per stage into the output directory, with a manifest
describing everything produced.  Every stage reads only on-disk artifacts
from earlier stages, so any intermediate file can be edited by hand and the
pipeline resumed from that point (``--from STAGE``) without touching what
came before.

The remaining subcommands expose the individual stages over explicit files:
``validate``, ``harmonize``, ``register``, ``condition``, ``plan``,
``render``, ``mix`` and ``eval``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import beatgrid, conditioning, harmony, metrics, planner, prep, render, score_io
from .conditioning import ChordSequence, KeyLabel
from .prep import DEFAULT_PROFILES, SingerProfile
from .score import VocalScore, prepend_instrumental, tick_to_seconds, validate_score

LOGGER = logging.getLogger(__name__)

STAGES = (
    "load",
    "validate",
    "register",
    "harmonize",
    "condition",
    "plan",
    "render",
    "mix",
    "report",
)

MANIFEST_FORMAT = "manifest"
MANIFEST_VERSION = 1


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name for reporting."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    """Everything ``run`` needs; file paths plus all tunable parameters."""

    score_path: str
    output_dir: str
    vocal_path: str | None = None
    lyrics_path: str | None = None
    reference_bank: str | None = None
    reject_fewer_lines: bool = False
    profiles: tuple[SingerProfile, ...] = DEFAULT_PROFILES
    frame_rate: float = conditioning.DEFAULT_FRAME_RATE
    sigma: float = conditioning.DEFAULT_SIGMA
    max_window_sec: float = planner.MAX_WINDOW_SEC
    intro_bars: int = harmony.DEFAULT_INTRO_BARS
    sample_rate: int = render.DEFAULT_SAMPLE_RATE
    seed: int = 0
    section_keys: tuple[str, ...] | None = None

    def to_manifest_dict(self) -> dict:
        # output_dir is deliberately omitted so reruns into different
        # directories stay byte-identical.
        return {
            "score_path": self.score_path,
            "vocal_path": self.vocal_path,
            "lyrics_path": self.lyrics_path,
            "reference_bank": self.reference_bank,
            "reject_fewer_lines": self.reject_fewer_lines,
            "profiles": [
                {"name": p.name, "low": p.low, "high": p.high} for p in self.profiles
            ],
            "frame_rate": self.frame_rate,
            "sigma": self.sigma,
            "max_window_sec": self.max_window_sec,
            "intro_bars": self.intro_bars,
            "sample_rate": self.sample_rate,
            "seed": self.seed,
            "section_keys": list(self.section_keys) if self.section_keys else None,
        }


def config_from_json(text: str, output_dir: str | None = None) -> PipelineConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    known = {
        "score_path", "output_dir", "vocal_path", "lyrics_path", "reference_bank",
        "reject_fewer_lines", "profiles", "frame_rate", "sigma", "max_window_sec",
        "intro_bars", "sample_rate", "seed", "section_keys",
    }
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "score_path" not in doc:
        raise ValueError("config is missing 'score_path'")
    profiles = tuple(
        SingerProfile(str(p["name"]), int(p["low"]), int(p["high"]))
        for p in doc.get("profiles") or []
    ) or DEFAULT_PROFILES
    section_keys = doc.get("section_keys")
    return PipelineConfig(
        score_path=str(doc["score_path"]),
        output_dir=str(output_dir or doc.get("output_dir") or "songpipe_out"),
        vocal_path=doc.get("vocal_path"),
        lyrics_path=doc.get("lyrics_path"),
        reference_bank=doc.get("reference_bank"),
        reject_fewer_lines=bool(doc.get("reject_fewer_lines", False)),
        profiles=profiles,
        frame_rate=float(doc.get("frame_rate", conditioning.DEFAULT_FRAME_RATE)),
        sigma=float(doc.get("sigma", conditioning.DEFAULT_SIGMA)),
        max_window_sec=float(doc.get("max_window_sec", planner.MAX_WINDOW_SEC)),
        intro_bars=int(doc.get("intro_bars", harmony.DEFAULT_INTRO_BARS)),
        sample_rate=int(doc.get("sample_rate", render.DEFAULT_SAMPLE_RATE)),
        seed=int(doc.get("seed", 0)),
        section_keys=tuple(section_keys) if section_keys else None,
    )


# ---------------------------------------------------------------------------
# Pipeline stages.  Each reads earlier artifacts from the work dir and
# writes its own; nothing is passed in memory between stages.

ART = {
    "input_score": "input.score.json",
    "lyrics": "lyrics.txt",
    "reference": "reference.json",
    "validation": "validation.json",
    "register": "register.json",
    "registered_score": "registered.score.json",
    "song_score": "song.score.json",
    "chords": "chords.txt",
    "harmonize_meta": "harmonize.json",
    "conditions": "conditions.json",
    "plan": "plan.json",
    "accompaniment": "accompaniment.wav",
    "events": "events.txt",
    "mix": "mix.wav",
    "report": "report.json",
    "manifest": "manifest.json",
}


def _art(outdir: str, key: str) -> str:
    return os.path.join(outdir, ART[key])


def _need(outdir: str, key: str, stage: str) -> str:
    path = _art(outdir, key)
    if not os.path.exists(path):
        raise StageError(stage, f"missing artifact {ART[key]}; run earlier stages first")
    return path


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _stage_load(config: PipelineConfig, outdir: str) -> None:
    if not os.path.exists(config.score_path):
        raise StageError("load", f"score file not found: {config.score_path}")
    try:
        score = score_io.load_score(config.score_path)
    except (score_io.ScoreFormatError, OSError) as exc:
        raise StageError("load", f"cannot read score: {exc}") from exc
    with open(_art(outdir, "input_score"), "w", encoding="utf-8") as fh:
        fh.write(score_io.score_to_json(score))

    if config.lyrics_path:
        try:
            sheet = prep.load_lyrics(config.lyrics_path)
        except (OSError, ValueError) as exc:
            raise StageError("load", f"cannot read lyrics: {exc}") from exc
        with open(_art(outdir, "lyrics"), "w", encoding="utf-8") as fh:
            fh.write(prep.format_lyrics(sheet))
        if config.reference_bank:
            try:
                names, bank = prep.load_reference_bank(config.reference_bank)
                index, breakdown = prep.select_reference(
                    sheet, bank, config.reject_fewer_lines
                )
            except (OSError, ValueError) as exc:
                raise StageError("load", f"reference selection failed: {exc}") from exc
            _write_json(
                _art(outdir, "reference"),
                {
                    "bank_index": index,
                    "bank_file": names[index],
                    "penalty": {
                        "sentence": breakdown.sentence,
                        "profile": breakdown.profile,
                        "structure": breakdown.structure,
                        "total": breakdown.total,
                    },
                },
            )


def _load_score_artifact(outdir: str, key: str, stage: str) -> VocalScore:
    path = _need(outdir, key, stage)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return score_io.score_from_json(fh.read())
        except score_io.ScoreFormatError as exc:
            raise StageError(stage, f"cannot parse {ART[key]}: {exc}") from exc


def _stage_validate(config: PipelineConfig, outdir: str) -> None:
    score = _load_score_artifact(outdir, "input_score", "validate")
    problems = validate_score(score)
    _write_json(_art(outdir, "validation"), {"violations": problems})
    if problems:
        raise StageError(
            "validate", "score is invalid: " + "; ".join(problems)
        )


def _stage_register(config: PipelineConfig, outdir: str) -> None:
    score = _load_score_artifact(outdir, "input_score", "register")
    try:
        decision = prep.register_match(score, config.profiles)
        registered = prep.apply_transpose(score, decision.shift)
    except ValueError as exc:
        raise StageError("register", str(exc)) from exc
    _write_json(
        _art(outdir, "register"),
        {
            "profile": decision.profile.name,
            "low": decision.profile.low,
            "high": decision.profile.high,
            "shift": decision.shift,
            "in_range": decision.in_range,
            "total_notes": decision.total_notes,
        },
    )
    with open(_art(outdir, "registered_score"), "w", encoding="utf-8") as fh:
        fh.write(score_io.score_to_json(registered))


def _stage_harmonize(config: PipelineConfig, outdir: str) -> None:
    score = _load_score_artifact(outdir, "registered_score", "harmonize")
    try:
        chords = harmony.harmonize(score)
    except ValueError as exc:
        raise StageError("harmonize", str(exc)) from exc
    has_intro = any(s.label == "intro" for s in score.sections)
    intro_prepended = False
    if not has_intro and config.intro_bars > 0 and score.num_bars >= config.intro_bars:
        bar_duration = tick_to_seconds(score, score.ticks_per_bar)
        chords = harmony.prepend_intro_chords(chords, bar_duration, config.intro_bars)
        score = prepend_instrumental(score, config.intro_bars)
        intro_prepended = True
    with open(_art(outdir, "song_score"), "w", encoding="utf-8") as fh:
        fh.write(score_io.score_to_json(score))
    with open(_art(outdir, "chords"), "w", encoding="utf-8") as fh:
        fh.write(conditioning.format_chords(chords))
    _write_json(
        _art(outdir, "harmonize_meta"),
        {"intro_prepended": intro_prepended, "intro_bars": config.intro_bars},
    )


def section_key_estimates(score: VocalScore) -> list[tuple[int, KeyLabel]]:
    """Per-section key labels from duration-weighted pitch-class histograms.

    Sections without any notes (instrumental intros, breaks) fall back to
    the whole-score histogram.
    """
    overall = np.zeros(12)
    per_section = np.zeros((len(score.sections), 12))
    for note in score.notes:
        for i, sec in enumerate(score.sections):
            lo = max(note.onset_tick, sec.start_tick)
            hi = min(note.end_tick, sec.end_tick)
            if hi > lo:
                per_section[i, note.pitch % 12] += hi - lo
    overall = per_section.sum(axis=0)
    if not overall.any():
        raise ValueError("score has no notes; cannot estimate keys")
    keys = []
    for i in range(len(score.sections)):
        hist = per_section[i] if per_section[i].any() else overall
        keys.append((i, metrics.estimate_key(hist[None, :])))
    return keys


def _stage_condition(config: PipelineConfig, outdir: str) -> None:
    score = _load_score_artifact(outdir, "song_score", "condition")
    chords_path = _need(outdir, "chords", "condition")
    with open(chords_path, "r", encoding="utf-8") as fh:
        try:
            chords = conditioning.parse_chords(fh.read())
        except ValueError as exc:
            raise StageError("condition", f"cannot parse {ART['chords']}: {exc}") from exc
    try:
        if config.section_keys is not None:
            if len(config.section_keys) != len(score.sections):
                raise ValueError(
                    f"config gives {len(config.section_keys)} section keys for "
                    f"{len(score.sections)} sections"
                )
            keys = [(i, KeyLabel.parse(k)) for i, k in enumerate(config.section_keys)]
        else:
            keys = section_key_estimates(score)
        bundle = conditioning.build_condition_bundle(
            score, chords, keys, config.frame_rate, config.sigma
        )
    except ValueError as exc:
        raise StageError("condition", str(exc)) from exc
    with open(_art(outdir, "conditions"), "w", encoding="utf-8") as fh:
        fh.write(conditioning.bundle_to_json(bundle))


def _stage_plan(config: PipelineConfig, outdir: str) -> None:
    score = _load_score_artifact(outdir, "song_score", "plan")
    try:
        windows = planner.plan_inference(score, config.max_window_sec)
    except ValueError as exc:
        raise StageError("plan", str(exc)) from exc
    with open(_art(outdir, "plan"), "w", encoding="utf-8") as fh:
        fh.write(planner.plan_to_json(windows))


def _stage_render(config: PipelineConfig, outdir: str) -> None:
    with open(_need(outdir, "conditions", "render"), "r", encoding="utf-8") as fh:
        try:
            bundle = conditioning.bundle_from_json(fh.read())
        except ValueError as exc:
            raise StageError("render", f"cannot parse conditions: {exc}") from exc
    with open(_need(outdir, "plan", "render"), "r", encoding="utf-8") as fh:
        try:
            windows = planner.plan_from_json(fh.read())
        except ValueError as exc:
            raise StageError("render", f"cannot parse plan: {exc}") from exc
    pieces: list[tuple[planner.GenerationWindow, render.AudioBuffer]] = []
    events: list[render.RenderEvent] = []
    try:
        for window in sorted(windows, key=lambda w: w.order):
            buffer, window_events = render.render_stub(bundle, window, config.sample_rate)
            render.write_wav(
                buffer, os.path.join(outdir, f"window_{window.order:03d}.wav")
            )
            pieces.append((window, buffer))
            events.extend(window_events)
    except ValueError as exc:
        raise StageError("render", str(exc)) from exc
    pieces.sort(key=lambda p: p[0].start_sec)
    full = np.concatenate([p[1].samples for p in pieces], axis=1)
    render.write_wav(
        render.AudioBuffer(config.sample_rate, full), _art(outdir, "accompaniment")
    )
    events.sort(key=lambda e: (e.time_sec, e.kind))
    with open(_art(outdir, "events"), "w", encoding="utf-8") as fh:
        fh.write(render.format_events(events))


def _stage_mix(config: PipelineConfig, outdir: str) -> None:
    accomp = _read_wav_artifact(outdir, "accompaniment", "mix")
    if config.vocal_path:
        try:
            vocal = render.read_wav(config.vocal_path)
        except (OSError, render.WavFormatError) as exc:
            raise StageError("mix", f"cannot read vocal: {exc}") from exc
    else:  # no vocal track given: mix against silence
        vocal = render.AudioBuffer(
            accomp.sample_rate, np.zeros((1, accomp.n_samples))
        )
    try:
        mixed = render.mix(vocal, accomp)
    except ValueError as exc:
        raise StageError("mix", str(exc)) from exc
    render.write_wav(mixed, _art(outdir, "mix"))


def _read_wav_artifact(outdir: str, key: str, stage: str) -> render.AudioBuffer:
    path = _need(outdir, key, stage)
    try:
        return render.read_wav(path)
    except (OSError, render.WavFormatError) as exc:
        raise StageError(stage, f"cannot read {ART[key]}: {exc}") from exc


def self_report(
    bundle: conditioning.ConditionBundle,
    events: list[render.RenderEvent],
    accompaniment: render.AudioBuffer,
) -> dict:
    """Closed-loop metrics of rendered audio against its own conditions."""
    beat_frames = render.local_maxima(bundle.rhythm[:, 0], render.CLICK_THRESHOLD)
    expected_beats = [f / bundle.frame_rate for f in beat_frames]
    logged_beats = [e.time_sec for e in events if e.kind in ("beat", "downbeat")]
    beat_f1 = metrics.rhythm_f1(expected_beats, logged_beats)

    audio_chroma = metrics.chroma_from_audio(
        accompaniment.samples,
        accompaniment.sample_rate,
        bundle.frame_rate,
        bundle.num_frames,
    )
    chord = metrics.chord_f1(bundle.chroma, audio_chroma)

    ref_keys: list[KeyLabel] = []
    est_keys: list[KeyLabel] = []
    for sec in sorted(set(bundle.structure.tolist())):
        mask = (bundle.structure == sec) & bundle.chroma.any(axis=1)
        if not mask.any() or not audio_chroma[mask].any():
            continue
        ref_keys.append(metrics.estimate_key(bundle.chroma[mask]))
        est_keys.append(metrics.estimate_key(audio_chroma[mask]))
    key_acc = metrics.key_accuracy(ref_keys, est_keys) if ref_keys else None

    return {
        "rhythm_f1_log_vs_conditions": beat_f1,
        "chord_f1_audio_vs_conditions": chord,
        "key_accuracy_audio_vs_conditions": key_acc,
        "num_expected_beats": len(expected_beats),
        "num_logged_beats": len(logged_beats),
        "num_key_segments": len(ref_keys),
    }


def _stage_report(config: PipelineConfig, outdir: str) -> None:
    with open(_need(outdir, "conditions", "report"), "r", encoding="utf-8") as fh:
        bundle = conditioning.bundle_from_json(fh.read())
    with open(_need(outdir, "events", "report"), "r", encoding="utf-8") as fh:
        events = render.parse_events(fh.read())
    accomp = _read_wav_artifact(outdir, "accompaniment", "report")
    report = self_report(bundle, events, accomp)
    _write_json(_art(outdir, "report"), report)

    artifacts = {
        key: name for key, name in ART.items()
        if key != "manifest" and os.path.exists(_art(outdir, key))
    }
    windows = sorted(
        n for n in os.listdir(outdir)
        if n.startswith("window_") and n.endswith(".wav")
    )
    _write_json(
        _art(outdir, "manifest"),
        {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "config": config.to_manifest_dict(),
            "artifacts": artifacts,
            "window_files": windows,
            "report": report,
        },
    )


_STAGE_FUNCS = {
    "load": _stage_load,
    "validate": _stage_validate,
    "register": _stage_register,
    "harmonize": _stage_harmonize,
    "condition": _stage_condition,
    "plan": _stage_plan,
    "render": _stage_render,
    "mix": _stage_mix,
    "report": _stage_report,
}


def run_pipeline(config: PipelineConfig, from_stage: str = "load") -> dict:
    """Run the pipeline from ``from_stage`` to the end; returns the manifest.

    Stages communicate only through files in ``config.output_dir``, so
    resuming from a later stage picks up whatever artifacts are on disk
    (hand-edited or not).  Raises :class:`StageError` on the first failure.
    """
    if from_stage not in STAGES:
        raise ValueError(f"unknown stage {from_stage!r}; expected one of {STAGES}")
    os.makedirs(config.output_dir, exist_ok=True)
    for stage in STAGES[STAGES.index(from_stage):]:
        LOGGER.info("stage %s", stage)
        _STAGE_FUNCS[stage](config, config.output_dir)
    with open(_art(config.output_dir, "manifest"), "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Subcommand handlers


def _cmd_validate(args) -> int:
    score = score_io.load_score(args.score)
    problems = validate_score(score)
    if problems:
        for p in problems:
            print(p)
        return 1
    print("OK")
    return 0


def _cmd_harmonize(args) -> int:
    score = score_io.load_score(args.score)
    weights = harmony.HarmonizerWeights(
        args.emission_weight, args.transition_weight, args.change_penalty
    )
    chords = harmony.harmonize(score, weights)
    if args.intro_bars:
        bar_duration = tick_to_seconds(score, score.ticks_per_bar)
        chords = harmony.prepend_intro_chords(chords, bar_duration, args.intro_bars)
    text = conditioning.format_chords(chords)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return 0


def _parse_profile(spec: str) -> SingerProfile:
    parts = spec.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"profile must look like name:low:high, got {spec!r}"
        )
    try:
        return SingerProfile(parts[0], int(parts[1]), int(parts[2]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _cmd_register(args) -> int:
    score = score_io.load_score(args.score)
    profiles = tuple(args.profile) if args.profile else DEFAULT_PROFILES
    decision = prep.register_match(score, profiles)
    print(
        f"profile={decision.profile.name} range=[{decision.profile.low}, "
        f"{decision.profile.high}] shift={decision.shift:+d} "
        f"in_range={decision.in_range}/{decision.total_notes}"
    )
    if args.apply:
        transposed = prep.apply_transpose(score, decision.shift)
        score_io.save_score(transposed, args.apply)
    return 0


def _cmd_condition(args) -> int:
    score = score_io.load_score(args.score)
    with open(args.chords, "r", encoding="utf-8") as fh:
        chords = conditioning.parse_chords(fh.read())
    if args.keys:
        labels = [k.strip() for k in args.keys.split(",")]
        if len(labels) != len(score.sections):
            raise ValueError(
                f"--keys gives {len(labels)} keys for {len(score.sections)} sections"
            )
        keys = [(i, KeyLabel.parse(k)) for i, k in enumerate(labels)]
    else:
        keys = section_key_estimates(score)
    bundle = conditioning.build_condition_bundle(
        score, chords, keys, args.frame_rate, args.sigma
    )
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(conditioning.bundle_to_json(bundle))
    print(f"wrote {bundle.num_frames} frames to {args.output}")
    return 0


def _cmd_plan(args) -> int:
    score = score_io.load_score(args.score)
    windows = planner.plan_inference(score, args.max_window)
    print(planner.format_plan_table(windows), end="")
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(planner.plan_to_json(windows))
    return 0


def _cmd_render(args) -> int:
    with open(args.conditions, "r", encoding="utf-8") as fh:
        bundle = conditioning.bundle_from_json(fh.read())
    with open(args.plan, "r", encoding="utf-8") as fh:
        windows = planner.plan_from_json(fh.read())
    os.makedirs(args.output_dir, exist_ok=True)
    pieces = []
    events: list[render.RenderEvent] = []
    for window in sorted(windows, key=lambda w: w.order):
        buffer, window_events = render.render_stub(bundle, window, args.sample_rate)
        render.write_wav(
            buffer, os.path.join(args.output_dir, f"window_{window.order:03d}.wav")
        )
        pieces.append((window, buffer))
        events.extend(window_events)
    pieces.sort(key=lambda p: p[0].start_sec)
    full = np.concatenate([p[1].samples for p in pieces], axis=1)
    render.write_wav(
        render.AudioBuffer(args.sample_rate, full),
        os.path.join(args.output_dir, "accompaniment.wav"),
    )
    events.sort(key=lambda e: (e.time_sec, e.kind))
    with open(os.path.join(args.output_dir, "events.txt"), "w", encoding="utf-8") as fh:
        fh.write(render.format_events(events))
    print(f"rendered {len(pieces)} windows into {args.output_dir}")
    return 0


def _cmd_mix(args) -> int:
    vocal = render.read_wav(args.vocal)
    accomp = render.read_wav(args.accompaniment)
    mixed = render.mix(vocal, accomp)
    render.write_wav(mixed, args.output)
    print(f"wrote {args.output} (peak {mixed.peak():.3f})")
    return 0


def _cmd_eval(args) -> int:
    rows: list[tuple[str, float]] = []
    if args.ref_beats or args.est_beats:
        if not (args.ref_beats and args.est_beats):
            raise ValueError("--ref-beats and --est-beats must be given together")
        ref = beatgrid.parse_beat_grid(_read_text(args.ref_beats))
        est = beatgrid.parse_beat_grid(_read_text(args.est_beats))
        rows.append(
            ("rhythm_f1", metrics.rhythm_f1(list(ref.beats), list(est.beats), args.tolerance))
        )
        if ref.downbeats and est.downbeats:
            rows.append(
                (
                    "downbeat_f1",
                    metrics.rhythm_f1(
                        list(ref.downbeats), list(est.downbeats), args.tolerance
                    ),
                )
            )
    if args.ref_chroma or args.est_chroma:
        if not (args.ref_chroma and args.est_chroma):
            raise ValueError("--ref-chroma and --est-chroma must be given together")
        rows.append(
            (
                "chord_f1",
                metrics.chord_f1(
                    _read_chroma(args.ref_chroma), _read_chroma(args.est_chroma)
                ),
            )
        )
    if args.ref_keys or args.est_keys:
        if not (args.ref_keys and args.est_keys):
            raise ValueError("--ref-keys and --est-keys must be given together")
        ref_keys = _read_keys(args.ref_keys)
        est_keys = _read_keys(args.est_keys)
        rows.append(("key_accuracy", metrics.key_accuracy(ref_keys, est_keys)))
    if args.ref_text or args.hyp_text:
        if not (args.ref_text and args.hyp_text):
            raise ValueError("--ref-text and --hyp-text must be given together")
        ref_tokens = _text_tokens(args.ref_text, args.dedup)
        hyp_tokens = _text_tokens(args.hyp_text, args.dedup)
        rows.append(("per", metrics.per(ref_tokens, hyp_tokens)))
    if not rows:
        raise ValueError("nothing to evaluate; pass at least one file pair")

    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value:.6f}")
    if args.json:
        _write_json(args.json, dict(rows))
    return 0


def _read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _read_chroma(path: str) -> np.ndarray:
    doc = json.loads(_read_text(path))
    if not isinstance(doc, dict) or "chroma" not in doc:
        raise ValueError(f"{path}: expected a JSON object with a 'chroma' key")
    return np.asarray(doc["chroma"], dtype=float).reshape(-1, 12)


def _read_keys(path: str) -> list[KeyLabel]:
    keys = []
    for line in _read_text(path).splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            keys.append(KeyLabel.parse(line))
    return keys


def _text_tokens(path: str, dedup: bool) -> list[str]:
    lines = [l.strip() for l in _read_text(path).splitlines() if l.strip()]
    if dedup:
        lines = metrics.dedup_lines(lines)
    tokens: list[str] = []
    for line in lines:
        tokens.extend(prep.tokenize_lyric_text(line))
    return tokens


def _cmd_run(args) -> int:
    if args.config:
        config = config_from_json(_read_text(args.config), args.output)
    else:
        if not args.score:
            raise ValueError("either --config or --score is required")
        config = PipelineConfig(
            score_path=args.score, output_dir=args.output or "songpipe_out"
        )
    overrides = {}
    if args.score:
        overrides["score_path"] = args.score
    if args.vocal:
        overrides["vocal_path"] = args.vocal
    if args.lyrics:
        overrides["lyrics_path"] = args.lyrics
    if args.bank:
        overrides["reference_bank"] = args.bank
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = replace(config, **overrides)
    try:
        manifest = run_pipeline(config, args.from_stage)
    except StageError as exc:
        print(f"error in stage '{exc.stage}': {exc}", file=sys.stderr)
        return 1
    report = manifest.get("report", {})
    for name in sorted(report):
        print(f"{name}: {report[name]}")
    print(f"manifest: {os.path.join(config.output_dir, ART['manifest'])}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="songpipe",
        description="Deterministic symbolic song-accompaniment pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a score file against the model invariants")
    p.add_argument("score")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("harmonize", help="choose one chord per bar for a melody")
    p.add_argument("score")
    p.add_argument("-o", "--output", help="write chords here instead of stdout")
    p.add_argument("--intro-bars", type=int, default=0,
                   help="prepend this many bars of duplicated opening chords")
    p.add_argument("--emission-weight", type=float, default=1.0)
    p.add_argument("--transition-weight", type=float, default=0.1)
    p.add_argument("--change-penalty", type=float, default=0.05)
    p.set_defaults(func=_cmd_harmonize)

    p = sub.add_parser("register", help="pick a singer profile and octave shift")
    p.add_argument("score")
    p.add_argument("--profile", action="append", type=_parse_profile,
                   metavar="NAME:LOW:HIGH")
    p.add_argument("--apply", metavar="OUT", help="write the shifted score here")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("condition", help="build framewise conditioning signals")
    p.add_argument("score")
    p.add_argument("--chords", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--keys", help="comma-separated per-section keys, e.g. C:maj,A:min")
    p.add_argument("--frame-rate", type=float, default=conditioning.DEFAULT_FRAME_RATE)
    p.add_argument("--sigma", type=float, default=conditioning.DEFAULT_SIGMA)
    p.set_defaults(func=_cmd_condition)

    p = sub.add_parser("plan", help="tile a score into ordered generation windows")
    p.add_argument("score")
    p.add_argument("-o", "--output", help="also write the plan as JSON")
    p.add_argument("--max-window", type=float, default=planner.MAX_WINDOW_SEC)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("render", help="render conditions to audio with the stub generator")
    p.add_argument("--conditions", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("-o", "--output-dir", required=True)
    p.add_argument("--sample-rate", type=int, default=render.DEFAULT_SAMPLE_RATE)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("mix", help="sum vocal and accompaniment, peak-normalized")
    p.add_argument("vocal")
    p.add_argument("accompaniment")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_mix)

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("--ref-beats")
    p.add_argument("--est-beats")
    p.add_argument("--tolerance", type=float, default=metrics.RHYTHM_TOLERANCE_SEC)
    p.add_argument("--ref-chroma")
    p.add_argument("--est-chroma")
    p.add_argument("--ref-keys")
    p.add_argument("--est-keys")
    p.add_argument("--ref-text")
    p.add_argument("--hyp-text")
    p.add_argument("--dedup", action="store_true",
                   help="collapse consecutive duplicate lines before scoring")
    p.add_argument("--json", help="also write results to this JSON file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("run", help="run the whole pipeline into an output directory")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--score", help="score path (overrides config)")
    p.add_argument("--output", help="output directory (overrides config)")
    p.add_argument("--vocal", help="vocal WAV to mix in")
    p.add_argument("--lyrics", help="lyric sheet for reference selection")
    p.add_argument("--bank", help="reference-bank directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--from", dest="from_stage", default="load", choices=STAGES,
                   help="resume from this stage using existing artifacts")
    p.set_defaults(func=_cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, score_io.ScoreFormatError, render.WavFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
