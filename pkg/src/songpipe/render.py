"""Deterministic stub renderer, mixing, and WAV (RIFF) I/O.

The stub renderer stands in for the neural accompaniment generator so the
whole pipeline can run closed-loop: it turns a condition bundle into audio
that *encodes the conditions audibly* — a triad sine pad (octave 4, one
sinusoid per active pitch class at amplitude 0.2, 10 ms linear fades at
chord changes) plus a short 1 kHz click at every rhythm-activation maximum
at or above 0.5 (amplitude 0.3; 1.5x at downbeats).  Every emitted event is
logged with its sample-accurate time, so closed-loop tests can compare the
log, the audio and the conditions independently.

Sines come from a fixed 16384-entry lookup table rounded to 1e-9, with
truncating phase lookup and phase derived from absolute song time, so equal
inputs render byte-identical audio and windows tiled over one song
concatenate seamlessly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .conditioning import ConditionBundle
from .planner import GenerationWindow

DEFAULT_SAMPLE_RATE = 44100

PAD_TONE_AMPLITUDE = 0.2
PAD_OCTAVE_BASE_MIDI = 60  # active pitch class pc sounds at MIDI 60 + pc
FADE_SEC = 0.01
CLICK_FREQ_HZ = 1000.0
CLICK_SEC = 0.01
CLICK_AMPLITUDE = 0.3
DOWNBEAT_GAIN = 1.5
CLICK_DECAY_SEC = 0.0025
CLICK_THRESHOLD = 0.5
MIX_PEAK = 0.95

_TABLE_SIZE = 16384
_SINE_TABLE = np.round(np.sin(2.0 * np.pi * np.arange(_TABLE_SIZE) / _TABLE_SIZE), 9)


class WavFormatError(ValueError):
    """Raised for malformed or unsupported WAV input."""


@dataclass(frozen=True)
class AudioBuffer:
    """Float samples at a fixed rate, shape (channels, n), 1 or 2 channels."""

    sample_rate: int
    samples: np.ndarray

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] not in (1, 2):
            raise ValueError(
                f"samples must be (channels, n) with 1 or 2 channels, got {samples.shape}"
            )
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_sec(self) -> float:
        return self.n_samples / self.sample_rate

    def peak(self) -> float:
        return float(np.abs(self.samples).max()) if self.n_samples else 0.0


@dataclass(frozen=True)
class RenderEvent:
    """One emitted event: sample-accurate time and kind (beat/downbeat/chord_change)."""

    time_sec: float
    kind: str


def _table_sine(freq_hz: float, times_sec: np.ndarray) -> np.ndarray:
    """Sine of ``freq_hz`` sampled at absolute times via the fixed table."""
    phase = times_sec * freq_hz
    idx = np.floor((phase % 1.0) * _TABLE_SIZE).astype(np.int64) % _TABLE_SIZE
    return _SINE_TABLE[idx]


def midi_to_hz(pitch: float) -> float:
    return 440.0 * 2.0 ** ((pitch - 69) / 12.0)


def local_maxima(x: np.ndarray, threshold: float) -> np.ndarray:
    """Indices of local maxima at or above threshold (plateaus count once)."""
    if len(x) == 0:
        return np.zeros(0, dtype=np.int64)
    left = np.empty_like(x)
    left[0] = -np.inf
    left[1:] = x[:-1]
    right = np.empty_like(x)
    right[-1] = -np.inf
    right[:-1] = x[1:]
    mask = (x >= threshold) & (x > left) & (x >= right)
    return np.nonzero(mask)[0]


def _chord_segments(chroma: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of identical chroma rows as (first_frame, last_frame + 1)."""
    t = len(chroma)
    if t == 0:
        return []
    change = np.any(chroma[1:] != chroma[:-1], axis=1)
    starts = [0] + (np.nonzero(change)[0] + 1).tolist()
    return [(a, b) for a, b in zip(starts, starts[1:] + [t])]


def render_stub(
    bundle: ConditionBundle,
    window: GenerationWindow,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> tuple[AudioBuffer, list[RenderEvent]]:
    """Render one window of a bundle to mono audio plus an event log.

    The window must lie inside the bundle's time span.  Event times are
    absolute (song time), quantized to the sample grid.
    """
    if sample_rate <= 0:
        raise ValueError(f"sample_rate must be positive, got {sample_rate}")
    duration = bundle.duration_sec
    if window.start_sec < -1e-9 or window.end_sec > duration + 1e-9:
        raise ValueError(
            f"window [{window.start_sec}, {window.end_sec}) outside the bundle's "
            f"[0, {duration:.3f}) span"
        )
    fr = bundle.frame_rate
    first_sample = round(window.start_sec * sample_rate)
    last_sample = round(window.end_sec * sample_rate)
    n = last_sample - first_sample
    out = np.zeros(n)
    events: list[RenderEvent] = []

    fade_len = int(round(FADE_SEC * sample_rate))
    for f0, f1 in _chord_segments(bundle.chroma):
        pcs = np.nonzero(bundle.chroma[f0])[0]
        seg_start = f0 / fr
        seg_end = min(f1 / fr, duration)
        a = max(round(seg_start * sample_rate), first_sample)
        b = min(round(seg_end * sample_rate), last_sample)
        is_change = f0 > 0 and len(pcs) > 0
        if len(pcs) == 0 or b <= a:
            # Log silent-to-chord boundaries handled by the next segment;
            # nothing to synthesize for an empty row.
            continue
        times = np.arange(a, b) / sample_rate
        seg = np.zeros(b - a)
        for pc in pcs:
            seg += PAD_TONE_AMPLITUDE * _table_sine(midi_to_hz(PAD_OCTAVE_BASE_MIDI + pc), times)
        env = np.ones(b - a)
        true_start = round(seg_start * sample_rate)
        true_end = round(seg_end * sample_rate)
        ramp = min(fade_len, b - a)
        if a == true_start and ramp > 0:  # fade-in only at the real chord onset
            env[:ramp] = np.minimum(env[:ramp], np.arange(ramp) / max(fade_len, 1))
        if b == true_end and ramp > 0:
            env[-ramp:] = np.minimum(env[-ramp:], np.arange(ramp, 0, -1) / max(fade_len, 1))
        out[a - first_sample : b - first_sample] += seg * env
        if is_change and first_sample <= true_start < last_sample:
            events.append(RenderEvent(true_start / sample_rate, "chord_change"))

    beat_frames = local_maxima(bundle.rhythm[:, 0], CLICK_THRESHOLD)
    down_frames = set(local_maxima(bundle.rhythm[:, 1], CLICK_THRESHOLD).tolist())
    click_len = int(round(CLICK_SEC * sample_rate))
    click_t = np.arange(click_len) / sample_rate
    click_env = np.exp(-click_t / CLICK_DECAY_SEC)
    for f in sorted(set(beat_frames.tolist()) | down_frames):
        t_event = f / fr
        s_abs = round(t_event * sample_rate)
        if not first_sample <= s_abs < last_sample:
            continue
        is_down = f in down_frames
        amp = CLICK_AMPLITUDE * (DOWNBEAT_GAIN if is_down else 1.0)
        burst = amp * click_env * _table_sine(CLICK_FREQ_HZ, click_t)
        local = s_abs - first_sample
        stop = min(local + click_len, n)
        out[local:stop] += burst[: stop - local]
        events.append(RenderEvent(s_abs / sample_rate, "downbeat" if is_down else "beat"))

    events.sort(key=lambda e: (e.time_sec, e.kind))
    return AudioBuffer(sample_rate, out[None, :]), events


def mix(vocal: AudioBuffer, accompaniment: AudioBuffer) -> AudioBuffer:
    """Sum two buffers and normalize the peak to 0.95.

    Sample rates must match; the shorter buffer is zero-padded and a mono
    buffer is duplicated up to stereo when channel counts differ.  All-silent
    input stays silent instead of being scaled.
    """
    if vocal.sample_rate != accompaniment.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: {vocal.sample_rate} vs {accompaniment.sample_rate}"
        )
    channels = max(vocal.channels, accompaniment.channels)
    n = max(vocal.n_samples, accompaniment.n_samples)
    total = np.zeros((channels, n))
    for buf in (vocal, accompaniment):
        samples = buf.samples
        if buf.channels < channels:
            samples = np.repeat(samples, channels, axis=0)
        total[:, : buf.n_samples] += samples
    peak = np.abs(total).max() if n else 0.0
    if peak > 0.0:
        total *= MIX_PEAK / peak
    return AudioBuffer(vocal.sample_rate, total)


# ---------------------------------------------------------------------------
# Event-log text format: time <TAB> kind


def format_events(events: list[RenderEvent]) -> str:
    lines = [f"{e.time_sec:.6f}\t{e.kind}" for e in events]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_events(text: str) -> list[RenderEvent]:
    events = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"event line {lineno}: expected 2 columns, got {len(parts)}")
        try:
            events.append(RenderEvent(float(parts[0]), parts[1]))
        except ValueError:
            raise ValueError(f"event line {lineno}: bad time column") from None
    return events


# ---------------------------------------------------------------------------
# WAV (RIFF) I/O: PCM-16 and IEEE float-32, 1-2 channels


def wav_bytes(buffer: AudioBuffer, sample_format: str = "float32") -> bytes:
    """Encode a buffer as a RIFF/WAVE byte string.

    ``float32`` is bit-exact for float32-representable samples; ``pcm16``
    quantizes to 16-bit integers (values outside [-1, 1] clip).
    """
    interleaved = buffer.samples.T.reshape(-1)
    if sample_format == "pcm16":
        fmt_tag, bits = 1, 16
        data = (
            np.clip(np.round(interleaved * 32768.0), -32768, 32767)
            .astype("<i2")
            .tobytes()
        )
    elif sample_format == "float32":
        fmt_tag, bits = 3, 32
        data = interleaved.astype("<f4").tobytes()
    else:
        raise ValueError(f"sample_format must be 'pcm16' or 'float32', got {sample_format!r}")

    channels = buffer.channels
    block_align = channels * bits // 8
    byte_rate = buffer.sample_rate * block_align
    fmt = struct.pack(
        "<HHIIHH", fmt_tag, channels, buffer.sample_rate, byte_rate, block_align, bits
    )
    chunks = [b"fmt " + struct.pack("<I", len(fmt)) + fmt]
    if fmt_tag == 3:  # float WAVs conventionally carry a fact chunk
        chunks.append(b"fact" + struct.pack("<II", 4, buffer.n_samples))
    chunks.append(b"data" + struct.pack("<I", len(data)) + data)
    body = b"WAVE" + b"".join(chunks)
    return b"RIFF" + struct.pack("<I", len(body)) + body


def wav_from_bytes(data: bytes) -> AudioBuffer:
    """Decode a RIFF/WAVE byte string, raising :class:`WavFormatError` on bad input."""
    if len(data) < 12:
        raise WavFormatError("file too short for a RIFF header")
    if data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file")
    pos = 12
    fmt_fields = None
    payload = None
    while pos + 8 <= len(data):
        tag = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        pos += 8
        if pos + size > len(data):
            raise WavFormatError(f"chunk {tag!r} runs past end of file")
        body = data[pos : pos + size]
        pos += size + (size & 1)  # chunks are word-aligned
        if tag == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk shorter than 16 bytes")
            fmt_fields = struct.unpack("<HHIIHH", body[:16])
        elif tag == b"data":
            payload = body
    if fmt_fields is None:
        raise WavFormatError("missing fmt chunk")
    if payload is None:
        raise WavFormatError("missing data chunk")
    fmt_tag, channels, sample_rate, _, block_align, bits = fmt_fields
    if channels not in (1, 2):
        raise WavFormatError(f"unsupported channel count {channels}")
    if sample_rate <= 0:
        raise WavFormatError(f"invalid sample rate {sample_rate}")
    if fmt_tag == 1 and bits == 16:
        width = 2
        decode = lambda raw: np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    elif fmt_tag == 3 and bits == 32:
        width = 4
        decode = lambda raw: np.frombuffer(raw, dtype="<f4").astype(float)
    else:
        raise WavFormatError(
            f"unsupported format: tag {fmt_tag} with {bits} bits "
            "(PCM-16 and float-32 only)"
        )
    if block_align != channels * width:
        raise WavFormatError(f"block align {block_align} inconsistent with format")
    if len(payload) % (channels * width):
        raise WavFormatError("data chunk length is not a whole number of frames")
    flat = decode(payload)
    return AudioBuffer(sample_rate, flat.reshape(-1, channels).T.copy())


def write_wav(buffer: AudioBuffer, path, sample_format: str = "float32") -> None:
    with open(path, "wb") as fh:
        fh.write(wav_bytes(buffer, sample_format))


def read_wav(path) -> AudioBuffer:
    with open(path, "rb") as fh:
        return wav_from_bytes(fh.read())
