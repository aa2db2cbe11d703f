"""Recording ingestion, epoch segmentation, and synthetic EEG generation.

Supports two on-disk formats:

* CSV: UTF-8, one sample per line, optional single header line. CSV files
  carry no rate metadata, so the sampling rate must be passed in.
* EDF: standard European Data Format; only signal extraction is
  implemented (no annotations-in-EDF).

Stage annotations live in a separate text file, one token per line from
{W, S1, S2, S3, S4, REM, UNSCORED}. S3 and S4 both map to N3 per the
AASM merge; UNSCORED epochs are returned as None and dropped downstream.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

EPOCH_SECONDS = 30
# Epoch lengths must be divisible by the feature accumulation window.
ACCUMULATION_WIDTH = 25
CANONICAL_RATE_HZ = 125


class Stage(enum.Enum):
    """The five scored sleep stages, in fixed report order."""

    WAKE = 0
    N1 = 1
    N2 = 2
    N3 = 3
    REM = 4

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]


_DISPLAY_NAMES = {
    Stage.WAKE: "Wake",
    Stage.N1: "N1",
    Stage.N2: "N2",
    Stage.N3: "N3",
    Stage.REM: "REM",
}

STAGE_ORDER = (Stage.WAKE, Stage.N1, Stage.N2, Stage.N3, Stage.REM)

# Annotation tokens -> stage. S3/S4 merge into N3 (deep sleep).
ANNOTATION_MAP = {
    "W": Stage.WAKE,
    "S1": Stage.N1,
    "S2": Stage.N2,
    "S3": Stage.N3,
    "S4": Stage.N3,
    "REM": Stage.REM,
}
UNSCORED_TOKEN = "UNSCORED"


@dataclass
class RawRecord:
    """One channel of a continuous recording, in microvolts."""

    samples: np.ndarray
    sample_rate_hz: int
    channel_name: str
    subject_id: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(
                f"record {self.subject_id!r}: non-finite samples after ingestion"
            )


@dataclass
class Epoch:
    """One 30-second scoring window; the unit of classification."""

    samples: np.ndarray
    sample_rate_hz: int
    stage: Stage | None
    epoch_index: int
    subject_id: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        expected = EPOCH_SECONDS * self.sample_rate_hz
        if self.samples.shape != (expected,):
            raise ValueError(
                f"epoch must hold exactly {expected} samples "
                f"({EPOCH_SECONDS} s at {self.sample_rate_hz} Hz), got {self.samples.shape}"
            )
        if expected % ACCUMULATION_WIDTH != 0:
            raise ValueError(
                f"epoch length {expected} is not a multiple of the accumulation "
                f"width {ACCUMULATION_WIDTH}; use a sample rate divisible by 5"
            )
        if self.epoch_index < 0:
            raise ValueError("epoch_index must be non-negative")


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def ingest_record(
    path: str | Path,
    channel: str,
    fmt: str = "csv",
    *,
    sample_rate_hz: int | None = None,
    expected_rate_hz: int | None = None,
    resample: bool = False,
) -> RawRecord:
    """Read one channel from a recording file.

    Args:
        path: recording file.
        channel: channel label; for CSV it only names the single column.
        fmt: "csv" or "edf".
        sample_rate_hz: required for CSV (the format carries no rate).
        expected_rate_hz: when set, records at a different rate are
            rejected unless `resample` is enabled.
        resample: linearly resample to `expected_rate_hz` on mismatch.

    Raises:
        FileNotFoundError: missing file.
        DataError: malformed file, absent channel, or rate mismatch.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if fmt == "csv":
        if sample_rate_hz is None:
            raise ValueError("sample_rate_hz is required for CSV records")
        samples = _read_csv_samples(path)
        record = RawRecord(samples, int(sample_rate_hz), channel, path.stem)
    elif fmt == "edf":
        samples, rate = _read_edf_channel(path, channel)
        record = RawRecord(samples, rate, channel, path.stem)
    else:
        raise ValueError(f"unknown record format {fmt!r} (expected 'csv' or 'edf')")

    if expected_rate_hz is not None and record.sample_rate_hz != expected_rate_hz:
        if not resample:
            raise DataError(
                f"{path.name}: sample rate {record.sample_rate_hz} Hz does not match "
                f"configured {expected_rate_hz} Hz (enable resampling to convert)"
            )
        record = _linear_resample(record, expected_rate_hz)
    return record


def _read_csv_samples(path: Path) -> np.ndarray:
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            token = line.strip()
            if not token:
                continue
            try:
                value = float(token)
            except ValueError:
                if lineno == 1:
                    continue  # optional header line
                raise DataError(f"{path.name}:{lineno}: not a number: {token!r}")
            if not math.isfinite(value):
                raise DataError(f"{path.name}:{lineno}: non-finite sample {token!r}")
            values.append(value)
    if not values:
        raise DataError(f"{path.name}: no samples found")
    return np.asarray(values, dtype=np.float64)


def _linear_resample(record: RawRecord, target_rate_hz: int) -> RawRecord:
    n = record.samples.size
    duration = n / record.sample_rate_hz
    m = int(round(duration * target_rate_hz))
    t_src = np.arange(n) / record.sample_rate_hz
    t_dst = np.arange(m) / target_rate_hz
    resampled = np.interp(t_dst, t_src, record.samples)
    return RawRecord(resampled, target_rate_hz, record.channel_name, record.subject_id)


# ---------------------------------------------------------------------------
# EDF reading (signals only)
# ---------------------------------------------------------------------------


def _read_edf_channel(path: Path, channel: str) -> tuple[np.ndarray, int]:
    """Extract one signal from an EDF file, scaled to physical units."""
    with open(path, "rb") as fh:
        header = fh.read(256)
        if len(header) < 256:
            raise DataError(f"{path.name}: truncated EDF header")
        try:
            n_records = int(header[236:244].decode("ascii").strip())
            record_duration = float(header[244:252].decode("ascii").strip())
            ns = int(header[252:256].decode("ascii").strip())
        except (ValueError, UnicodeDecodeError) as exc:
            raise DataError(f"{path.name}: malformed EDF header: {exc}")
        if ns <= 0 or n_records < 0 or record_duration <= 0:
            raise DataError(f"{path.name}: malformed EDF header (ns={ns})")

        sig_header = fh.read(ns * 256)
        if len(sig_header) < ns * 256:
            raise DataError(f"{path.name}: truncated EDF signal header")

        def fields(offset: int, width: int) -> list[str]:
            base = offset * ns
            return [
                sig_header[base + i * width : base + (i + 1) * width]
                .decode("latin-1")
                .strip()
                for i in range(ns)
            ]

        # Signal header is field-major: ns labels, then ns transducers, ...
        labels = fields(0, 16)
        pos = 16 * ns + 80 * ns + 8 * ns  # skip transducer + physical dimension
        try:
            phys_min = [float(sig_header[pos + i * 8 : pos + (i + 1) * 8]) for i in range(ns)]
            pos += 8 * ns
            phys_max = [float(sig_header[pos + i * 8 : pos + (i + 1) * 8]) for i in range(ns)]
            pos += 8 * ns
            dig_min = [int(sig_header[pos + i * 8 : pos + (i + 1) * 8]) for i in range(ns)]
            pos += 8 * ns
            dig_max = [int(sig_header[pos + i * 8 : pos + (i + 1) * 8]) for i in range(ns)]
            pos += 8 * ns
            pos += 80 * ns  # prefiltering
            n_samples = [int(sig_header[pos + i * 8 : pos + (i + 1) * 8]) for i in range(ns)]
        except ValueError as exc:
            raise DataError(f"{path.name}: malformed EDF signal header: {exc}")

        if channel not in labels:
            raise DataError(
                f"{path.name}: channel {channel!r} absent (available: {', '.join(labels)})"
            )
        idx = labels.index(channel)

        rate = n_samples[idx] / record_duration
        if abs(rate - round(rate)) > 1e-9:
            raise DataError(
                f"{path.name}: non-integral sample rate {rate} Hz for {channel!r}"
            )
        if dig_max[idx] == dig_min[idx]:
            raise DataError(f"{path.name}: degenerate digital range for {channel!r}")
        scale = (phys_max[idx] - phys_min[idx]) / (dig_max[idx] - dig_min[idx])
        offset = phys_max[idx] - scale * dig_max[idx]

        bytes_per_record = [2 * k for k in n_samples]
        record_bytes = sum(bytes_per_record)
        chan_offset = sum(bytes_per_record[:idx])
        out = np.empty(n_records * n_samples[idx], dtype=np.float64)
        start = fh.tell()
        for rec in range(n_records):
            fh.seek(start + rec * record_bytes + chan_offset)
            raw = fh.read(bytes_per_record[idx])
            if len(raw) < bytes_per_record[idx]:
                raise DataError(f"{path.name}: truncated EDF data record {rec}")
            block = np.frombuffer(raw, dtype="<i2").astype(np.float64)
            out[rec * n_samples[idx] : (rec + 1) * n_samples[idx]] = block * scale + offset
    return out, int(round(rate))


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------


def load_annotations(path: str | Path) -> list[Stage | None]:
    """Read per-epoch stage labels; UNSCORED epochs come back as None."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    stages: list[Stage | None] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            token = line.strip()
            if not token:
                continue
            if token == UNSCORED_TOKEN:
                stages.append(None)
            elif token in ANNOTATION_MAP:
                stages.append(ANNOTATION_MAP[token])
            else:
                raise DataError(
                    f"{path.name}:{lineno}: unrecognized stage label {token!r} "
                    f"(expected one of {sorted(ANNOTATION_MAP)} or {UNSCORED_TOKEN})"
                )
    return stages


# ---------------------------------------------------------------------------
# Epoch segmentation
# ---------------------------------------------------------------------------


def epochize(
    record: RawRecord, annotations: list[Stage | None] | None = None
) -> list[Epoch]:
    """Cut a record into consecutive non-overlapping 30 s epochs.

    The trailing partial window is discarded. When annotations are given,
    the i-th epoch is paired with the i-th label; epochs beyond the end of
    the annotation list stay unlabeled.
    """
    epoch_len = EPOCH_SECONDS * record.sample_rate_hz
    n_epochs = record.samples.size // epoch_len
    if n_epochs == 0:
        raise DataError(
            f"record {record.subject_id!r} is shorter than one epoch "
            f"({record.samples.size} < {epoch_len} samples)"
        )
    epochs = []
    for i in range(n_epochs):
        stage = None
        if annotations is not None and i < len(annotations):
            stage = annotations[i]
        epochs.append(
            Epoch(
                samples=record.samples[i * epoch_len : (i + 1) * epoch_len],
                sample_rate_hz=record.sample_rate_hz,
                stage=stage,
                epoch_index=i,
                subject_id=record.subject_id,
            )
        )
    return epochs


# ---------------------------------------------------------------------------
# Synthetic recordings
# ---------------------------------------------------------------------------

# Band ranges used for synthesis (kept inside the analysis bands so that
# filter skirts do not blur the stage signatures).
SYNTH_BANDS = {
    "delta": (0.8, 3.5),
    "theta": (4.5, 7.5),
    "alpha": (8.5, 11.5),
    "sigma": (12.5, 15.5),
    "beta": (17.0, 30.0),
}

_BACKGROUND_UV = 1.5
_DOMINANT_UV = 20.0

# Each stage gets one dominant band rendered as a single coherent tone at a
# characteristic frequency: slow-wave sleep is delta-heavy, wakefulness
# beta-heavy, and the remaining stages take theta/sigma/alpha. Coherent
# tones produce near-uniform extremum heights, while background bands are
# incoherent multi-tone mixtures plus noise; the encoder sees that contrast
# even though it standardizes away absolute amplitude.
STAGE_PROFILES: dict[Stage, tuple[str, float]] = {
    Stage.WAKE: ("beta", 22.0),
    Stage.N1: ("theta", 5.5),
    Stage.N2: ("sigma", 13.5),
    Stage.N3: ("delta", 1.2),
    Stage.REM: ("alpha", 9.5),
}


@dataclass
class SynthSpec:
    """Declarative synthetic scenario: one record with a known hypnogram."""

    stages: list[Stage | None]
    noise_level: float = 1.0
    sample_rate_hz: int = CANONICAL_RATE_HZ
    subject_id: str = "synth"
    channel_name: str = "C4-A1"
    bursts: bool = True  # inject K-complex-like transients in N2 epochs

    def __post_init__(self):
        if not self.stages:
            raise ValueError("synthetic scenario must declare at least one epoch stage")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")


_STAGE_TOKEN_RE = re.compile(r"^([A-Za-z0-9]+)(?:\*(\d+))?$")


def parse_stage_tokens(text: str) -> list[Stage | None]:
    """Parse a stage sequence like "N3*5,Wake*5,REM" into stage labels."""
    name_map = {s.display_name.upper(): s for s in STAGE_ORDER}
    name_map.update({k: v for k, v in ANNOTATION_MAP.items()})
    out: list[Stage | None] = []
    for raw in text.replace(";", ",").split(","):
        token = raw.strip()
        if not token:
            continue
        m = _STAGE_TOKEN_RE.match(token)
        if not m:
            raise DataError(f"bad stage token {token!r}")
        name, count = m.group(1).upper(), int(m.group(2) or 1)
        if name == UNSCORED_TOKEN:
            out.extend([None] * count)
        elif name in name_map:
            out.extend([name_map[name]] * count)
        else:
            raise DataError(f"unknown stage name {m.group(1)!r}")
    if not out:
        raise DataError("empty stage sequence")
    return out


def parse_scenario(path: str | Path) -> SynthSpec:
    """Load a key/value scenario file.

    Recognized keys: stages (required), noise_level, sample_rate_hz,
    subject_id, channel, bursts. Lines starting with '#' are comments.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    kv: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise DataError(f"{path.name}:{lineno}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            kv[key.strip()] = value.strip()
    if "stages" not in kv:
        raise DataError(f"{path.name}: scenario is missing the 'stages' key")
    return SynthSpec(
        stages=parse_stage_tokens(kv["stages"]),
        noise_level=float(kv.get("noise_level", "1.0")),
        sample_rate_hz=int(kv.get("sample_rate_hz", str(CANONICAL_RATE_HZ))),
        subject_id=kv.get("subject_id", "synth"),
        channel_name=kv.get("channel", "C4-A1"),
        bursts=kv.get("bursts", "true").lower() in ("1", "true", "yes"),
    )


def synth_record(spec: SynthSpec, seed: int) -> tuple[RawRecord, list[Stage | None]]:
    """Generate a stage-dependent synthetic EEG record.

    Pure function of (spec, seed): each epoch is a mixture of band-limited
    sinusoids whose amplitudes follow the stage's band profile, plus white
    noise, plus optional K-complex-like transient bursts in N2. Unscored
    epochs get a neutral mixed-band waveform.
    """
    rng = np.random.default_rng(seed)
    fs = spec.sample_rate_hz
    epoch_len = EPOCH_SECONDS * fs
    t = np.arange(epoch_len) / fs
    pieces = []
    for stage in spec.stages:
        signal = np.zeros(epoch_len)
        dominant_band = None
        if stage is not None:
            dominant_band, tone_hz = STAGE_PROFILES[stage]
            freq = tone_hz * rng.uniform(0.92, 1.08)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            tone = _DOMINANT_UV * np.sin(2.0 * np.pi * freq * t + phase)
            if stage is Stage.N2:
                # spindle-like gating: the sigma tone comes in bursts
                tone = tone * _burst_envelope(rng, epoch_len, fs)
            signal += tone
        for band, (lo, hi) in SYNTH_BANDS.items():
            if band == dominant_band:
                continue
            freqs = rng.uniform(lo, hi, size=3)
            phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
            gains = _BACKGROUND_UV * rng.uniform(0.8, 1.2, size=3) / np.sqrt(3.0)
            for f, ph, g in zip(freqs, phases, gains):
                signal += g * np.sin(2.0 * np.pi * f * t + ph)
        signal += 2.0 * spec.noise_level * rng.standard_normal(epoch_len)
        if spec.bursts and stage is Stage.N2:
            signal += _transient_bursts(rng, epoch_len, fs)
        pieces.append(signal)
    samples = np.concatenate(pieces)
    record = RawRecord(samples, fs, spec.channel_name, spec.subject_id)
    return record, list(spec.stages)


def _burst_envelope(rng: np.random.Generator, epoch_len: int, fs: int) -> np.ndarray:
    """Smooth on/off gating with ~1 s bursts and ~40% duty cycle."""
    env = np.zeros(epoch_len)
    pos = 0
    while pos < epoch_len:
        gap = int(rng.uniform(0.8, 2.0) * fs)
        width = int(rng.uniform(0.7, 1.5) * fs)
        start = pos + gap
        if start >= epoch_len:
            break
        stop = min(start + width, epoch_len)
        env[start:stop] = np.hanning(stop - start)
        pos = stop
    return env


def _transient_bursts(rng: np.random.Generator, epoch_len: int, fs: int) -> np.ndarray:
    """K-complex-like events: 0.5-1.5 s windowed slow oscillations."""
    out = np.zeros(epoch_len)
    for _ in range(rng.integers(1, 4)):
        duration = rng.uniform(0.5, 1.5)
        width = int(duration * fs)
        start = rng.integers(0, epoch_len - width)
        tt = np.arange(width) / fs
        window = np.hanning(width)
        burst = 40.0 * np.sin(2.0 * np.pi * (1.0 / duration) * tt) * window
        out[start : start + width] += burst
    return out
