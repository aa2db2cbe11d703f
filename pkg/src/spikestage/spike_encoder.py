"""Adaptive spike-train feature encoding.

Each band-filtered sequence is reduced to sparse extremum events in three
steps: mark local peaks/troughs where the discrete derivative changes
sign, weight each marked amplitude by a half-Gaussian density after
standardizing it against the largest marked amplitude in its local
window, and sum the weighted events over non-overlapping windows of 25
samples. Five bands x two polarities yields a 10-column feature matrix
per epoch (150 rows at 125 Hz).

A hard-gate variant (keep standardized amplitudes above a fixed cutoff,
drop the rest, no density weighting) is provided for controlled
comparisons against the adaptive weighting.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, NumericError
from .filterbank import BAND_ORDER, BandId, BandSet
from .signal_io import ACCUMULATION_WIDTH, Stage


class Polarity(enum.Enum):
    PEAK = "peak"
    TROUGH = "trough"


FEATURE_COLUMNS = tuple(
    f"{band.label}_{pol.value}" for band in BAND_ORDER for pol in (Polarity.PEAK, Polarity.TROUGH)
)


@dataclass(frozen=True)
class HalfGaussianParams:
    """Parameters of the amplitude-weighting stage.

    sigma is the half-Gaussian scale; window_size is the span (in samples)
    over which marked amplitudes are standardized before weighting. With
    normalize_to_unit_peak the density is rescaled so its value at 0 is
    exactly 1, keeping weights in (0, 1]; otherwise the raw density
    sqrt(2)/(sigma*sqrt(pi)) * exp(-z^2 / (2 sigma^2)) is used.
    """

    mu: float = 0.0  # location; kept for config parity, the density is centered at 0
    sigma: float = 0.5
    window_size: int = 125
    normalize_to_unit_peak: bool = True

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")

    def as_dict(self) -> dict:
        return {
            "mu": self.mu,
            "sigma": self.sigma,
            "window_size": self.window_size,
            "normalize_to_unit_peak": self.normalize_to_unit_peak,
        }


@dataclass
class SpikeMask:
    """Binary extremum mask for one band signal and one polarity."""

    polarity: Polarity
    mask: np.ndarray  # uint8 in {0, 1}, same length as the source signal
    band: BandId | None = None


@dataclass
class SpikeTrain:
    """Weighted spike amplitudes; zero everywhere off the mask."""

    polarity: Polarity
    weighted: np.ndarray
    band: BandId | None = None


def encode(signal: np.ndarray, polarity: Polarity, band: BandId | None = None) -> SpikeMask:
    """Mark local extrema of the requested polarity via derivative sign changes.

    An interior index i is a peak when the difference sequence d crosses
    from d[i-1] > 0 to d[i] <= 0, and a trough on the opposite crossing.
    Plateaus mark only their first sample (no strict sign precedes the
    rest), and the first/last samples are never marked.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or signal.size < 3:
        raise ValueError(f"encode needs a 1-D signal of length >= 3, got shape {signal.shape}")
    if not np.all(np.isfinite(signal)):
        raise NumericError("encode: input contains non-finite values")
    d = np.diff(signal)
    mask = np.zeros(signal.size, dtype=np.uint8)
    if polarity is Polarity.PEAK:
        mask[1:-1] = (d[:-1] > 0) & (d[1:] <= 0)
    else:
        mask[1:-1] = (d[:-1] < 0) & (d[1:] >= 0)
    return SpikeMask(polarity=polarity, mask=mask, band=band)


def half_gaussian(z, params: HalfGaussianParams):
    """Half-Gaussian weight for non-negative amplitude(s) z.

    Normalized form returns exp(-z^2 / (2 sigma^2)) in (0, 1]; the raw
    density multiplies that by sqrt(2) / (sigma * sqrt(pi)).
    """
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < 0):
        raise ValueError("half_gaussian is defined for z >= 0 only")
    out = np.exp(-(z * z) / (2.0 * params.sigma * params.sigma))
    if not params.normalize_to_unit_peak:
        out = out * (math.sqrt(2.0) / (params.sigma * math.sqrt(math.pi)))
    return out if out.ndim else float(out)


def _standardize_per_window(amplitudes: np.ndarray, window_size: int) -> np.ndarray:
    """Divide by the max amplitude within each non-overlapping window.

    Windows without any marked spike (max 0) pass through as zeros. The
    last window may be shorter when the length is not a multiple.
    """
    n = amplitudes.size
    starts = np.arange(0, n, window_size)
    maxima = np.maximum.reduceat(amplitudes, starts)
    counts = np.diff(np.append(starts, n))
    per_sample_max = np.repeat(maxima, counts)
    out = np.zeros_like(amplitudes)
    np.divide(amplitudes, per_sample_max, out=out, where=per_sample_max > 0)
    return out


def probabilitize(
    signal: np.ndarray, mask: SpikeMask, params: HalfGaussianParams
) -> SpikeTrain:
    """Weight masked extremum amplitudes by the half-Gaussian density.

    Amplitudes are taken as absolute values (trough amplitudes are
    negative but the density is defined on z >= 0), standardized against
    the largest marked amplitude within each window of `window_size`
    samples, and then each spike contributes f(z) * z.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape != mask.mask.shape:
        raise ValueError(
            f"signal and mask length mismatch: {signal.shape} vs {mask.mask.shape}"
        )
    if params.window_size > signal.size:
        raise ValueError(
            f"window_size {params.window_size} exceeds signal length {signal.size}"
        )
    amp = np.abs(signal) * mask.mask
    z = _standardize_per_window(amp, params.window_size)
    weighted = half_gaussian(z, params) * z
    weighted[mask.mask == 0] = 0.0
    return SpikeTrain(polarity=mask.polarity, weighted=weighted, band=mask.band)


def threshold_gate(
    signal: np.ndarray, mask: SpikeMask, cutoff: float, window_size: int = 125
) -> SpikeTrain:
    """Fixed-cutoff control arm: no density weighting.

    Standardized amplitudes at or above `cutoff` contribute their raw
    standardized value; everything below is dropped.
    """
    if not (0.0 < cutoff <= 1.0):
        raise ValueError(f"cutoff must be in (0, 1], got {cutoff}")
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape != mask.mask.shape:
        raise ValueError(
            f"signal and mask length mismatch: {signal.shape} vs {mask.mask.shape}"
        )
    amp = np.abs(signal) * mask.mask
    z = _standardize_per_window(amp, window_size)
    weighted = np.where(z >= cutoff, z, 0.0)
    weighted[mask.mask == 0] = 0.0
    return SpikeTrain(polarity=mask.polarity, weighted=weighted, band=mask.band)


def accumulate(train: SpikeTrain | np.ndarray, width: int = ACCUMULATION_WIDTH) -> np.ndarray:
    """Sum weighted spikes over non-overlapping windows of `width` samples."""
    values = train.weighted if isinstance(train, SpikeTrain) else np.asarray(train, dtype=np.float64)
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    if values.size % width != 0:
        raise ValueError(
            f"train length {values.size} is not divisible by the window width {width}"
        )
    return values.reshape(-1, width).sum(axis=1)


@dataclass
class FeatureEpoch:
    """Accumulated feature matrix (T x 10) for one epoch.

    Column order is fixed band-major, peak before trough:
    delta_peak, delta_trough, theta_peak, ..., beta_trough.
    """

    features: np.ndarray
    stage: Stage | None
    subject_id: str
    epoch_index: int
    params: dict = field(default_factory=dict)

    columns = FEATURE_COLUMNS

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] != len(FEATURE_COLUMNS):
            raise ValueError(
                f"features must be (T, {len(FEATURE_COLUMNS)}), got {self.features.shape}"
            )
        if not np.all(np.isfinite(self.features)):
            raise NumericError("feature matrix contains non-finite entries")


def _assemble(bands: BandSet, columns: list[np.ndarray], params: dict) -> FeatureEpoch:
    return FeatureEpoch(
        features=np.column_stack(columns),
        stage=bands.stage,
        subject_id=bands.subject_id,
        epoch_index=bands.epoch_index,
        params=params,
    )


def build_feature_epoch(
    bands: BandSet,
    params: HalfGaussianParams = HalfGaussianParams(),
    accum_width: int = ACCUMULATION_WIDTH,
) -> FeatureEpoch:
    """Adaptive arm: encode -> probabilitize -> accumulate for all 10 sequences."""
    columns = []
    for band in BAND_ORDER:
        x = bands.bands[band]
        for polarity in (Polarity.PEAK, Polarity.TROUGH):
            mask = encode(x, polarity, band)
            train = probabilitize(x, mask, params)
            columns.append(accumulate(train, accum_width))
    provenance = {"arm": "half_gaussian", "accum_width": accum_width, **params.as_dict()}
    return _assemble(bands, columns, provenance)


def build_feature_epoch_threshold(
    bands: BandSet,
    cutoff: float = 0.5,
    window_size: int = 125,
    accum_width: int = ACCUMULATION_WIDTH,
) -> FeatureEpoch:
    """Control arm: identical pipeline with the hard amplitude gate."""
    columns = []
    for band in BAND_ORDER:
        x = bands.bands[band]
        for polarity in (Polarity.PEAK, Polarity.TROUGH):
            mask = encode(x, polarity, band)
            train = threshold_gate(x, mask, cutoff, window_size)
            columns.append(accumulate(train, accum_width))
    provenance = {
        "arm": "threshold",
        "cutoff": cutoff,
        "window_size": window_size,
        "accum_width": accum_width,
    }
    return _assemble(bands, columns, provenance)


# ---------------------------------------------------------------------------
# Feature files: little-endian float32, row-major, with a JSON sidecar
# ---------------------------------------------------------------------------


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".meta.json")


def save_feature_epoch(fe: FeatureEpoch, path: str | Path) -> None:
    """Write the matrix as raw '<f4' bytes plus a .meta.json sidecar."""
    path = Path(path)
    data = np.ascontiguousarray(fe.features, dtype="<f4")
    path.write_bytes(data.tobytes())
    meta = {
        "subject_id": fe.subject_id,
        "epoch_index": fe.epoch_index,
        "stage": fe.stage.display_name if fe.stage is not None else None,
        "T": int(fe.features.shape[0]),
        "columns": list(FEATURE_COLUMNS),
        "params": fe.params,
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


_STAGE_BY_NAME = {s.display_name: s for s in Stage}


def load_feature_epoch(path: str | Path) -> FeatureEpoch:
    """Read a feature file and its sidecar back into a FeatureEpoch."""
    path = Path(path)
    meta_file = sidecar_path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if not meta_file.exists():
        raise DataError(f"missing sidecar {meta_file.name} for {path.name}")
    try:
        meta = json.loads(meta_file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{meta_file.name}: invalid JSON: {exc}")
    t = int(meta["T"])
    raw = path.read_bytes()
    expected = t * len(FEATURE_COLUMNS) * 4
    if len(raw) != expected:
        raise DataError(
            f"{path.name}: expected {expected} bytes for T={t}, found {len(raw)}"
        )
    features = np.frombuffer(raw, dtype="<f4").reshape(t, len(FEATURE_COLUMNS))
    stage = _STAGE_BY_NAME[meta["stage"]] if meta.get("stage") is not None else None
    return FeatureEpoch(
        features=features.astype(np.float64),
        stage=stage,
        subject_id=meta["subject_id"],
        epoch_index=int(meta["epoch_index"]),
        params=meta.get("params", {}),
    )
