"""Band-pass front filter and the five-band physiological decomposition.

All filters are Butterworth, realized as cascades of second-order sections
and applied forward-backward (zero phase) so that extremum positions are
not shifted before spike extraction. "Order" always means the overall
filter order (pole count): an order-8 bandpass is 4 biquads.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import NumericError
from .signal_io import Epoch, Stage


class BandId(enum.Enum):
    """The five EEG sub-bands, with nominal edges in Hz."""

    DELTA = ("delta", 0.0, 4.0)
    THETA = ("theta", 4.0, 8.0)
    ALPHA = ("alpha", 8.0, 12.0)
    SIGMA = ("sigma", 12.0, 16.0)
    BETA = ("beta", 16.0, 32.0)

    @property
    def label(self) -> str:
        return self.value[0]

    @property
    def low_hz(self) -> float:
        return self.value[1]

    @property
    def high_hz(self) -> float:
        return self.value[2]


BAND_ORDER = (BandId.DELTA, BandId.THETA, BandId.ALPHA, BandId.SIGMA, BandId.BETA)


@dataclass(frozen=True)
class FilterSpec:
    """Design request for one Butterworth filter."""

    kind: str  # "bandpass" or "lowpass"
    order: int
    low_hz: float
    high_hz: float
    sample_rate_hz: int

    def __post_init__(self):
        if self.kind not in ("bandpass", "lowpass"):
            raise ValueError(f"unsupported filter kind {self.kind!r}")
        if self.order < 2 or self.order % 2 != 0:
            raise ValueError(f"order must be a positive even integer, got {self.order}")
        nyquist = self.sample_rate_hz / 2.0
        if self.kind == "lowpass" and self.low_hz != 0.0:
            raise ValueError("lowpass filters must have low_hz = 0")
        if not (0.0 <= self.low_hz < self.high_hz < nyquist):
            raise ValueError(
                f"invalid edges: need 0 <= low ({self.low_hz}) < high ({self.high_hz}) "
                f"< Nyquist ({nyquist})"
            )


@dataclass(frozen=True)
class FilterbankConfig:
    """Front filter and sub-band design parameters (run-config surface)."""

    family: str = "butterworth"
    front_low_hz: float = 0.5
    front_high_hz: float = 35.0
    front_order: int = 8
    band_order: int = 8

    def __post_init__(self):
        if self.family != "butterworth":
            raise ValueError(f"unsupported filter family {self.family!r}")


DEFAULT_FILTERBANK = FilterbankConfig()


def design_filter(spec: FilterSpec) -> np.ndarray:
    """Design a Butterworth SOS cascade for the given spec.

    Returns an (order/2, 6) array of [b0 b1 b2 a0 a1 a2] rows. Every
    section is verified stable (poles strictly inside the unit circle)
    before the cascade is returned.
    """
    return _design_cached(spec).copy()  # scipy's sosfilt needs writable coefficients


@functools.lru_cache(maxsize=64)
def _design_cached(spec: FilterSpec) -> np.ndarray:
    nyquist = spec.sample_rate_hz / 2.0
    if spec.kind == "lowpass":
        sos = sps.butter(spec.order, spec.high_hz / nyquist, btype="lowpass", output="sos")
    else:
        # scipy doubles the prototype order for bandpass designs
        sos = sps.butter(
            spec.order // 2,
            [spec.low_hz / nyquist, spec.high_hz / nyquist],
            btype="bandpass",
            output="sos",
        )
    for section in sos:
        poles = np.roots([1.0, section[4], section[5]])
        if np.any(np.abs(poles) >= 1.0):
            raise ValueError(f"unstable section in designed cascade: {section}")
    sos.setflags(write=False)
    return sos


def cascade_order(sos: np.ndarray) -> int:
    return 2 * sos.shape[0]


def dump_coefficients(sos: np.ndarray, path) -> None:
    """Write one section per line as 'b0 b1 b2 a1 a2' decimal text (a0 = 1)."""
    with open(path, "w", encoding="utf-8") as fh:
        for b0, b1, b2, a0, a1, a2 in sos:
            values = (b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0)
            fh.write(" ".join(repr(float(v)) for v in values) + "\n")


def apply_filter(sos: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Zero-phase (forward-backward) application of an SOS cascade.

    Edges are reflect-padded with 3x the filter order on each side to
    bound startup transients.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise NumericError("apply_filter: input contains non-finite samples")
    padlen = min(3 * cascade_order(sos), samples.size - 1)
    return sps.sosfiltfilt(sos, samples, padtype="even", padlen=padlen)


def band_filter_spec(band: BandId, sample_rate_hz: int, order: int) -> FilterSpec:
    """Design spec for one sub-band; delta is a lowpass (its low edge is 0)."""
    if band.low_hz == 0.0:
        return FilterSpec("lowpass", order, 0.0, band.high_hz, sample_rate_hz)
    return FilterSpec("bandpass", order, band.low_hz, band.high_hz, sample_rate_hz)


@dataclass
class BandSet:
    """The five band-filtered versions of one epoch."""

    bands: dict[BandId, np.ndarray]
    epoch_index: int
    subject_id: str
    stage: Stage | None = None
    sample_rate_hz: int = 0

    def __post_init__(self):
        if set(self.bands) != set(BAND_ORDER):
            missing = [b.label for b in BAND_ORDER if b not in self.bands]
            raise ValueError(f"BandSet must hold all five bands; missing {missing}")
        lengths = {b: v.shape for b, v in self.bands.items()}
        if len(set(lengths.values())) != 1:
            raise ValueError(f"band sequences differ in length: {lengths}")
        for band, values in self.bands.items():
            if not np.all(np.isfinite(values)):
                raise NumericError(f"non-finite values in {band.label} band")

    @property
    def length(self) -> int:
        return next(iter(self.bands.values())).size


def decompose(epoch: Epoch, config: FilterbankConfig = DEFAULT_FILTERBANK) -> BandSet:
    """Front band-pass once, then each sub-band filter on the result."""
    front = design_filter(
        FilterSpec(
            "bandpass",
            config.front_order,
            config.front_low_hz,
            config.front_high_hz,
            epoch.sample_rate_hz,
        )
    )
    base = apply_filter(front, epoch.samples)
    bands = {}
    for band in BAND_ORDER:
        sos = design_filter(band_filter_spec(band, epoch.sample_rate_hz, config.band_order))
        bands[band] = apply_filter(sos, base)
    return BandSet(
        bands=bands,
        epoch_index=epoch.epoch_index,
        subject_id=epoch.subject_id,
        stage=epoch.stage,
        sample_rate_hz=epoch.sample_rate_hz,
    )
