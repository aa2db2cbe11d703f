import math

import numpy as np
import pytest

from spikestage.errors import DataError, NumericError
from spikestage.filterbank import BAND_ORDER, BandId, BandSet
from spikestage.signal_io import Stage
from spikestage.spike_encoder import (
    FEATURE_COLUMNS,
    FeatureEpoch,
    HalfGaussianParams,
    Polarity,
    SpikeMask,
    accumulate,
    build_feature_epoch,
    build_feature_epoch_threshold,
    encode,
    half_gaussian,
    load_feature_epoch,
    probabilitize,
    save_feature_epoch,
    sidecar_path,
    threshold_gate,
)

# frozen from high-precision evaluation (see TestHalfGaussian.test_mpmath_grid)
RAW_DENSITY_AT_ZERO_SIGMA_HALF = 1.5957691216057308  # sqrt(2)/(0.5*sqrt(pi))
EXP_MINUS_HALF = 0.6065306597126334
EXP_MINUS_TWO = 0.1353352832366127


def oracle_masks(x):
    """Brute-force neighbor comparison, one index at a time."""
    n = len(x)
    peaks = np.zeros(n, dtype=np.uint8)
    troughs = np.zeros(n, dtype=np.uint8)
    for i in range(1, n - 1):
        if x[i - 1] < x[i] and x[i] >= x[i + 1]:
            peaks[i] = 1
        if x[i - 1] > x[i] and x[i] <= x[i + 1]:
            troughs[i] = 1
    return peaks, troughs


class TestEncode:
    def test_tiny_example(self):
        x = np.array([0.0, 1.0, 0.0, -1.0, 0.0])
        exp_peaks, exp_troughs = oracle_masks(x)
        assert encode(x, Polarity.PEAK).mask.tolist() == [0, 1, 0, 0, 0]
        assert encode(x, Polarity.TROUGH).mask.tolist() == [0, 0, 0, 1, 0]
        np.testing.assert_array_equal(encode(x, Polarity.PEAK).mask, exp_peaks)
        np.testing.assert_array_equal(encode(x, Polarity.TROUGH).mask, exp_troughs)

    def test_monotone_has_no_extrema(self):
        x = np.arange(50, dtype=float)
        assert encode(x, Polarity.PEAK).mask.sum() == 0
        assert encode(x, Polarity.TROUGH).mask.sum() == 0

    def test_constant_has_no_extrema(self):
        x = np.full(50, 3.3)
        assert encode(x, Polarity.PEAK).mask.sum() == 0
        assert encode(x, Polarity.TROUGH).mask.sum() == 0

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = int(rng.integers(10, 400))
            t = np.arange(n)
            x = np.sin(2 * np.pi * rng.uniform(0.01, 0.2) * t) + 0.5 * rng.standard_normal(n)
            exp_peaks, exp_troughs = oracle_masks(x)
            np.testing.assert_array_equal(encode(x, Polarity.PEAK).mask, exp_peaks)
            np.testing.assert_array_equal(encode(x, Polarity.TROUGH).mask, exp_troughs)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(300)
        base = encode(x, Polarity.PEAK).mask
        for c in (0.001, 3.0, 1e6):
            np.testing.assert_array_equal(encode(c * x, Polarity.PEAK).mask, base)

    def test_endpoints_never_marked(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.standard_normal(50)
            for pol in Polarity:
                mask = encode(x, pol).mask
                assert mask[0] == 0 and mask[-1] == 0

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            encode(np.array([1.0, 2.0]), Polarity.PEAK)

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            encode(np.array([1.0, np.nan, 2.0]), Polarity.PEAK)


class TestHalfGaussian:
    def test_normalized_at_zero(self):
        assert half_gaussian(0.0, HalfGaussianParams(sigma=0.5)) == 1.0

    def test_raw_density_at_zero(self):
        params = HalfGaussianParams(sigma=0.5, normalize_to_unit_peak=False)
        assert math.isclose(
            half_gaussian(0.0, params), RAW_DENSITY_AT_ZERO_SIGMA_HALF, rel_tol=1e-14
        )

    def test_normalized_at_half(self):
        value = half_gaussian(0.5, HalfGaussianParams(sigma=0.5))
        assert math.isclose(value, EXP_MINUS_HALF, rel_tol=1e-14)

    def test_negative_z_rejected(self):
        with pytest.raises(ValueError):
            half_gaussian(-0.1, HalfGaussianParams())

    def test_strictly_decreasing(self):
        params = HalfGaussianParams(sigma=0.5)
        z = np.linspace(0, 4, 500)
        w = half_gaussian(z, params)
        assert np.all(np.diff(w) < 0)
        assert np.all((w > 0) & (w <= 1.0))

    def test_mpmath_grid(self):
        # 1e-12 relative against a 50-digit oracle; values below the float64
        # underflow threshold are compared absolutely (0.0 is the correctly
        # rounded double for densities ~1e-543 at sigma=0.1, z=5).
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 50

        def close(computed, expected):
            return abs(computed - float(expected)) <= max(1e-12 * float(expected), 1e-300)

        rng = np.random.default_rng(0)
        for sigma in (0.1, 0.5, 2.0):
            z = rng.uniform(0, 5, size=200)
            raw = half_gaussian(z, HalfGaussianParams(sigma=sigma, normalize_to_unit_peak=False))
            norm = half_gaussian(z, HalfGaussianParams(sigma=sigma))
            for zi, ri, ni in zip(z, raw, norm):
                body = mpmath.exp(-(mpmath.mpf(zi) ** 2) / (2 * sigma**2))
                scale = mpmath.sqrt(2) / (sigma * mpmath.sqrt(mpmath.pi))
                assert close(ri, scale * body)
                assert close(ni, body)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            HalfGaussianParams(sigma=0.0)
        with pytest.raises(ValueError):
            HalfGaussianParams(window_size=0)


class TestProbabilitize:
    def test_zero_mask_gives_zero_train(self):
        signal = np.ones(250)
        mask = SpikeMask(Polarity.PEAK, np.zeros(250, dtype=np.uint8))
        train = probabilitize(signal, mask, HalfGaussianParams())
        np.testing.assert_array_equal(train.weighted, np.zeros(250))

    def test_single_spike_weight(self):
        signal = np.zeros(125)
        signal[60] = 42.0  # any amplitude standardizes to 1.0 alone in its window
        mask = np.zeros(125, dtype=np.uint8)
        mask[60] = 1
        train = probabilitize(signal, SpikeMask(Polarity.PEAK, mask), HalfGaussianParams(sigma=0.5))
        assert math.isclose(train.weighted[60], EXP_MINUS_TWO, rel_tol=1e-14)
        assert np.count_nonzero(train.weighted) == 1

    def test_matches_bruteforce_weighting(self):
        rng = np.random.default_rng(3)
        params = HalfGaussianParams(sigma=0.5, window_size=50)
        signal = rng.standard_normal(200) * 30.0
        mask_obj = encode(signal, Polarity.PEAK)
        train = probabilitize(signal, mask_obj, params)

        expected = np.zeros(200)
        for w_start in range(0, 200, 50):
            window = slice(w_start, w_start + 50)
            amps = np.abs(signal[window]) * mask_obj.mask[window]
            peak = amps.max()
            if peak == 0:
                continue
            for j in np.nonzero(amps)[0]:
                z = amps[j] / peak
                expected[w_start + j] = math.exp(-z * z / (2 * 0.25)) * z
        np.testing.assert_allclose(train.weighted, expected, rtol=1e-14, atol=0)

    def test_zero_exactly_off_mask(self):
        rng = np.random.default_rng(4)
        signal = rng.standard_normal(375)
        mask_obj = encode(signal, Polarity.TROUGH)
        train = probabilitize(signal, mask_obj, HalfGaussianParams())
        assert np.all(train.weighted[mask_obj.mask == 0] == 0.0)
        assert np.all(train.weighted >= 0)

    def test_larger_amplitude_gets_smaller_weight(self):
        # two spikes in one window: the bigger one must carry the smaller f
        signal = np.zeros(125)
        signal[30] = 10.0
        signal[80] = 20.0
        mask = np.zeros(125, dtype=np.uint8)
        mask[[30, 80]] = 1
        train = probabilitize(signal, SpikeMask(Polarity.PEAK, mask), HalfGaussianParams())
        f_small = train.weighted[30] / 0.5  # z = 0.5
        f_large = train.weighted[80] / 1.0  # z = 1.0
        assert f_large < f_small

    def test_length_mismatch(self):
        mask = SpikeMask(Polarity.PEAK, np.zeros(10, dtype=np.uint8))
        with pytest.raises(ValueError, match="mismatch"):
            probabilitize(np.zeros(11), mask, HalfGaussianParams(window_size=5))

    def test_window_larger_than_signal(self):
        mask = SpikeMask(Polarity.PEAK, np.zeros(10, dtype=np.uint8))
        with pytest.raises(ValueError, match="window_size"):
            probabilitize(np.zeros(10), mask, HalfGaussianParams(window_size=125))


class TestThresholdGate:
    def _spiky_signal(self, rng, n=250):
        signal = rng.standard_normal(n) * 10.0
        mask_obj = encode(signal, Polarity.PEAK)
        return signal, mask_obj

    def test_cutoff_one_keeps_only_window_maxima(self):
        signal = np.zeros(250)
        signal[[20, 60]] = (5.0, 9.0)
        signal[[150, 200]] = (7.0, 3.0)
        mask = np.zeros(250, dtype=np.uint8)
        mask[[20, 60, 150, 200]] = 1
        train = threshold_gate(signal, SpikeMask(Polarity.PEAK, mask), cutoff=1.0, window_size=125)
        assert np.nonzero(train.weighted)[0].tolist() == [60, 150]
        assert train.weighted[60] == 1.0 and train.weighted[150] == 1.0

    def test_tiny_cutoff_keeps_all_spikes(self):
        rng = np.random.default_rng(5)
        signal, mask_obj = self._spiky_signal(rng)
        train = threshold_gate(signal, mask_obj, cutoff=1e-12, window_size=125)
        marked = mask_obj.mask == 1
        assert np.all(train.weighted[marked] > 0)

    def test_cutoff_out_of_range(self):
        mask = SpikeMask(Polarity.PEAK, np.zeros(10, dtype=np.uint8))
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                threshold_gate(np.zeros(10), mask, cutoff=bad, window_size=5)


class TestAccumulate:
    def test_constant_input(self):
        values = np.full(50, 0.1)
        out = accumulate(values, width=25)
        np.testing.assert_allclose(out, [2.5, 2.5])

    def test_zero_train(self):
        np.testing.assert_array_equal(accumulate(np.zeros(100), 25), np.zeros(4))

    def test_mass_conservation(self):
        rng = np.random.default_rng(6)
        values = rng.random(3750)
        out = accumulate(values, 25)
        assert out.size == 150
        assert abs(out.sum() - values.sum()) <= 1e-12 * values.sum()

    def test_within_window_permutation_invariance(self):
        rng = np.random.default_rng(7)
        values = rng.random(100)
        shuffled = values.reshape(4, 25).copy()
        for row in shuffled:
            rng.shuffle(row)
        np.testing.assert_allclose(
            accumulate(values, 25), accumulate(shuffled.reshape(-1), 25), rtol=1e-15
        )

    def test_indivisible_length_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            accumulate(np.zeros(60), 25)


def make_bandset(delta=None, n=3750, stage=Stage.N3):
    bands = {band: np.zeros(n) for band in BAND_ORDER}
    if delta is not None:
        bands[BandId.DELTA] = delta
    return BandSet(bands=bands, epoch_index=0, subject_id="s0", stage=stage)


class TestFeatureEpoch:
    def test_zero_bandset(self):
        fe = build_feature_epoch(make_bandset())
        assert fe.features.shape == (150, 10)
        np.testing.assert_array_equal(fe.features, np.zeros((150, 10)))
        assert fe.stage is Stage.N3

    def test_shape_at_125_hz(self, small_labeled_epochs):
        from spikestage.filterbank import decompose

        fe = build_feature_epoch(decompose(small_labeled_epochs[0]))
        assert fe.features.shape == (150, 10)
        assert fe.columns == FEATURE_COLUMNS

    def test_pulse_lands_in_expected_rows(self):
        delta = np.zeros(3750)
        ramp = np.linspace(0.0, 1.0, 6)
        delta[1000:1006] = ramp
        delta[1005:1011] = ramp[::-1]
        fe = build_feature_epoch(make_bandset(delta=delta))
        peak_col = fe.features[:, 0]  # (delta, peak)
        nonzero_rows = set(np.nonzero(peak_col)[0].tolist())
        assert nonzero_rows and nonzero_rows <= {40, 41}
        assert np.all(fe.features[:, 1:] == 0)

    def test_column_order_is_band_major(self):
        assert FEATURE_COLUMNS[:4] == ("delta_peak", "delta_trough", "theta_peak", "theta_trough")
        assert FEATURE_COLUMNS[-2:] == ("beta_peak", "beta_trough")

    def test_threshold_support_subset_of_half_gaussian(self):
        rng = np.random.default_rng(8)
        delta = rng.standard_normal(3750) * 20.0
        bands = make_bandset(delta=delta)
        fe_hg = build_feature_epoch(bands)
        fe_th = build_feature_epoch_threshold(bands, cutoff=0.5)
        support_hg = set(map(tuple, np.argwhere(fe_hg.features > 0)))
        support_th = set(map(tuple, np.argwhere(fe_th.features > 0)))
        assert support_th <= support_hg

    def test_determinism(self, small_labeled_epochs):
        from spikestage.filterbank import decompose

        bands = decompose(small_labeled_epochs[3])
        a = build_feature_epoch(bands)
        b = build_feature_epoch(bands)
        np.testing.assert_array_equal(a.features, b.features)

    def test_provenance_recorded(self):
        bands = make_bandset()
        assert build_feature_epoch(bands).params["arm"] == "half_gaussian"
        th = build_feature_epoch_threshold(bands, cutoff=0.25)
        assert th.params["arm"] == "threshold"
        assert th.params["cutoff"] == 0.25


class TestFeatureFiles:
    def _random_feature(self, rng, t=150):
        matrix = rng.random((t, 10)).astype(np.float32).astype(np.float64)
        return FeatureEpoch(matrix, Stage.REM, "subjX", 7, params={"arm": "half_gaussian"})

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        fe = self._random_feature(rng)
        path = tmp_path / "ep.feat"
        save_feature_epoch(fe, path)
        loaded = load_feature_epoch(path)
        np.testing.assert_array_equal(loaded.features, fe.features)
        assert loaded.stage is Stage.REM
        assert loaded.subject_id == "subjX"
        assert loaded.epoch_index == 7
        assert loaded.params == {"arm": "half_gaussian"}
        # saving the loaded copy reproduces identical bytes
        path2 = tmp_path / "ep2.feat"
        save_feature_epoch(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()
        assert sidecar_path(path).exists()

    def test_unlabeled_stage_round_trip(self, tmp_path):
        fe = FeatureEpoch(np.zeros((150, 10)), None, "s", 0)
        path = tmp_path / "u.feat"
        save_feature_epoch(fe, path)
        assert load_feature_epoch(path).stage is None

    def test_truncated_file(self, tmp_path):
        rng = np.random.default_rng(10)
        fe = self._random_feature(rng)
        path = tmp_path / "ep.feat"
        save_feature_epoch(fe, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataError, match="bytes"):
            load_feature_epoch(path)

    def test_missing_sidecar(self, tmp_path):
        path = tmp_path / "ep.feat"
        path.write_bytes(b"\x00" * 6000)
        with pytest.raises(DataError, match="sidecar"):
            load_feature_epoch(path)
