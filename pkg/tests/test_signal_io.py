import numpy as np
import pytest

from spikestage.errors import DataError
from spikestage.signal_io import (
    ACCUMULATION_WIDTH,
    ANNOTATION_MAP,
    RawRecord,
    Stage,
    SynthSpec,
    epochize,
    ingest_record,
    load_annotations,
    parse_scenario,
    parse_stage_tokens,
    synth_record,
)


def band_power(x, fs, low, high):
    """Independent periodogram oracle: mean |FFT|^2 inside the band."""
    spectrum = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), d=1.0 / fs)
    sel = (freqs >= low) & (freqs < high)
    return spectrum[sel].sum()


class TestCsvIngestion:
    def test_plain_csv(self, tmp_path):
        path = tmp_path / "rec.csv"
        values = np.linspace(-1, 1, 3750)
        path.write_text("\n".join(repr(float(v)) for v in values) + "\n")
        record = ingest_record(path, "C4-A1", "csv", sample_rate_hz=125)
        assert record.samples.shape == (3750,)
        assert record.sample_rate_hz == 125
        assert record.subject_id == "rec"
        np.testing.assert_allclose(record.samples, values, rtol=0, atol=0)

    def test_header_line_skipped(self, tmp_path):
        path = tmp_path / "rec.csv"
        path.write_text("amplitude_uv\n1.0\n2.0\n")
        record = ingest_record(path, "C4-A1", "csv", sample_rate_hz=125)
        assert record.samples.tolist() == [1.0, 2.0]

    def test_bad_value_mid_file(self, tmp_path):
        path = tmp_path / "rec.csv"
        path.write_text("1.0\nbogus\n")
        with pytest.raises(DataError, match="bogus"):
            ingest_record(path, "C4-A1", "csv", sample_rate_hz=125)

    def test_non_finite_sample_rejected(self, tmp_path):
        path = tmp_path / "rec.csv"
        path.write_text("1.0\nnan\n")
        with pytest.raises(DataError):
            ingest_record(path, "C4-A1", "csv", sample_rate_hz=125)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ingest_record(tmp_path / "absent.csv", "C4-A1", "csv", sample_rate_hz=125)

    def test_rate_mismatch_and_resample(self, tmp_path):
        path = tmp_path / "rec.csv"
        path.write_text("\n".join("0.5" for _ in range(1000)) + "\n")
        with pytest.raises(DataError, match="rate"):
            ingest_record(path, "C4-A1", "csv", sample_rate_hz=100, expected_rate_hz=125)
        record = ingest_record(
            path, "C4-A1", "csv", sample_rate_hz=100, expected_rate_hz=125, resample=True
        )
        assert record.sample_rate_hz == 125
        assert record.samples.size == 1250


class TestEdfIngestion:
    def test_channel_selection(self, edf_factory):
        rng = np.random.default_rng(0)
        fs = 125
        c4 = 50 * np.sin(2 * np.pi * 3 * np.arange(fs * 4) / fs)
        c3 = 20 * rng.standard_normal(fs * 4)
        path = edf_factory(channels={"C4-A1": c4, "C3-A2": c3}, sample_rate_hz=fs)
        record = ingest_record(path, "C3-A2", "edf")
        assert record.channel_name == "C3-A2"
        assert record.sample_rate_hz == fs
        assert record.samples.size == c3.size
        # int16 quantization of the +-250 uV range
        np.testing.assert_allclose(record.samples, c3, atol=500 / 65535 + 1e-9)

    def test_absent_channel(self, edf_factory):
        path = edf_factory(
            channels={"C4-A1": np.zeros(125), "C3-A2": np.zeros(125)}, sample_rate_hz=125
        )
        with pytest.raises(DataError, match="EMG"):
            ingest_record(path, "EMG", "edf")

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.edf"
        path.write_bytes(b"not an edf file at all")
        with pytest.raises(DataError):
            ingest_record(path, "C4-A1", "edf")


class TestAnnotations:
    def test_six_class_merge(self, tmp_path):
        path = tmp_path / "ann.txt"
        path.write_text("W\nS1\nS2\nS3\nS4\nREM\n")
        assert load_annotations(path) == [
            Stage.WAKE, Stage.N1, Stage.N2, Stage.N3, Stage.N3, Stage.REM,
        ]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "ann.txt"
        path.write_text("")
        assert load_annotations(path) == []

    def test_unscored_token(self, tmp_path):
        path = tmp_path / "ann.txt"
        path.write_text("W\nUNSCORED\nREM\n")
        assert load_annotations(path) == [Stage.WAKE, None, Stage.REM]

    def test_unknown_label(self, tmp_path):
        path = tmp_path / "ann.txt"
        path.write_text("S5\n")
        with pytest.raises(DataError, match="S5"):
            load_annotations(path)

    def test_remap_is_total_and_idempotent(self):
        # every legacy token maps into the 5-stage set, and display names of
        # the 5 stages parse back to themselves
        assert set(ANNOTATION_MAP.values()) == set(Stage)
        for stage in Stage:
            assert parse_stage_tokens(stage.display_name) == [stage]


class TestEpochize:
    def _record(self, n, fs=125):
        return RawRecord(np.arange(n, dtype=float), fs, "C4-A1", "s0")

    def test_exact_two_epochs(self):
        epochs = epochize(self._record(7500))
        assert len(epochs) == 2
        assert all(e.samples.size == 3750 for e in epochs)

    def test_trailing_sample_discarded(self):
        epochs = epochize(self._record(7501))
        assert len(epochs) == 2

    def test_too_short(self):
        with pytest.raises(DataError, match="shorter"):
            epochize(self._record(3000))

    def test_concatenation_reproduces_prefix(self):
        record = self._record(8000)
        epochs = epochize(record)
        rebuilt = np.concatenate([e.samples for e in epochs])
        np.testing.assert_array_equal(rebuilt, record.samples[: rebuilt.size])

    def test_annotation_pairing(self):
        epochs = epochize(self._record(7500), [Stage.N2, Stage.REM])
        assert [e.stage for e in epochs] == [Stage.N2, Stage.REM]
        assert [e.epoch_index for e in epochs] == [0, 1]

    def test_length_always_divisible_by_accum_width(self):
        for fs in (100, 125, 250):
            epochs = epochize(self._record(fs * 65, fs=fs))
            assert all(e.samples.size % ACCUMULATION_WIDTH == 0 for e in epochs)


class TestSynth:
    def test_deterministic(self):
        spec = SynthSpec(stages=[Stage.N3] * 5 + [Stage.WAKE] * 5)
        rec_a, lab_a = synth_record(spec, seed=7)
        rec_b, lab_b = synth_record(spec, seed=7)
        np.testing.assert_array_equal(rec_a.samples, rec_b.samples)
        assert lab_a == lab_b
        rec_c, _ = synth_record(spec, seed=8)
        assert not np.array_equal(rec_a.samples, rec_c.samples)

    def test_stage_dependent_band_power(self):
        spec = SynthSpec(stages=[Stage.N3, Stage.WAKE])
        record, _ = synth_record(spec, seed=3)
        fs = record.sample_rate_hz
        n3 = record.samples[: 30 * fs]
        wake = record.samples[30 * fs :]
        assert band_power(n3, fs, 0, 4) / band_power(n3, fs, 16, 32) > 5
        assert band_power(wake, fs, 16, 32) / band_power(wake, fs, 0, 4) > 5

    def test_empty_stage_sequence_rejected(self):
        with pytest.raises(ValueError):
            SynthSpec(stages=[])

    def test_unscored_epochs_supported(self):
        spec = SynthSpec(stages=[Stage.WAKE, None])
        record, labels = synth_record(spec, seed=0)
        assert labels == [Stage.WAKE, None]
        assert record.samples.size == 2 * 30 * record.sample_rate_hz


class TestScenarioParsing:
    def test_stage_tokens_with_repeats(self):
        assert parse_stage_tokens("N3*2, Wake, UNSCORED") == [
            Stage.N3, Stage.N3, Stage.WAKE, None,
        ]

    def test_legacy_tokens(self):
        assert parse_stage_tokens("S3,S4") == [Stage.N3, Stage.N3]

    def test_bad_token(self):
        with pytest.raises(DataError):
            parse_stage_tokens("N9")

    def test_scenario_file(self, tmp_path):
        path = tmp_path / "scenario.txt"
        path.write_text(
            "# desk-scale scenario\n"
            "stages = N3*3,Wake*3\n"
            "noise_level = 0.5\n"
            "subject_id = demo\n"
        )
        spec = parse_scenario(path)
        assert spec.stages == [Stage.N3] * 3 + [Stage.WAKE] * 3
        assert spec.noise_level == 0.5
        assert spec.subject_id == "demo"

    def test_scenario_missing_stages(self, tmp_path):
        path = tmp_path / "scenario.txt"
        path.write_text("noise_level = 1.0\n")
        with pytest.raises(DataError, match="stages"):
            parse_scenario(path)
