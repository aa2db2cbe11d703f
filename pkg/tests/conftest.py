import struct

import numpy as np
import pytest

from spikestage.signal_io import Stage, SynthSpec, epochize, synth_record


def write_edf(path, channels: dict[str, np.ndarray], sample_rate_hz: int,
              record_duration_s: float = 1.0, phys_range: float = 250.0):
    """Minimal EDF writer used to exercise the reader.

    Each channel must hold a whole number of data records. Physical range
    is symmetric (+-phys_range) mapped onto the full int16 digital range.
    """
    labels = list(channels)
    ns = len(labels)
    samples_per_record = int(sample_rate_hz * record_duration_s)
    lengths = {len(v) for v in channels.values()}
    assert len(lengths) == 1, "all channels must share a length"
    total = lengths.pop()
    assert total % samples_per_record == 0
    n_records = total // samples_per_record

    def pad(text, width):
        encoded = str(text).encode("ascii")
        assert len(encoded) <= width
        return encoded + b" " * (width - len(encoded))

    header = b"".join([
        pad(0, 8), pad("X", 80), pad("X", 80),
        pad("01.01.20", 8), pad("00.00.00", 8),
        pad(256 + ns * 256, 8), pad("", 44),
        pad(n_records, 8), pad(record_duration_s, 8), pad(ns, 4),
    ])
    sig = b"".join(pad(lbl, 16) for lbl in labels)
    sig += b"".join(pad("", 80) for _ in labels)
    sig += b"".join(pad("uV", 8) for _ in labels)
    sig += b"".join(pad(-phys_range, 8) for _ in labels)
    sig += b"".join(pad(phys_range, 8) for _ in labels)
    sig += b"".join(pad(-32768, 8) for _ in labels)
    sig += b"".join(pad(32767, 8) for _ in labels)
    sig += b"".join(pad("", 80) for _ in labels)
    sig += b"".join(pad(samples_per_record, 8) for _ in labels)
    sig += b"".join(pad("", 32) for _ in labels)

    scale = (2 * phys_range) / (32767 - (-32768))
    offset = phys_range - scale * 32767
    body = bytearray()
    for rec in range(n_records):
        for lbl in labels:
            chunk = channels[lbl][rec * samples_per_record : (rec + 1) * samples_per_record]
            digital = np.round((chunk - offset) / scale).astype(np.int16)
            body += struct.pack(f"<{samples_per_record}h", *digital)
    path.write_bytes(header + sig + bytes(body))
    return path


@pytest.fixture
def edf_factory(tmp_path):
    def make(name="rec.edf", **kwargs):
        return write_edf(tmp_path / name, **kwargs)

    return make


@pytest.fixture(scope="session")
def small_labeled_epochs():
    """Two short synthetic subjects with all five stages, for pipeline tests."""
    stages = [Stage.WAKE, Stage.N1, Stage.N2, Stage.N3, Stage.REM] * 2
    epochs = []
    for i, seed in enumerate((11, 12)):
        spec = SynthSpec(stages=stages, subject_id=f"subj{i}")
        record, labels = synth_record(spec, seed=seed)
        epochs.extend(epochize(record, labels))
    return epochs
