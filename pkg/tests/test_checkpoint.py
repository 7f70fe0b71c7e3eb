import numpy as np
import pytest

from hiveq.checkpoint import decode_arrays, encode_arrays, load_arrays, save_arrays
from hiveq.errors import IntegrityError


def sample_arrays():
    rng = np.random.default_rng(0)
    return {
        "agent.fc_in.w": rng.normal(size=(7, 4)),
        "agent.fc_in.b": rng.normal(size=4),
        "scalar": np.array(3.5),
    }


def test_roundtrip(tmp_path):
    arrays = sample_arrays()
    path = tmp_path / "p.hqp"
    save_arrays(path, arrays)
    loaded = load_arrays(path)
    assert set(loaded) == set(arrays)
    for k in arrays:
        assert np.array_equal(loaded[k], arrays[k])
        assert loaded[k].dtype == np.float64


def test_corrupt_byte_detected(tmp_path):
    blob = bytearray(encode_arrays(sample_arrays()))
    blob[25] ^= 0xFF
    with pytest.raises(IntegrityError):
        decode_arrays(bytes(blob))


def test_truncation_detected():
    blob = encode_arrays(sample_arrays())
    with pytest.raises(IntegrityError):
        decode_arrays(blob[: len(blob) // 2])


def test_bad_magic_detected():
    blob = bytearray(encode_arrays(sample_arrays()))
    # fix up digest after changing the magic so only the magic check fires
    import hashlib

    blob[:4] = b"XXXX"
    body = bytes(blob[:-32])
    blob[-32:] = hashlib.sha256(body).digest()
    with pytest.raises(IntegrityError, match="magic"):
        decode_arrays(bytes(blob))


def test_empty_mapping_roundtrip():
    assert decode_arrays(encode_arrays({})) == {}
