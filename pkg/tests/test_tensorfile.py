"""Binary tensor container round-trips and malformed-file diagnostics."""

import struct

import numpy as np
import pytest

from blockfp import TensorFileError, read_tensor, write_tensor


@pytest.mark.parametrize(
    "shape", [(4,), (2, 3), (3, 4, 5), (1, 1), (2, 0), ()],
)
def test_roundtrip_bit_exact(tmp_path, shape):
    rng = np.random.default_rng(1)
    tensor = rng.standard_normal(shape)
    path = tmp_path / "t.bfpt"
    write_tensor(path, tensor)
    back = read_tensor(path)
    assert back.shape == tensor.shape
    assert np.array_equal(
        back.view(np.uint64) if back.size else back,
        tensor.view(np.uint64) if tensor.size else tensor,
    )


def test_roundtrip_preserves_special_values(tmp_path):
    tensor = np.array([0.0, -0.0, 1e-308, -1e300, 2.0**-1074])
    path = tmp_path / "t.bfpt"
    write_tensor(path, tensor)
    assert np.array_equal(read_tensor(path).view(np.uint64), tensor.view(np.uint64))


def test_header_layout(tmp_path):
    path = tmp_path / "t.bfpt"
    write_tensor(path, np.array([[1.0, 2.0]]))
    data = path.read_bytes()
    assert data[:4] == b"BFPT"
    assert struct.unpack_from("<I", data, 4)[0] == 1  # version
    assert data[8] == 1  # element type: binary64
    assert data[9] == 2  # rank
    assert struct.unpack_from("<2Q", data, 10) == (1, 2)
    assert len(data) == 10 + 16 + 16


class TestMalformed:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(TensorFileError) as err:
            read_tensor(path)
        assert err.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.bfpt"
        write_tensor(path, np.ones((2, 2)))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(TensorFileError) as err:
            read_tensor(path)
        assert "offset" in str(err.value)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "t.bfpt"
        write_tensor(path, np.ones(2))
        data = bytearray(path.read_bytes())
        data[4] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(TensorFileError) as err:
            read_tensor(path)
        assert err.value.offset == 4

    def test_bad_type_code(self, tmp_path):
        path = tmp_path / "t.bfpt"
        write_tensor(path, np.ones(2))
        data = bytearray(path.read_bytes())
        data[8] = 7
        path.write_bytes(bytes(data))
        with pytest.raises(TensorFileError) as err:
            read_tensor(path)
        assert err.value.offset == 8
