import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from edgeaudio.container import (Container, decode, emit_tensor_container, encode, read_container,
                                 read_tensor_container, write_container)
from edgeaudio.errors import ContainerError, ManifestError
from edgeaudio.tensor.quant import QuantParams

DTYPES = [np.float32, np.float64, np.int8, np.uint8, np.int16, np.uint16, np.int32, np.uint32, np.int64]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(DTYPES).flatmap(
    lambda dt: hnp.arrays(dt, hnp.array_shapes(min_dims=0, max_dims=3, max_side=5))))
def test_round_trip_bit_exact(arr):
    back = decode(encode(Container({"a": arr}))).tensors["a"]
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_quant_and_metadata(tmp_path):
    qp = QuantParams(0.05, -3)
    p = tmp_path / "t.eatc"
    emit_tensor_container(np.arange(6, dtype=np.int8).reshape(2, 3), p, qp, {"frontend": {"hop_ms": 10}})
    arr, q, meta = read_tensor_container(p)
    assert arr.tolist() == [[0, 1, 2], [3, 4, 5]]
    assert q.scale == qp.scale and q.zero_point == qp.zero_point
    assert meta["frontend"]["hop_ms"] == 10


def test_encoding_is_deterministic():
    c = Container({"x": np.ones(4, np.float32)}, metadata={"b": 1, "a": 2})
    assert encode(c) == encode(c)


@pytest.fixture
def blob():
    return encode(Container({"x": np.arange(10, dtype=np.int32), "y": np.ones((2, 2), np.float32)}))


def test_bad_magic(blob):
    with pytest.raises(ContainerError, match="magic"):
        decode(b"XXXX" + blob[4:])


def test_checksum_mismatch(blob):
    bad = bytearray(blob)
    bad[-1] ^= 0xFF
    with pytest.raises(ContainerError, match="checksum"):
        decode(bytes(bad))


@pytest.mark.parametrize("cut", [3, 20, 1])
def test_truncation(blob, cut):
    data = blob[:cut] if cut < 10 else blob[:-cut]
    with pytest.raises(ManifestError):
        decode(data)


def test_trailing_bytes(blob):
    with pytest.raises(ContainerError):
        decode(blob + b"\0")


def test_shape_does_not_match_bytes(blob):
    bad = blob.replace(b'"shape":[10]', b'"shape":[11]')
    assert bad != blob
    with pytest.raises(ContainerError, match="does not match"):
        decode(bad)


def test_unreadable_file(tmp_path):
    with pytest.raises(ContainerError):
        read_container(tmp_path / "missing.eatc")


def test_multi_tensor_without_primary(tmp_path):
    p = tmp_path / "m.eatc"
    write_container(p, Container({"a": np.zeros(1), "b": np.zeros(1)}))
    with pytest.raises(ContainerError):
        read_tensor_container(p)
