import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segrisk.exceptions import FormatError, InvalidInputError, InvalidLabelError
from segrisk.io import decode_tensor, encode_tensor, read_pgm, read_tensor, write_pgm, write_tensor
from segrisk.tensor_core import (
    IGNORE,
    TISSUE_CLASS_NAMES,
    TissueClass,
    argmax_decode,
    one_hot,
    softmax,
)

finite_logits = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(2, 14)),
    elements=st.floats(-1e4, 1e4, allow_nan=False),
)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0, 0.0]), [0.25] * 4, atol=0, rtol=1e-15)

    def test_ln2(self):
        # exp(ln 2) / (exp(ln 2) + 1) = 2/3
        out = softmax([math.log(2.0), 0.0])
        np.testing.assert_allclose(out, [2 / 3, 1 / 3], rtol=1e-15)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(5, 7))
        np.testing.assert_allclose(softmax(z + 123.4), softmax(z), atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        out = softmax([1e4, -1e4, 0.0])
        assert np.all(np.isfinite(out))
        assert out[0] == 1.0

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            softmax([0.0, np.nan])
        with pytest.raises(InvalidInputError):
            softmax([np.inf, 0.0])

    @given(finite_logits)
    @settings(max_examples=200, deadline=None)
    def test_rows_sum_to_one(self, z):
        p = softmax(z)
        assert np.all((p >= 0) & (p <= 1))
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)

    @given(finite_logits, st.floats(-100, 100))
    @settings(max_examples=100, deadline=None)
    def test_decode_invariant_under_shift(self, z, c):
        shifted = z + c
        # shifting can merge near-ties through rounding; only compare clear winners
        top2 = np.sort(z, axis=-1)[..., -2:]
        clear = (top2[..., 1] - top2[..., 0]) > 1e-9 * (1 + np.abs(z).max())
        a = argmax_decode(softmax(z))
        b = argmax_decode(softmax(shifted))
        np.testing.assert_array_equal(a[clear], b[clear])


class TestOneHot:
    def test_unit_vector(self):
        np.testing.assert_array_equal(one_hot([2], 4), [[0, 0, 1, 0]])

    def test_ignore_is_zero(self):
        out = one_hot([IGNORE], 14)
        assert out.shape == (1, 14)
        assert not out.any()

    def test_out_of_range(self):
        with pytest.raises(InvalidLabelError):
            one_hot([5], 4)

    @given(arrays(np.int64, st.integers(1, 50), elements=st.sampled_from(list(range(6)) + [IGNORE])))
    def test_round_trip(self, labels):
        decoded = argmax_decode(one_hot(labels, 6))
        keep = labels != IGNORE
        np.testing.assert_array_equal(decoded[keep], labels[keep])


class TestArgmax:
    def test_unique_max(self):
        assert argmax_decode([0.1, 0.7, 0.2]) == 1

    def test_tie_goes_to_lowest_index(self):
        assert argmax_decode([0.5, 0.5]) == 0
        assert argmax_decode([0.2, 0.4, 0.4]) == 1

    def test_map_shape(self):
        p = np.full((3, 4, 5), 0.2)
        assert argmax_decode(p).shape == (3, 4)


def test_tissue_class_ordering():
    assert len(TissueClass) == 14 == len(TISSUE_CLASS_NAMES)
    assert TissueClass.HIGH_GRADE_DYSPLASIA_TUMOR == 2
    assert TissueClass.STROMA_LAMINA_PROPRIA == 5
    assert TissueClass.BACKGROUND == 13
    assert TISSUE_CLASS_NAMES[12] == "nerve"


class TestTensorFile:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        arr = rng.normal(size=(3, 4, 5)).astype(np.float32)
        path = tmp_path / "x.tns"
        write_tensor(arr, path)
        back = read_tensor(path)
        assert back.dtype == np.float32 and back.shape == (3, 4, 5)
        assert back.tobytes() == arr.tobytes()

    def test_u8_round_trip(self, tmp_path):
        arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
        write_tensor(arr, tmp_path / "u.tns")
        np.testing.assert_array_equal(read_tensor(tmp_path / "u.tns"), arr)

    def test_header_layout(self):
        buf = encode_tensor(np.zeros((2, 3), dtype=np.float32))
        assert buf[:4] == b"TNSR"
        assert buf[4:6] == (1).to_bytes(2, "little")
        assert buf[6] == 1 and buf[7] == 2
        assert buf[8:16] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
        assert len(buf) == 16 + 6 * 4

    def test_wrong_magic(self):
        buf = bytearray(encode_tensor(np.zeros(3, dtype=np.float32)))
        buf[:4] = b"XXXX"
        with pytest.raises(FormatError) as exc:
            decode_tensor(buf)
        assert exc.value.offset == 0

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.tns").write_bytes(b"")
        with pytest.raises(FormatError, match="truncated"):
            read_tensor(tmp_path / "e.tns")

    def test_truncated_payload(self):
        buf = encode_tensor(np.zeros((4, 4), dtype=np.float32))
        with pytest.raises(FormatError, match="truncated payload") as exc:
            decode_tensor(buf[:-3])
        assert exc.value.offset == len(buf) - 3

    def test_dimension_overflow(self):
        header = b"TNSR" + (1).to_bytes(2, "little") + bytes([1, 4]) + (0xFFFFFFFF).to_bytes(4, "little") * 4
        with pytest.raises(FormatError, match="overflow"):
            decode_tensor(header)

    def test_bad_ndim(self):
        header = b"TNSR" + (1).to_bytes(2, "little") + bytes([1, 5])
        with pytest.raises(FormatError):
            decode_tensor(header)


class TestPGM:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 14, size=(7, 9)).astype(np.uint8)
        labels[0, 0] = IGNORE
        write_pgm(labels, tmp_path / "m.pgm")
        assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n9 7\n255\n")
        np.testing.assert_array_equal(read_pgm(tmp_path / "m.pgm"), labels)

    def test_header_with_comment(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([3, 255]))
        np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[3, 255]])

    def test_rejects_other_formats(self, tmp_path):
        (tmp_path / "a.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(FormatError):
            read_pgm(tmp_path / "a.pgm")
        (tmp_path / "b.pgm").write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(FormatError):
            read_pgm(tmp_path / "b.pgm")

    def test_truncated(self, tmp_path):
        (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(5))
        with pytest.raises(FormatError, match="truncated"):
            read_pgm(tmp_path / "t.pgm")
