"""
Unit tests for PGM / PPM files and atomic writes
"""

import numpy as np
import pytest

from src.reports import normalize_minmax, read_pnm, write_bytes_atomic, write_pgm, write_ppm
from src.reports.pnm import encode_pnm


class TestEncode:
    """Test the binary header and payload"""

    def test_pgm_header(self):
        data = encode_pnm(np.array([[1, 2, 3]], dtype=np.uint8))
        assert data == b"P5\n3 1\n255\n\x01\x02\x03"

    def test_ppm_magic(self):
        assert encode_pnm(np.zeros((2, 2, 3), dtype=np.uint8)).startswith(b"P6\n2 2\n255\n")

    def test_rejects_float(self):
        with pytest.raises(TypeError):
            encode_pnm(np.zeros((2, 2)))

    def test_rejects_four_channels(self):
        with pytest.raises(ValueError):
            encode_pnm(np.zeros((2, 2, 4), dtype=np.uint8))


class TestReadWrite:
    """Test files on disk"""

    def test_gray_file(self, tmp_path):
        pixels = np.arange(12, dtype=np.uint8).reshape(3, 4)
        write_pgm(tmp_path / "a.pgm", pixels)
        np.testing.assert_array_equal(read_pnm(tmp_path / "a.pgm"), pixels)

    def test_color_file(self, tmp_path):
        pixels = np.random.default_rng(0).integers(0, 256, size=(5, 3, 3), dtype=np.uint8)
        write_ppm(tmp_path / "sub" / "a.ppm", pixels)
        np.testing.assert_array_equal(read_pnm(tmp_path / "sub" / "a.ppm"), pixels)

    def test_header_comment(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x07\x09")
        np.testing.assert_array_equal(read_pnm(path), [[7, 9]])

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "d.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(ValueError):
            read_pnm(path)

    def test_wrong_rank(self, tmp_path):
        with pytest.raises(ValueError):
            write_pgm(tmp_path / "e.pgm", np.zeros((2, 2, 3), dtype=np.uint8))

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        write_bytes_atomic(tmp_path / "x.bin", b"abc")
        write_bytes_atomic(tmp_path / "x.bin", b"de")
        assert (tmp_path / "x.bin").read_bytes() == b"de"
        assert [p.name for p in tmp_path.iterdir()] == ["x.bin"]


class TestNormalize:
    """Test min-max scaling to 8 bits"""

    def test_range(self):
        out = normalize_minmax(np.array([[-1.0, 0.0], [1.0, 3.0]]))
        assert out.dtype == np.uint8
        assert out.min() == 0 and out.max() == 255
        assert out[0, 1] == 64

    def test_constant(self):
        np.testing.assert_array_equal(normalize_minmax(np.full((2, 2), 4.0)), 0)
