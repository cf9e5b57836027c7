import numpy as np
import pytest

from nightscan.errors import ConfigError, FormatError
from nightscan.rawio import (
    RawImage,
    pack,
    pack_mosaic,
    read_ppm,
    read_raw_container,
    unpack_mosaic,
    write_ppm,
    write_raw_container,
)


def _raw(plane, cfa="RGGB", black=0, white=40, ratio=1.0):
    plane = np.asarray(plane, dtype=np.uint16)
    return RawImage(
        width=plane.shape[1],
        height=plane.shape[0],
        cfa=cfa,
        black_level=black,
        white_level=white,
        exposure_ratio=ratio,
        plane=plane,
    )


class TestPack:
    def test_2x2_normalization_and_channel_order(self):
        packed = pack(_raw([[10, 20], [30, 40]]))
        assert packed.shape == (4, 1, 1)
        np.testing.assert_allclose(packed.ravel(), [0.25, 0.5, 0.75, 1.0])

    def test_ratio_saturates(self):
        packed = pack(_raw([[10, 20], [30, 40]], ratio=4.0))
        np.testing.assert_array_equal(packed.ravel(), [1.0, 1.0, 1.0, 1.0])

    def test_black_level_clips_to_zero(self):
        packed = pack(_raw([[5, 20], [30, 40]], black=10))
        assert packed.ravel()[0] == 0.0

    def test_monotone_per_site(self):
        lo = pack(_raw([[10, 20], [30, 40]]))
        hi = pack(_raw([[12, 25], [31, 40]]))
        assert np.all(hi >= lo)

    def test_bayer_roundtrip_bit_exact(self):
        rng = np.random.default_rng(0)
        mosaic = rng.uniform(0, 1, (6, 8))
        np.testing.assert_array_equal(unpack_mosaic(pack_mosaic(mosaic, "RGGB"), "RGGB"), mosaic)
        repacked = pack_mosaic(unpack_mosaic(pack_mosaic(mosaic, "RGGB"), "RGGB"), "RGGB")
        np.testing.assert_array_equal(repacked, pack_mosaic(mosaic, "RGGB"))

    def test_xtrans_roundtrip_bit_exact(self):
        rng = np.random.default_rng(1)
        mosaic = rng.uniform(0, 1, (6, 6))
        packed = pack_mosaic(mosaic, "XTRANS")
        assert packed.shape == (9, 2, 2)
        np.testing.assert_array_equal(unpack_mosaic(packed, "XTRANS"), mosaic)

    def test_xtrans_channel_site_layout(self):
        mosaic = np.arange(9.0).reshape(3, 3)
        packed = pack_mosaic(mosaic, "XTRANS")
        np.testing.assert_array_equal(packed.ravel(), np.arange(9.0))

    def test_indivisible_dims_rejected(self):
        raw = _raw(np.zeros((3, 10)), cfa="XTRANS", white=100)
        with pytest.raises(ConfigError):
            pack(raw)

    def test_channel_count_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            unpack_mosaic(np.zeros((4, 2, 2)), "XTRANS")


class TestContainer:
    def test_roundtrip_all_fields(self, tmp_path):
        rng = np.random.default_rng(2)
        raw = _raw(rng.integers(0, 4000, (6, 4)).astype(np.uint16), black=512, white=16322, ratio=100.0)
        path = tmp_path / "a.rraw"
        write_raw_container(raw, path)
        back = read_raw_container(path)
        assert (back.width, back.height, back.cfa) == (raw.width, raw.height, raw.cfa)
        assert (back.black_level, back.white_level) == (raw.black_level, raw.white_level)
        assert back.exposure_ratio == raw.exposure_ratio
        np.testing.assert_array_equal(back.plane, raw.plane)

    def test_roundtrip_is_byte_lossless(self, tmp_path):
        raw = _raw(np.arange(24, dtype=np.uint16).reshape(4, 6), white=100)
        p1, p2 = tmp_path / "a.rraw", tmp_path / "b.rraw"
        write_raw_container(raw, p1)
        write_raw_container(read_raw_container(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.rraw"
        path.write_bytes(b"JUNKxxxxxxxx")
        with pytest.raises(FormatError):
            read_raw_container(path)

    def test_truncated_plane(self, tmp_path):
        raw = _raw(np.zeros((4, 4), dtype=np.uint16), white=10)
        path = tmp_path / "t.rraw"
        write_raw_container(raw, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])  # drop 8 of 16 u16 values
        with pytest.raises(FormatError):
            read_raw_container(path)

    def test_xtrans_width_10_reads_but_fails_pack(self, tmp_path):
        raw = _raw(np.zeros((9, 10), dtype=np.uint16), cfa="XTRANS", white=10)
        path = tmp_path / "x.rraw"
        write_raw_container(raw, path)
        back = read_raw_container(path)
        with pytest.raises(ConfigError):
            pack(back)

    def test_invalid_levels_rejected(self):
        with pytest.raises(ConfigError):
            _raw(np.zeros((2, 2), dtype=np.uint16), black=50, white=50)


class TestPpm:
    def test_black_and_white_bytes(self, tmp_path):
        path = tmp_path / "z.ppm"
        write_ppm(np.zeros((3, 1, 1)), path)
        assert path.read_bytes().endswith(b"\x00\x00\x00")
        write_ppm(np.ones((3, 1, 1)), path)
        assert path.read_bytes().endswith(b"\xff\xff\xff")

    def test_half_rounds_up(self, tmp_path):
        path = tmp_path / "h.ppm"
        write_ppm(np.full((3, 1, 1), 0.5), path)
        assert path.read_bytes().endswith(bytes([128, 128, 128]))

    def test_out_of_range_clipped_and_counted(self, tmp_path):
        path = tmp_path / "c.ppm"
        img = np.zeros((3, 1, 2))
        img[0, 0, 0] = -0.5
        img[1, 0, 1] = 1.5
        clipped = write_ppm(img, path)
        assert clipped == 2
        data = path.read_bytes()
        assert data[-6] == 0 and data[-2] == 255

    def test_roundtrip_on_8bit_grid(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, (3, 5, 7)).astype(np.float64) / 255.0
        path = tmp_path / "r.ppm"
        write_ppm(img, path)
        np.testing.assert_array_equal(read_ppm(path), img)

    def test_header_format(self, tmp_path):
        path = tmp_path / "f.ppm"
        write_ppm(np.zeros((3, 2, 4)), path)
        assert path.read_bytes().startswith(b"P6\n4 2\n255\n")
