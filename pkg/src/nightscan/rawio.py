"""RAW container I/O, CFA packing, and 8-bit PPM image output.

Container layout (little endian throughout):

    bytes 0..3   magic "RRAW"
    bytes 4..7   u32 header length
    header       UTF-8 JSON: {width, height, cfa: "RGGB"|"XTRANS",
                 black_level, white_level, exposure_ratio}
    plane        height*width u16 values, row major

Packing turns the single-plane mosaic into one channel per CFA site at
reduced resolution: 2x2 blocks -> 4 channels for Bayer RGGB, 3x3 blocks ->
9 channels for X-Trans (channel c of a bxb block is site (c // b, c % b)).
Values are normalized by black/white level, scaled by the exposure ratio,
then clipped to [0, 1].
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError

logger = logging.getLogger(__name__)

RAW_MAGIC = b"RRAW"
CFA_BLOCK = {"RGGB": 2, "XTRANS": 3}


@dataclass
class RawImage:
    width: int
    height: int
    cfa: str
    black_level: int
    white_level: int
    exposure_ratio: float
    plane: np.ndarray  # u16, (height, width)

    def __post_init__(self):
        if self.cfa not in CFA_BLOCK:
            raise ConfigError(f"unknown CFA {self.cfa!r}; expected RGGB or XTRANS")
        if self.black_level >= self.white_level:
            raise ConfigError(f"black_level {self.black_level} must be below white_level {self.white_level}")
        if self.exposure_ratio <= 0:
            raise ConfigError(f"exposure_ratio must be positive, got {self.exposure_ratio}")
        self.plane = np.asarray(self.plane, dtype=np.uint16)
        if self.plane.shape != (self.height, self.width):
            raise ConfigError(f"plane shape {self.plane.shape} != ({self.height}, {self.width})")


def packed_channels(cfa: str) -> int:
    b = CFA_BLOCK[cfa]
    return b * b


def pack_mosaic(mosaic: np.ndarray, cfa: str) -> np.ndarray:
    """Spatial rearrangement only: (H, W) -> (b*b, H/b, W/b)."""
    b = CFA_BLOCK[cfa]
    h, w = mosaic.shape
    if h % b or w % b:
        raise ConfigError(f"{cfa} needs dimensions divisible by {b}, got {h}x{w}")
    blocks = mosaic.reshape(h // b, b, w // b, b)
    return np.ascontiguousarray(blocks.transpose(1, 3, 0, 2).reshape(b * b, h // b, w // b))


def unpack_mosaic(packed: np.ndarray, cfa: str) -> np.ndarray:
    """Exact inverse of pack_mosaic (no renormalization)."""
    b = CFA_BLOCK[cfa]
    if packed.shape[0] != b * b:
        raise ConfigError(f"{cfa} packing has {b * b} channels, got {packed.shape[0]}")
    _, hb, wb = packed.shape
    blocks = packed.reshape(b, b, hb, wb).transpose(2, 0, 3, 1)
    return np.ascontiguousarray(blocks.reshape(hb * b, wb * b))


def pack(raw: RawImage) -> np.ndarray:
    """Normalize, exposure-scale, clip to [0, 1], and pack per CFA site."""
    span = float(raw.white_level - raw.black_level)
    norm = (raw.plane.astype(np.float64) - raw.black_level) / span
    scaled = np.clip(norm * raw.exposure_ratio, 0.0, 1.0)
    return pack_mosaic(scaled, raw.cfa)


def write_raw_container(raw: RawImage, path):
    header = json.dumps(
        {
            "width": raw.width,
            "height": raw.height,
            "cfa": raw.cfa,
            "black_level": int(raw.black_level),
            "white_level": int(raw.white_level),
            "exposure_ratio": float(raw.exposure_ratio),
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(raw.plane.astype("<u2").tobytes())


def read_raw_container(path) -> RawImage:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != RAW_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {RAW_MAGIC!r}")
    if len(blob) < 8:
        raise FormatError("truncated container: missing header length")
    header_len = int(np.frombuffer(blob[4:8], dtype="<u4")[0])
    if len(blob) < 8 + header_len:
        raise FormatError("truncated container: header shorter than declared")
    try:
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
        width, height = int(header["width"]), int(header["height"])
        cfa = header["cfa"]
        black, white = int(header["black_level"]), int(header["white_level"])
        ratio = float(header["exposure_ratio"])
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"malformed header: {exc}") from exc
    plane_bytes = blob[8 + header_len:]
    if len(plane_bytes) != 2 * width * height:
        raise FormatError(
            f"plane size {len(plane_bytes)} bytes disagrees with header {width}x{height} (u16)"
        )
    plane = np.frombuffer(plane_bytes, dtype="<u2").reshape(height, width)
    return RawImage(
        width=width,
        height=height,
        cfa=cfa,
        black_level=black,
        white_level=white,
        exposure_ratio=ratio,
        plane=plane.copy(),
    )


def write_ppm(rgb: np.ndarray, path) -> int:
    """Write a (3, H, W) image in [0, 1] as binary 8-bit PPM (P6).

    Out-of-range values are clipped, counted, and reported with a warning;
    they are not an error.  Quantization is round-half-up of 255*v.
    Returns the number of clipped samples.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ConfigError(f"write_ppm expects (3, H, W), got {rgb.shape}")
    clipped = int(((rgb < 0.0) | (rgb > 1.0)).sum())
    if clipped:
        logger.warning("write_ppm: clipped %d out-of-range samples for %s", clipped, path)
    vals = np.clip(rgb, 0.0, 1.0)
    bytes8 = np.floor(255.0 * vals + 0.5).astype(np.uint8)
    interleaved = bytes8.transpose(1, 2, 0)
    h, w = interleaved.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(interleaved.tobytes())
    return clipped


def read_ppm(path) -> np.ndarray:
    """Read a binary 8-bit PPM back to a (3, H, W) float array in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P6":
        raise FormatError(f"not a binary PPM: magic {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM supported, maxval={maxval}")
    pos += 1  # single whitespace after maxval
    data = blob[pos:pos + 3 * w * h]
    if len(data) != 3 * w * h:
        raise FormatError("truncated PPM pixel data")
    img = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return img.transpose(2, 0, 1).astype(np.float64) / 255.0
