"""Minimal TIFF 6.0 reader/writer.

Deliberately small subset: little-endian byte order, no compression,
strip organization, contiguous planar layout, one IFD per file.
Sample types are uint8, uint16 and float32. Georeferencing travels in
the ModelPixelScale / ModelTiepoint / GeoKeyDirectory tags.

Anything outside the subset is rejected with a typed error instead of
being half-read.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFileError, TiffFormatError, TiffUnsupportedError
from .raster import GeoRef

_MAGIC_LE = b"II*\x00"
_MAGIC_BE = b"MM\x00*"

# tag ids
TAG_IMAGE_WIDTH = 256
TAG_IMAGE_LENGTH = 257
TAG_BITS_PER_SAMPLE = 258
TAG_COMPRESSION = 259
TAG_PHOTOMETRIC = 262
TAG_STRIP_OFFSETS = 273
TAG_ORIENTATION = 274
TAG_SAMPLES_PER_PIXEL = 277
TAG_ROWS_PER_STRIP = 278
TAG_STRIP_BYTE_COUNTS = 279
TAG_PLANAR_CONFIG = 284
TAG_PREDICTOR = 317
TAG_TILE_WIDTH = 322
TAG_TILE_LENGTH = 323
TAG_TILE_OFFSETS = 324
TAG_TILE_BYTE_COUNTS = 325
TAG_SAMPLE_FORMAT = 339
TAG_MODEL_PIXEL_SCALE = 33550
TAG_MODEL_TIEPOINT = 33922
TAG_GEO_KEY_DIRECTORY = 34735

# field types
TYPE_BYTE = 1
TYPE_SHORT = 3
TYPE_LONG = 4
TYPE_DOUBLE = 12

_TYPE_SIZE = {TYPE_BYTE: 1, TYPE_SHORT: 2, TYPE_LONG: 4, TYPE_DOUBLE: 8}
_TYPE_FMT = {TYPE_BYTE: "B", TYPE_SHORT: "H", TYPE_LONG: "I", TYPE_DOUBLE: "d"}

# (bits_per_sample, sample_format) -> numpy dtype
_SAMPLE_KINDS = {
    (8, 1): np.dtype("<u1"),
    (16, 1): np.dtype("<u2"),
    (32, 3): np.dtype("<f4"),
}
_DTYPE_TO_KIND = {np.dtype(np.uint8): (8, 1),
                  np.dtype(np.uint16): (16, 1),
                  np.dtype(np.float32): (32, 3)}

MAX_STRIP_BYTES = 64 * 1024

GEO_KEY_MODEL_TYPE = 1024
GEO_KEY_RASTER_TYPE = 1025
GEO_KEY_GEOGRAPHIC_CRS = 2048
GEO_KEY_PROJECTED_CRS = 3072


@dataclass
class TiffImage:
    """Decoded raster plus optional georeferencing.

    `data` is (H, W) for single-band images and (H, W, S) for
    multi-band ones, matching the contiguous sample layout on disk.
    """

    data: np.ndarray
    georef: GeoRef | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim not in (2, 3):
            raise TiffFormatError(f"image must be 2-D or 3-D, got shape {self.data.shape}")
        if self.data.ndim == 3 and self.data.shape[2] < 1:
            raise TiffFormatError("multi-band image needs at least one sample per pixel")
        if self.data.dtype not in _DTYPE_TO_KIND:
            raise TiffUnsupportedError(
                f"dtype {self.data.dtype} not in supported set (uint8, uint16, float32)")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def samples_per_pixel(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]


def _rows_per_strip(width: int, spp: int, itemsize: int) -> int:
    row_bytes = width * spp * itemsize
    return max(1, MAX_STRIP_BYTES // row_bytes)


def _geokey_directory(crs_code: int) -> list[int]:
    geographic = 4000 <= crs_code < 5000
    keys = [
        (GEO_KEY_MODEL_TYPE, 0, 1, 2 if geographic else 1),
        (GEO_KEY_RASTER_TYPE, 0, 1, 1),
    ]
    if crs_code:
        key_id = GEO_KEY_GEOGRAPHIC_CRS if geographic else GEO_KEY_PROJECTED_CRS
        keys.append((key_id, 0, 1, crs_code))
    directory = [1, 1, 0, len(keys)]
    for entry in keys:
        directory.extend(entry)
    return directory


def write_tiff(path: str, image: TiffImage) -> None:
    """Serialize an image to the supported TIFF subset.

    Output is deterministic: same image and georef give identical bytes.
    """
    data = np.ascontiguousarray(image.data)
    bits, fmt = _DTYPE_TO_KIND[data.dtype]
    spp = image.samples_per_pixel
    height, width = data.shape[0], data.shape[1]

    rps = _rows_per_strip(width, spp, data.dtype.itemsize)
    n_strips = (height + rps - 1) // rps
    row_bytes = width * spp * data.dtype.itemsize
    counts = [min(rps, height - i * rps) * row_bytes for i in range(n_strips)]

    tags: list[tuple[int, int, list]] = [
        (TAG_IMAGE_WIDTH, TYPE_LONG, [width]),
        (TAG_IMAGE_LENGTH, TYPE_LONG, [height]),
        (TAG_BITS_PER_SAMPLE, TYPE_SHORT, [bits] * spp),
        (TAG_COMPRESSION, TYPE_SHORT, [1]),
        (TAG_PHOTOMETRIC, TYPE_SHORT, [1]),
        (TAG_STRIP_OFFSETS, TYPE_LONG, [0] * n_strips),  # patched below
        (TAG_SAMPLES_PER_PIXEL, TYPE_SHORT, [spp]),
        (TAG_ROWS_PER_STRIP, TYPE_LONG, [rps]),
        (TAG_STRIP_BYTE_COUNTS, TYPE_LONG, counts),
        (TAG_SAMPLE_FORMAT, TYPE_SHORT, [fmt] * spp),
    ]
    if image.georef is not None:
        g = image.georef
        tags.append((TAG_MODEL_PIXEL_SCALE, TYPE_DOUBLE,
                     [g.pixel_size_x, abs(g.pixel_size_y), 0.0]))
        tags.append((TAG_MODEL_TIEPOINT, TYPE_DOUBLE,
                     [0.0, 0.0, 0.0, g.origin_x, g.origin_y, 0.0]))
        tags.append((TAG_GEO_KEY_DIRECTORY, TYPE_SHORT, _geokey_directory(g.crs_code)))
    tags.sort(key=lambda t: t[0])

    ifd_offset = 8
    ifd_size = 2 + 12 * len(tags) + 4
    overflow_offset = ifd_offset + ifd_size

    # overflow layout depends only on sizes, so strip offsets can be
    # patched in before values are actually packed
    cursor = overflow_offset
    for _, typ, vals in tags:
        size = _TYPE_SIZE[typ] * len(vals)
        if size > 4:
            cursor += (cursor % 2) + size
    cursor += cursor % 2
    data_offset = cursor

    strip_offsets = []
    pos = data_offset
    for c in counts:
        strip_offsets.append(pos)
        pos += c
    tags = [(tag, typ, strip_offsets if tag == TAG_STRIP_OFFSETS else vals)
            for tag, typ, vals in tags]

    overflow: list[bytes] = []
    value_offsets: dict[int, int] = {}
    cursor = overflow_offset
    for tag, typ, vals in tags:
        size = _TYPE_SIZE[typ] * len(vals)
        if size > 4:
            if cursor % 2:
                overflow.append(b"\x00")
                cursor += 1
            value_offsets[tag] = cursor
            overflow.append(struct.pack("<" + _TYPE_FMT[typ] * len(vals), *vals))
            cursor += size
    if cursor % 2:
        overflow.append(b"\x00")
        cursor += 1
    assert cursor == data_offset

    out = bytearray()
    out += _MAGIC_LE + struct.pack("<I", ifd_offset)
    out += struct.pack("<H", len(tags))
    for tag, typ, values in tags:
        size = _TYPE_SIZE[typ] * len(values)
        entry = struct.pack("<HHI", tag, typ, len(values))
        if size <= 4:
            packed = struct.pack("<" + _TYPE_FMT[typ] * len(values), *values)
            entry += packed + b"\x00" * (4 - size)
        else:
            entry += struct.pack("<I", value_offsets[tag])
        out += entry
    out += struct.pack("<I", 0)  # no next IFD
    for chunk in overflow:
        out += chunk
    if data.dtype.byteorder == ">":
        data = data.astype(data.dtype.newbyteorder("<"))
    out += data.tobytes()

    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Parser:
    def __init__(self, raw: bytes):
        self.raw = raw

    def unpack(self, fmt: str, offset: int):
        size = struct.calcsize(fmt)
        if offset < 0 or offset + size > len(self.raw):
            raise CorruptFileError(
                f"read of {size} bytes at offset {offset} past end of file ({len(self.raw)})")
        return struct.unpack_from(fmt, self.raw, offset)

    def tag_values(self, typ: int, count: int, value_field: bytes) -> list:
        if typ not in _TYPE_SIZE:
            raise TiffUnsupportedError(f"unsupported field type {typ}")
        size = _TYPE_SIZE[typ] * count
        fmt = "<" + _TYPE_FMT[typ] * count
        if size <= 4:
            return list(struct.unpack(fmt, value_field[:size]))
        (offset,) = struct.unpack("<I", value_field)
        return list(self.unpack(fmt, offset))


def read_tiff(path: str) -> TiffImage:
    """Parse a file written by `write_tiff` (or anything in the same subset)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise CorruptFileError(f"file too short to hold a TIFF header ({len(raw)} bytes)")
    magic = raw[:4]
    if magic == _MAGIC_BE:
        raise TiffUnsupportedError("big-endian TIFF is outside the supported subset")
    if magic != _MAGIC_LE:
        raise TiffFormatError(f"not a TIFF file (magic {magic!r})")

    p = _Parser(raw)
    (ifd_offset,) = p.unpack("<I", 4)
    (n_entries,) = p.unpack("<H", ifd_offset)
    if n_entries == 0:
        raise CorruptFileError("IFD holds no entries")

    entries: dict[int, tuple[int, int, bytes]] = {}
    for i in range(n_entries):
        base = ifd_offset + 2 + 12 * i
        tag, typ, count = p.unpack("<HHI", base)
        (value_field,) = p.unpack("<4s", base + 8)
        entries[tag] = (typ, count, value_field)

    def values(tag: int, default=None) -> list | None:
        if tag not in entries:
            return default
        typ, count, field = entries[tag]
        return p.tag_values(typ, count, field)

    for tile_tag in (TAG_TILE_WIDTH, TAG_TILE_LENGTH, TAG_TILE_OFFSETS, TAG_TILE_BYTE_COUNTS):
        if tile_tag in entries:
            raise TiffUnsupportedError("tiled TIFF is outside the supported subset")

    required = {TAG_IMAGE_WIDTH: "ImageWidth", TAG_IMAGE_LENGTH: "ImageLength",
                TAG_BITS_PER_SAMPLE: "BitsPerSample", TAG_STRIP_OFFSETS: "StripOffsets",
                TAG_STRIP_BYTE_COUNTS: "StripByteCounts"}
    missing = [name for tag, name in required.items() if tag not in entries]
    if missing:
        raise CorruptFileError(f"required tags missing: {', '.join(missing)}")

    width = values(TAG_IMAGE_WIDTH)[0]
    height = values(TAG_IMAGE_LENGTH)[0]
    if width < 1 or height < 1:
        raise CorruptFileError(f"degenerate image size {height}x{width}")

    compression = values(TAG_COMPRESSION, [1])[0]
    if compression != 1:
        raise TiffUnsupportedError(f"compression {compression} is not supported (only 1)")
    if values(TAG_PLANAR_CONFIG, [1])[0] != 1:
        raise TiffUnsupportedError("planar configuration must be contiguous (1)")
    if values(TAG_PREDICTOR, [1])[0] != 1:
        raise TiffUnsupportedError("predictors are not supported")

    spp = values(TAG_SAMPLES_PER_PIXEL, [1])[0]
    bits = values(TAG_BITS_PER_SAMPLE)
    fmt = values(TAG_SAMPLE_FORMAT, [1] * spp)
    if len(bits) != spp or len(set(bits)) != 1:
        raise TiffUnsupportedError(f"per-sample bit depths {bits} not uniform over {spp} samples")
    if len(fmt) != spp:
        fmt = [fmt[0]] * spp
    if len(set(fmt)) != 1:
        raise TiffUnsupportedError(f"mixed sample formats {fmt}")
    kind = (bits[0], fmt[0])
    if kind not in _SAMPLE_KINDS:
        raise TiffUnsupportedError(
            f"sample kind bits={bits[0]} format={fmt[0]} outside supported subset")
    dtype = _SAMPLE_KINDS[kind]

    offsets = values(TAG_STRIP_OFFSETS)
    counts = values(TAG_STRIP_BYTE_COUNTS)
    if len(offsets) != len(counts):
        raise CorruptFileError(
            f"{len(offsets)} strip offsets vs {len(counts)} byte counts")
    rps = values(TAG_ROWS_PER_STRIP, [height])[0]
    if rps < 1:
        raise CorruptFileError(f"rows per strip {rps} invalid")
    expected_strips = (height + rps - 1) // rps
    if len(offsets) != expected_strips:
        raise CorruptFileError(
            f"{len(offsets)} strips but geometry implies {expected_strips}")

    total = height * width * spp * dtype.itemsize
    if sum(counts) != total:
        raise CorruptFileError(
            f"strip byte counts sum to {sum(counts)}, image needs {total}")

    payload = bytearray()
    for off, cnt in zip(offsets, counts):
        if off + cnt > len(raw):
            raise CorruptFileError(
                f"strip at {off}+{cnt} runs past end of file ({len(raw)})")
        payload += raw[off:off + cnt]
    arr = np.frombuffer(bytes(payload), dtype=dtype).reshape(
        (height, width) if spp == 1 else (height, width, spp))
    arr = arr.astype(dtype.newbyteorder("="))

    georef = None
    scale = values(TAG_MODEL_PIXEL_SCALE)
    tiepoint = values(TAG_MODEL_TIEPOINT)
    if scale is not None and tiepoint is not None:
        if len(scale) < 2 or len(tiepoint) < 5:
            raise CorruptFileError("georeferencing tags present but incomplete")
        crs = 0
        keydir = values(TAG_GEO_KEY_DIRECTORY)
        if keydir is not None and len(keydir) >= 4:
            n_keys = keydir[3]
            found = {}
            for k in range(n_keys):
                entry = keydir[4 + 4 * k: 8 + 4 * k]
                if len(entry) == 4 and entry[1] == 0:
                    found[entry[0]] = entry[3]
            crs = found.get(GEO_KEY_PROJECTED_CRS, found.get(GEO_KEY_GEOGRAPHIC_CRS, 0))
        sx, sy = scale[0], scale[1]
        i, j, x, y = tiepoint[0], tiepoint[1], tiepoint[3], tiepoint[4]
        georef = GeoRef(origin_x=x - i * sx, origin_y=y + j * sy,
                        pixel_size_x=sx, pixel_size_y=-sy, crs_code=crs)

    return TiffImage(data=arr, georef=georef)
