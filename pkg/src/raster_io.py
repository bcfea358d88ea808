"""Binary containers for complex images, reflectivities and tensors, plus PNG import/export.

All containers are little-endian, row-major, 32-bit float:

    SLC1  width u32, height u32, (re f32, im f32) * width * height
    RFL1  width u32, height u32, convolved_flag u8, f32 * width * height
    TNS1  count u32, then per entry: name_len u16, name utf-8, ndim u8, dims u32[ndim], f32 payload
"""

import struct
from pathlib import Path
from typing import Any, Literal

import numpy as np
from numpy.typing import NDArray
from PIL import Image

from src.exceptions import BadMagicError, NonFiniteSampleError, NotGrayscaleError, TruncatedPayloadError
from src.logging import get_logger
from src.models import R_FLOOR, ComplexImage, ReflectivityImage, TensorContainer, TensorEntry

log = get_logger("src.raster_io")

SLC_MAGIC = b"SLC1"
RFL_MAGIC = b"RFL1"
TNS_MAGIC = b"TNS1"

_F32 = np.dtype("<f4")
_DIMS = struct.Struct("<II")

PngMode = Literal["amplitude_quantile", "log"]
PNG_CLIP_QUANTILE = 99.5


# ============================================================================
# Byte-level helpers
# ============================================================================


class _Reader:
    """Sequential reader over an in-memory container that reports truncation precisely."""

    def __init__(self, path: str | Path, payload: bytes) -> None:
        self.path = path
        self.payload = payload
        self.offset = 0

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if end > len(self.payload):
            raise TruncatedPayloadError(self.path, expected_bytes=end, found_bytes=len(self.payload))
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> tuple[Any, ...]:
        layout = struct.Struct(fmt)
        return layout.unpack(self.take(layout.size))

    def floats(self, count: int) -> NDArray[np.float32]:
        return np.frombuffer(self.take(count * _F32.itemsize), dtype=_F32).astype(np.float32)


def _open(path: str | Path, magic: bytes) -> _Reader:
    payload = Path(path).read_bytes()
    reader = _Reader(path, payload)
    found = payload[: len(magic)]
    if found != magic:
        raise BadMagicError(path, found=found, expected=magic)
    reader.offset = len(magic)
    return reader


def _check_finite(path: str | Path, values: NDArray[np.float32]) -> None:
    bad = int(np.count_nonzero(~np.isfinite(values)))
    if bad:
        raise NonFiniteSampleError(path, count=bad)


def _write(path: str | Path, chunks: list[bytes]) -> None:
    if not str(path):
        raise FileNotFoundError("empty output path")
    target = Path(path)
    target.write_bytes(b"".join(chunks))
    log.debug("raster_io.written", path=str(target), size_bytes=target.stat().st_size)


# ============================================================================
# SLC container
# ============================================================================


def save_slc(img: ComplexImage, path: str | Path) -> None:
    """Write a complex image as an SLC1 container."""
    interleaved = np.empty((img.height, img.width, 2), dtype=_F32)
    interleaved[..., 0] = img.re
    interleaved[..., 1] = img.im
    _write(path, [SLC_MAGIC, _DIMS.pack(img.width, img.height), interleaved.tobytes()])


def load_slc(path: str | Path) -> ComplexImage:
    """Read an SLC1 container; the samples come back bit-identical to what was saved."""
    reader = _open(path, SLC_MAGIC)
    width, height = reader.unpack("<II")
    samples = reader.floats(2 * width * height)
    _check_finite(path, samples)
    interleaved = samples.reshape(height, width, 2)
    return ComplexImage(re=interleaved[..., 0], im=interleaved[..., 1])


# ============================================================================
# Reflectivity container
# ============================================================================


def save_reflectivity(img: ReflectivityImage, path: str | Path) -> None:
    """Write a reflectivity map as an RFL1 container."""
    _write(
        path,
        [
            RFL_MAGIC,
            _DIMS.pack(img.width, img.height),
            struct.pack("<B", int(img.convolved_flag)),
            img.values.astype(_F32).tobytes(),
        ],
    )


def load_reflectivity(path: str | Path) -> ReflectivityImage:
    reader = _open(path, RFL_MAGIC)
    width, height = reader.unpack("<II")
    (flag,) = reader.unpack("<B")
    values = reader.floats(width * height)
    _check_finite(path, values)
    return ReflectivityImage(values=values.reshape(height, width), convolved_flag=bool(flag))


# ============================================================================
# Tensor container
# ============================================================================


def encode_tensors(container: TensorContainer) -> bytes:
    chunks = [TNS_MAGIC, struct.pack("<I", len(container.entries))]
    for entry in container.entries:
        name = entry.name.encode("utf-8")
        if len(name) > 0xFFFF:
            raise ValueError(f"tensor name too long: {len(name)} bytes")
        chunks.append(struct.pack("<H", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<B", len(entry.dims)))
        chunks.append(struct.pack(f"<{len(entry.dims)}I", *entry.dims))
        chunks.append(entry.data.astype(_F32).tobytes())
    return b"".join(chunks)


def decode_tensors(payload: bytes, path: str | Path = "<memory>") -> TensorContainer:
    found = payload[: len(TNS_MAGIC)]
    if found != TNS_MAGIC:
        raise BadMagicError(path, found=found, expected=TNS_MAGIC)
    reader = _Reader(path, payload)
    reader.offset = len(TNS_MAGIC)
    (count,) = reader.unpack("<I")
    entries = []
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        dims = reader.unpack(f"<{ndim}I")
        data = reader.floats(int(np.prod(dims)))
        # TensorEntry copies to float32; the frombuffer view already preserves every bit pattern.
        entries.append(TensorEntry(name=name, data=data.reshape(dims)))
    return TensorContainer(entries=entries)


def save_tensors(container: TensorContainer, path: str | Path) -> None:
    _write(path, [encode_tensors(container)])


def load_tensors(path: str | Path) -> TensorContainer:
    return decode_tensors(Path(path).read_bytes(), path)


# ============================================================================
# Grayscale ingestion & PNG export
# ============================================================================


def ingest_grayscale(path: str | Path, amplitude_peak: float = 255.0, r_floor: float = R_FLOOR) -> ReflectivityImage:
    """Convert an 8-bit grayscale PNG to reflectivity r = (g/255 · peak)², floored at `r_floor`."""
    with Image.open(path) as image:
        if image.mode != "L":
            raise NotGrayscaleError(path, mode=image.mode)
        gray = np.asarray(image, dtype=np.float64)
    reflectivity = np.maximum((gray / 255.0 * amplitude_peak) ** 2, r_floor)
    log.info("raster_io.ingested", path=str(path), height=gray.shape[0], width=gray.shape[1])
    return ReflectivityImage(values=reflectivity, convolved_flag=False)


def to_png_levels(values: NDArray[Any], mode: PngMode = "amplitude_quantile") -> NDArray[np.uint8]:
    """Map a single-channel grid to 8-bit levels.

    amplitude_quantile: values (amplitudes) are clipped at their 99.5th percentile and scaled to [0, 255].
    log: log values are stretched linearly between their minimum and maximum.
    """
    grid = np.asarray(values, dtype=np.float64)
    if mode == "amplitude_quantile":
        clip = float(np.percentile(grid, PNG_CLIP_QUANTILE))
        if clip <= 0:
            return np.zeros(grid.shape, dtype=np.uint8)
        scaled = np.clip(grid, 0.0, clip) / clip * 255.0
    elif mode == "log":
        logs = np.log(np.maximum(grid, R_FLOOR))
        lo, hi = float(logs.min()), float(logs.max())
        if hi <= lo:
            return np.zeros(grid.shape, dtype=np.uint8)
        scaled = (logs - lo) / (hi - lo) * 255.0
    else:
        raise ValueError(f"unknown PNG mode '{mode}'")
    return np.rint(scaled).astype(np.uint8)


def export_png(values: NDArray[Any], mode: PngMode, path: str | Path) -> None:
    """Write an 8-bit grayscale visual export."""
    if not str(path):
        raise FileNotFoundError("empty output path")
    Image.fromarray(to_png_levels(values, mode)).save(path, format="PNG")
    log.debug("raster_io.png_exported", path=str(path), mode=mode)
