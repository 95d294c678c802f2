"""Grayscale image I/O: PGM (P2/P5) by hand, PNG and resizing through Pillow."""

import io
import re
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
from PIL import Image

from c2f_diffusion.exceptions import InvalidInputError
from c2f_diffusion.utils.file_handler import FileHandler

PathLike = Union[str, Path]

PGM_SUFFIXES = (".pgm", ".pnm")
PNG_SUFFIXES = (".png",)
IMAGE_SUFFIXES = PGM_SUFFIXES + PNG_SUFFIXES

_PGM_TOKEN = re.compile(rb"#[^\n]*\n?|(\S+)")


def _pgm_header(data: bytes) -> Tuple[bytes, int, int, int, int]:
    """Parse magic, width, height and maxval; returns them and the payload offset."""
    values = []
    position = 0
    while len(values) < 4:
        match = _PGM_TOKEN.search(data, position)
        if match is None:
            raise InvalidInputError("Truncated PGM header")
        position = match.end()
        if match.group(1) is not None:
            values.append(match.group(1))
    magic = values[0]
    try:
        width, height, maxval = (int(v) for v in values[1:])
    except ValueError as e:
        raise InvalidInputError(f"Malformed PGM header: {e}") from e
    if magic not in (b"P2", b"P5"):
        raise InvalidInputError(f"Not a grayscale PGM (magic {magic!r})")
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise InvalidInputError(
            f"Invalid PGM dimensions {width}x{height} or maxval {maxval}"
        )
    # exactly one whitespace byte separates the header from a binary payload
    return magic, width, height, maxval, position + 1


def read_pgm(path: PathLike) -> Tuple[np.ndarray, int]:
    """Read a P2 (ASCII) or P5 (binary, 8 or 16 bit) PGM file.

    Returns:
        Tuple (pixels as float array of shape (height, width), maxval)

    Raises:
        InvalidInputError: If the file is not a well-formed grayscale PGM
    """
    data = Path(path).read_bytes()
    magic, width, height, maxval, offset = _pgm_header(data)
    count = width * height
    if magic == b"P2":
        tokens = _PGM_TOKEN.findall(data[offset - 1 :])
        numbers = [int(token) for token in tokens if token]
        if len(numbers) < count:
            raise InvalidInputError(
                f"PGM {path} holds {len(numbers)} samples, expected {count}"
            )
        pixels = np.asarray(numbers[:count], dtype=float)
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        payload = data[offset : offset + count * dtype.itemsize]
        if len(payload) < count * dtype.itemsize:
            raise InvalidInputError(f"PGM {path} payload is truncated")
        pixels = np.frombuffer(payload, dtype=dtype).astype(float)
    return pixels.reshape(height, width), maxval


def encode_pgm(pixels: np.ndarray) -> bytes:
    """Encode an 8-bit image as binary PGM (P5)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise InvalidInputError(f"PGM images are 2D, got shape {pixels.shape}")
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def encode_png(pixels: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(
        buffer, format="PNG"
    )
    return buffer.getvalue()


def read_png(path: PathLike) -> Tuple[np.ndarray, int]:
    """Read a PNG as grayscale; 16-bit images keep their full range."""
    with Image.open(path) as image:
        if image.mode in ("I;16", "I;16B", "I"):
            return np.asarray(image, dtype=float), 65535
        return np.asarray(image.convert("L"), dtype=float), 255


def read_image(path: PathLike) -> Tuple[np.ndarray, int]:
    """Read a PGM or PNG file, dispatching on the suffix.

    Raises:
        InvalidInputError: On unsupported suffixes or unreadable content
    """
    suffix = Path(path).suffix.lower()
    if suffix in PGM_SUFFIXES:
        return read_pgm(path)
    if suffix in PNG_SUFFIXES:
        try:
            return read_png(path)
        except (OSError, ValueError) as e:
            raise InvalidInputError(f"Cannot read PNG {path}: {e}") from e
    raise InvalidInputError(f"Unsupported image format '{suffix}' for {path}")


def write_image(pixels: np.ndarray, path: PathLike) -> Path:
    """Write an 8-bit image atomically as PGM (P5) or PNG by suffix."""
    suffix = Path(path).suffix.lower()
    if suffix in PNG_SUFFIXES:
        return FileHandler.write_bytes_atomic(encode_png(pixels), path)
    if suffix in PGM_SUFFIXES:
        return FileHandler.write_bytes_atomic(encode_pgm(pixels), path)
    raise InvalidInputError(f"Unsupported image format '{suffix}' for {path}")


def to_unit_range(pixels: np.ndarray, maxval: int) -> np.ndarray:
    """Map ``[0, maxval]`` affinely onto ``[-1, 1]``."""
    return 2.0 * np.asarray(pixels, dtype=float) / float(maxval) - 1.0


def to_uint8(values: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Map ``[-1, 1]`` onto ``[0, 255]``; values outside are clipped to 0..255.

    With ``clamp`` the values are first clipped to [-1, 1], otherwise the whole
    range of the input is rescaled to fit.
    """
    values = np.asarray(values, dtype=float)
    if clamp:
        values = np.clip(values, -1.0, 1.0)
    else:
        low, high = float(values.min()), float(values.max())
        span = max(high - low, 1e-12)
        values = 2.0 * (values - low) / span - 1.0
    return np.clip(np.rint((values + 1.0) * 127.5), 0, 255).astype(np.uint8)


def resize_bilinear(pixels: np.ndarray, size: int) -> np.ndarray:
    """Resize a 2D float image to ``size x size`` without cropping."""
    pixels = np.asarray(pixels, dtype=np.float32)
    if pixels.shape == (size, size):
        return pixels.astype(float)
    image = Image.fromarray(pixels)
    return np.asarray(image.resize((size, size), Image.BILINEAR), dtype=float)


def make_grid(fields: Sequence[np.ndarray], columns: int, pad: int = 1) -> np.ndarray:
    """Tile equally shaped fields row by row; 1D fields become one-pixel-high rows.

    Padding pixels are set to -1 (black after :func:`to_uint8`).
    """
    fields = [np.atleast_2d(np.asarray(f, dtype=float)) for f in fields]
    if not fields:
        raise InvalidInputError("Cannot build a grid of zero images")
    columns = max(1, min(columns, len(fields)))
    rows = -(-len(fields) // columns)
    height, width = fields[0].shape
    grid = np.full(
        (rows * (height + pad) + pad, columns * (width + pad) + pad), -1.0
    )
    for k, field in enumerate(fields):
        r, c = divmod(k, columns)
        top, left = pad + r * (height + pad), pad + c * (width + pad)
        grid[top : top + height, left : left + width] = field
    return grid


def make_filmstrip(
    frames: Sequence[np.ndarray], field_ndim: int, pad: int = 1
) -> np.ndarray:
    """Lay recorded states out with one row per chain and one column per frame.

    Args:
        frames: Recorded states, each of shape (*batch, *field)
        field_ndim: Spatial rank of the fields (1 or 2)
        pad: Padding between tiles in pixels
    """
    stacks = []
    for frame in frames:
        frame = np.asarray(frame, dtype=float)
        field_shape = frame.shape[frame.ndim - field_ndim :]
        stacks.append(frame.reshape((-1,) + field_shape))
    tiles = [stack[chain] for chain in range(stacks[0].shape[0]) for stack in stacks]
    return make_grid(tiles, columns=len(stacks), pad=pad)
