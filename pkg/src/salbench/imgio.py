"""Reading and writing image files.

Binary PGM (P5) and PPM (P6) with 8-bit samples are supported natively.
PNG is optional and routed through Pillow when installed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DatasetError


def _read_pnm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Header tokens (magic excluded), skipping whitespace and # comments."""
    tokens: list[int] = []
    pos = 2  # past magic
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError("truncated PNM header")
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1  # single whitespace after maxval


def read_pnm(path) -> np.ndarray:
    """Decode binary PGM/PPM into uint8 (H, W) or (H, W, 3)."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise DatasetError(f"{path}: not a binary PGM/PPM file (magic {magic!r})")
    (width, height, maxval), offset = _read_pnm_tokens(data, 3)
    if maxval <= 0 or maxval > 255:
        raise DatasetError(f"{path}: unsupported maxval {maxval} (8-bit only)")
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    payload = data[offset : offset + need]
    if len(payload) < need:
        raise DatasetError(f"{path}: truncated pixel data ({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, 3).copy()


def write_pgm(path, arr: np.ndarray) -> None:
    """Write uint8 (H, W) as binary P5."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    h, w = arr.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())


def write_ppm(path, arr: np.ndarray) -> None:
    """Write uint8 (H, W, 3) as binary P6."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    h, w, _ = arr.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes())


def read_image(path) -> np.ndarray:
    """Load PGM/PPM/PNG into uint8 (H, W) or (H, W, 3)."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"image file not found: {path}")
    head = path.read_bytes()[:2]
    if head in (b"P5", b"P6"):
        return read_pnm(path)
    if head == b"\x89P" or path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise DatasetError(f"{path}: PNG support requires the optional pillow dependency") from exc
        with Image.open(path) as im:
            im = im.convert("RGB")
            return np.asarray(im, dtype=np.uint8)
    raise DatasetError(f"{path}: undecodable image (supported: binary PGM/PPM, PNG)")


def write_png(path, arr: np.ndarray) -> None:
    """Write uint8 (H, W) or (H, W, 3) as PNG; needs pillow."""
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - environment dependent
        raise DatasetError("PNG output requires the optional pillow dependency") from exc
    Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint8)).save(Path(path))
