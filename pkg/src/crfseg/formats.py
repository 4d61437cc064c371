"""File formats: binary PPM/PGM images, the CRFT tensor container,
parameter files, run configs and dataset manifests.

PPM (P6) and PGM (P5) are the zero-dependency baseline formats; 8-bit PNG
is supported when Pillow is importable.

CRFT tensor layout (little endian throughout):
    magic   4 bytes  b"CRFT"
    version u8       1
    dtype   u8       0 = float32
    ndims   u8
    dims    ndims x u32
    payload product(dims) float32, row-major
A parameter file is one container holding two records back to back:
weights (L x M) followed by the compatibility matrix (L x L).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .meanfield import CrfParams

__all__ = [
    "FormatError",
    "load_image",
    "save_image",
    "load_label_map",
    "save_label_map",
    "read_tensor",
    "write_tensor",
    "load_unary",
    "save_marginal",
    "save_labels",
    "argmax_labels",
    "save_params",
    "load_params",
    "read_manifest",
    "write_manifest",
]

_MAGIC = b"CRFT"
_VERSION = 1
_DTYPE_F32 = 0


class FormatError(ValueError):
    """Raised for malformed or unsupported input files."""


def _has_pillow() -> bool:
    try:
        import PIL.Image  # noqa: F401
        return True
    except ImportError:
        return False


# -- netpbm ------------------------------------------------------------------


def _read_pnm_header(data: bytes):
    # header tokens may be separated by whitespace and '#' comments
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated netpbm header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as e:
        raise FormatError("bad netpbm header") from e
    return w, h, maxval, pos


def load_image(path) -> np.ndarray:
    """RGB image (H x W x 3, uint8 values 0..255) from binary PPM or PNG."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P6":
        w, h, maxval, pos = _read_pnm_header(data)
        if maxval != 255:
            raise FormatError(f"only maxval 255 supported, got {maxval}")
        payload = data[pos : pos + w * h * 3]
        if len(payload) < w * h * 3:
            raise FormatError("truncated PPM payload")
        return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()
    if data[:2] == b"P5":
        raise FormatError("grayscale PGM is not an RGB image input")
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        if not _has_pillow():
            raise FormatError("PNG input requires Pillow")
        import PIL.Image

        with PIL.Image.open(path) as im:
            if im.mode != "RGB":
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.uint8).copy()
    raise FormatError(f"unsupported image format in {path}")


def save_image(image: np.ndarray, path) -> None:
    """Write an RGB image as binary PPM (or PNG by extension)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected H x W x 3 image")
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    path = Path(path)
    if path.suffix.lower() == ".png":
        if not _has_pillow():
            raise FormatError("PNG output requires Pillow")
        import PIL.Image

        PIL.Image.fromarray(image, mode="RGB").save(path)
        return
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(image.tobytes())


def load_label_map(path) -> np.ndarray:
    """Label map (H x W uint8) from binary PGM or indexed/grayscale PNG."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P5":
        w, h, maxval, pos = _read_pnm_header(data)
        if maxval != 255:
            raise FormatError(f"only maxval 255 supported, got {maxval}")
        payload = data[pos : pos + w * h]
        if len(payload) < w * h:
            raise FormatError("truncated PGM payload")
        return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        if not _has_pillow():
            raise FormatError("PNG input requires Pillow")
        import PIL.Image

        with PIL.Image.open(path) as im:
            if im.mode not in ("L", "P"):
                raise FormatError(f"label PNG must be 8-bit single channel, got {im.mode}")
            return np.asarray(im, dtype=np.uint8).copy()
    raise FormatError(f"unsupported label map format in {path}")


def save_label_map(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("label map must be 2-d")
    labels = labels.astype(np.uint8)
    path = Path(path)
    if path.suffix.lower() == ".png":
        if not _has_pillow():
            raise FormatError("PNG output requires Pillow")
        import PIL.Image

        PIL.Image.fromarray(labels, mode="L").save(path)
        return
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(labels.tobytes())


# -- CRFT tensors --------------------------------------------------------------


def write_tensor(f, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.float32)
    f.write(_MAGIC)
    f.write(struct.pack("<BBB", _VERSION, _DTYPE_F32, array.ndim))
    for dim in array.shape:
        f.write(struct.pack("<I", dim))
    f.write(array.astype("<f4").tobytes(order="C"))


def read_tensor(f) -> np.ndarray:
    magic = f.read(4)
    if magic != _MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    header = f.read(3)
    if len(header) < 3:
        raise FormatError("truncated tensor header")
    version, dtype, ndims = struct.unpack("<BBB", header)
    if version != _VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    if dtype != _DTYPE_F32:
        raise FormatError(f"unsupported tensor dtype {dtype}")
    dims = []
    for _ in range(ndims):
        raw = f.read(4)
        if len(raw) < 4:
            raise FormatError("truncated tensor dims")
        dims.append(struct.unpack("<I", raw)[0])
    count = int(np.prod(dims)) if dims else 1
    payload = f.read(count * 4)
    if len(payload) < count * 4:
        raise FormatError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def load_unary(path, height: int, width: int, n_labels: int) -> np.ndarray:
    """Unary field ((H*W) x L float) from a CRFT file with dims (H, W, L)."""
    with open(path, "rb") as f:
        t = read_tensor(f)
    if t.shape != (height, width, n_labels):
        raise FormatError(
            f"unary dims {t.shape} do not match configured ({height}, {width}, {n_labels})"
        )
    return t.reshape(height * width, n_labels).astype(np.float64)


def save_unary(unary: np.ndarray, height: int, width: int, path) -> None:
    unary = np.asarray(unary)
    with open(path, "wb") as f:
        write_tensor(f, unary.reshape(height, width, -1))


def save_marginal(Q: np.ndarray, height: int, width: int, path) -> None:
    Q = np.asarray(Q)
    with open(path, "wb") as f:
        write_tensor(f, Q.reshape(height, width, -1))


def argmax_labels(Q: np.ndarray, height: int, width: int) -> np.ndarray:
    """Label map from marginals; ties break toward the lowest label index."""
    return np.argmax(Q, axis=1).reshape(height, width)


def save_labels(Q: np.ndarray, height: int, width: int, path) -> None:
    save_label_map(argmax_labels(Q, height, width), path)


def save_params(params: CrfParams, path) -> None:
    with open(path, "wb") as f:
        write_tensor(f, params.weights)
        write_tensor(f, params.compatibility)


def load_params(path) -> CrfParams:
    with open(path, "rb") as f:
        weights = read_tensor(f)
        compatibility = read_tensor(f)
    return CrfParams(weights.astype(np.float64), compatibility.astype(np.float64))


# -- manifests -----------------------------------------------------------------


def read_manifest(path) -> list[tuple[str, str, str]]:
    """One sample per line: image, unary and ground-truth paths, tab separated.
    Relative paths resolve against the manifest's directory."""
    path = Path(path)
    base = path.parent
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 tab-separated paths")
        rows.append(tuple(str(base / p) for p in parts))
    if not rows:
        raise FormatError(f"{path}: empty manifest")
    return rows


def write_manifest(rows, path) -> None:
    with open(path, "w") as f:
        for image, unary, gt in rows:
            f.write(f"{image}\t{unary}\t{gt}\n")
