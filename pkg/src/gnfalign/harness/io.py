"""Dataset file formats: pts annotations, P5 graymaps, manifests.

The pts grammar::

    version: 1
    n_points: 68
    {
    x y
    ...
    }

Images are binary portable graymaps (magic P5, maxval 255), the only
codec in core. Manifests are one tab-separated line per example:
image_path, pts_path, then the bbox x, y, w, h; relative paths resolve
against the manifest's directory.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..shape_model import as_shape


class DataFormatError(ValueError):
    """A dataset file violates its documented grammar."""


class PtsHeaderError(DataFormatError):
    pass


class PtsCountError(DataFormatError):
    pass


class PtsValueError(DataFormatError):
    pass


class ImageFormatError(DataFormatError):
    pass


@dataclass(frozen=True)
class AnnotatedExample:
    image_path: Path
    pts_path: Path
    shape: np.ndarray
    bbox: tuple[float, float, float, float]

    def load_image(self) -> np.ndarray:
        return load_gray(self.image_path)


def load_pts(path) -> np.ndarray:
    """Parse a pts annotation file into an (N, 2) shape array."""
    text = Path(path).read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if len(lines) < 4:
        raise PtsHeaderError(f"{path}: too short to be a pts file")
    if not re.fullmatch(r"version:\s*1", lines[0]):
        raise PtsHeaderError(f"{path}: expected 'version: 1' header, got {lines[0]!r}")
    m = re.fullmatch(r"n_points:\s*(\d+)", lines[1])
    if not m:
        raise PtsHeaderError(f"{path}: expected 'n_points: N' header, got {lines[1]!r}")
    n_points = int(m.group(1))
    if lines[2] != "{":
        raise PtsHeaderError(f"{path}: expected '{{' after headers, got {lines[2]!r}")
    try:
        closing = lines.index("}")
    except ValueError:
        raise PtsHeaderError(f"{path}: missing closing '}}'") from None
    body = lines[3:closing]
    if len(body) != n_points:
        raise PtsCountError(
            f"{path}: header says {n_points} points but {len(body)} coordinate lines found"
        )
    points = np.empty((n_points, 2))
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != 2:
            raise PtsValueError(f"{path}: line {i + 4}: expected 'x y', got {line!r}")
        try:
            points[i, 0] = float(parts[0])
            points[i, 1] = float(parts[1])
        except ValueError:
            raise PtsValueError(f"{path}: line {i + 4}: non-numeric coordinate in {line!r}") from None
    if not np.all(np.isfinite(points)):
        raise PtsValueError(f"{path}: non-finite coordinates")
    return points


def save_pts(path, shape) -> None:
    """Write a shape in the pts format, 6 decimal places."""
    shape = as_shape(shape)
    lines = ["version: 1", f"n_points: {shape.shape[0]}", "{"]
    lines.extend(f"{x:.6f} {y:.6f}" for x, y in shape)
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_gray(path) -> np.ndarray:
    """Read a binary portable graymap (P5, maxval 255) as uint8 (H, W)."""
    data = Path(path).read_bytes()
    if len(data) < 2 or data[:2] != b"P5":
        magic = data[:2].decode("ascii", "replace") if len(data) >= 2 else "<empty>"
        raise ImageFormatError(
            f"{path}: unsupported magic {magic!r}; expected a binary graymap (P5)"
        )

    # header: P5, width, height, maxval as whitespace-separated tokens,
    # with '#' comments, followed by a single whitespace byte and the payload
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] not in (0x0A, 0x0D):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated graymap header")
        tokens.append(data[start:pos])
    pos += 1  # the single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ImageFormatError(f"{path}: non-numeric graymap header fields {tokens}") from None
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: bad graymap dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"{path}: maxval {maxval} unsupported; expected 255")
    payload = data[pos : pos + width * height]
    if len(payload) != width * height:
        raise IOError(
            f"{path}: truncated graymap payload, expected {width * height} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def save_gray(path, image) -> None:
    """Write a uint8 (H, W) array as a binary P5 graymap."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"expected uint8 (H, W) image, got {img.dtype} {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def load_manifest(path) -> list[AnnotatedExample]:
    """Read a dataset manifest; shapes are loaded eagerly, images are not."""
    path = Path(path)
    base = path.parent
    examples = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise DataFormatError(
                f"{path}: line {lineno}: expected image, pts and 4 bbox fields, got {len(parts)}"
            )
        image_path = base / parts[0] if not Path(parts[0]).is_absolute() else Path(parts[0])
        pts_path = base / parts[1] if not Path(parts[1]).is_absolute() else Path(parts[1])
        try:
            bbox = tuple(float(v) for v in parts[2:6])
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: non-numeric bbox") from None
        if bbox[2] <= 0 or bbox[3] <= 0:
            raise DataFormatError(f"{path}: line {lineno}: bbox must have positive area")
        examples.append(AnnotatedExample(image_path, pts_path, load_pts(pts_path), bbox))
    if not examples:
        raise DataFormatError(f"{path}: empty manifest")
    return examples


def save_manifest(path, rows) -> None:
    """rows: iterables of (image_path, pts_path, x, y, w, h), written verbatim."""
    lines = []
    for image_path, pts_path, x, y, w, h in rows:
        lines.append(f"{image_path}\t{pts_path}\t{x:.3f}\t{y:.3f}\t{w:.3f}\t{h:.3f}")
    Path(path).write_text("\n".join(lines) + "\n")
