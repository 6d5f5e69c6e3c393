"""Image ingestion, pyramids, gradients, sub-pixel sampling and noise.

Images are kept as row-major float64 intensity rasters normalized to
``[0, 1]``. All functions here are pure: they never mutate their inputs
and are safe to call from multiple workers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernels import bilinear_many

# Rec.601 luma weights used for RGB -> gray conversion.
_LUMA = np.array([0.299, 0.587, 0.114])

# 5-tap binomial low-pass applied separably before each 2x decimation.
_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class ImageError(ValueError):
    """Unreadable or unsupported image input."""


@dataclass(frozen=True)
class GrayImage:
    """Grayscale raster with intensities in [0, 1].

    Attributes
    ----------
    data : (height, width) float64 array, row-major, values in [0, 1]
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ImageError(f"expected 2-D intensity raster, got shape {data.shape}")
        lo = float(data.min()) if data.size else 0.0
        hi = float(data.max()) if data.size else 0.0
        if lo < -1e-12 or hi > 1.0 + 1e-12:
            raise ImageError(f"intensities outside [0, 1]: min={lo}, max={hi}")
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class Pyramid:
    """Multi-resolution stack; ``levels[0]`` is the finest (input) image.

    Level ``l`` has dimensions ``floor(level-0 dims / 2**l)`` and pixel
    ``i`` of level ``l`` sits at level-0 coordinate ``2**l * i``.
    """

    levels: tuple[GrayImage, ...]

    @property
    def n_levels(self) -> int:
        return len(self.levels)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _parse_pnm_tokens(raw: bytes, count: int):
    """Yield the first `count` whitespace/comment-delimited header tokens."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(raw):
            raise ImageError("truncated PNM header")
        ch = raw[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            pos = raw.find(b"\n", pos)
            if pos < 0:
                raise ImageError("truncated PNM comment")
        else:
            end = pos
            while end < len(raw) and not raw[end : end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    return tokens, pos


def _load_pgm(path: Path) -> GrayImage:
    raw = path.read_bytes()
    if raw[:2] not in (b"P2", b"P5"):
        raise ImageError(f"{path}: not a P2/P5 PGM file")
    magic = raw[:2].decode()
    tokens, pos = _parse_pnm_tokens(raw[2:], 3)
    width, height, maxval = (int(t) for t in tokens)
    if width <= 0 or height <= 0 or maxval <= 0 or maxval > 65535:
        raise ImageError(f"{path}: bad PGM header ({width}x{height}, maxval {maxval})")
    if magic == "P5":
        body = raw[2 + pos + 1 :]  # single whitespace byte after maxval
        if maxval < 256:
            pix = np.frombuffer(body[: width * height], dtype=np.uint8)
        else:
            pix = np.frombuffer(body[: 2 * width * height], dtype=">u2")
        if pix.size != width * height:
            raise ImageError(f"{path}: truncated PGM payload")
    else:
        vals = raw[2 + pos :].split()
        if len(vals) < width * height:
            raise ImageError(f"{path}: truncated PGM payload")
        pix = np.array([int(v) for v in vals[: width * height]], dtype=np.int64)
    data = pix.reshape(height, width).astype(np.float64) / maxval
    return GrayImage(data)


def _load_png(path: Path) -> GrayImage:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise ImageError("Pillow is required for PNG input") from exc
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            arr = np.asarray(im)
    except Exception as exc:
        raise ImageError(f"{path}: unreadable PNG ({exc})") from exc
    if arr.dtype == np.uint8:
        scale = 255.0
    elif arr.dtype == np.uint16 or arr.dtype == np.int32:
        scale = 65535.0
    else:
        raise ImageError(f"{path}: unsupported PNG sample type {arr.dtype}")
    data = arr.astype(np.float64) / scale
    if data.ndim == 3:
        if data.shape[2] == 4:
            data = data[:, :, :3]
        if data.shape[2] != 3:
            raise ImageError(f"{path}: unsupported channel count {data.shape[2]}")
        data = data @ _LUMA
    return GrayImage(np.clip(data, 0.0, 1.0))


def load_image(path) -> GrayImage:
    """Load a PGM (P2/P5) or PNG file as a normalized grayscale image.

    8-bit inputs are scaled by 1/255 (16-bit by 1/65535); color PNGs are
    converted with Rec.601 luma weights.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"{path}: no such file")
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return _load_pgm(path)
    if suffix == ".png":
        return _load_png(path)
    raise ImageError(f"{path}: unsupported format {suffix!r} (expected .pgm or .png)")


def save_pgm(img: GrayImage, path, maxval: int = 65535) -> None:
    """Write a binary P5 PGM. ``maxval`` 65535 keeps quantization at ~1.5e-5."""
    if not 0 < maxval <= 65535:
        raise ImageError(f"bad maxval {maxval}")
    path = Path(path)
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode()
    quant = np.rint(img.data * maxval)
    if maxval < 256:
        body = quant.astype(np.uint8).tobytes()
    else:
        body = quant.astype(">u2").tobytes()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + body)
    tmp.replace(path)


def save_png(img: GrayImage, path) -> None:
    from PIL import Image

    path = Path(path)
    arr = np.rint(img.data * 255.0).astype(np.uint8)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(arr, mode="L").save(tmp, format="PNG")
    tmp.replace(path)


_FRAME_RE = re.compile(r"^frame_(\d{6})\.(pgm|png)$")


def sequence_frame_name(index: int, ext: str = "pgm") -> str:
    return f"frame_{index:06d}.{ext}"


def load_sequence(directory) -> list[GrayImage]:
    """Load a directory of frames named ``frame_%06d`` with one extension."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageError(f"{directory}: not a sequence directory")
    found = {}
    for entry in directory.iterdir():
        m = _FRAME_RE.match(entry.name)
        if m:
            found[int(m.group(1))] = entry
    if not found:
        raise ImageError(f"{directory}: no frame_%06d.pgm/png frames found")
    indices = sorted(found)
    if indices != list(range(len(indices))):
        raise ImageError(f"{directory}: frame indices are not contiguous from 0")
    return [load_image(found[i]) for i in indices]


def write_sequence(directory, frames, ext: str = "pgm") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        path = directory / sequence_frame_name(i, ext)
        if ext == "pgm":
            save_pgm(frame, path)
        elif ext == "png":
            save_png(frame, path)
        else:
            raise ImageError(f"unsupported sequence extension {ext!r}")


# ---------------------------------------------------------------------------
# Pyramid, sampling, gradients, noise
# ---------------------------------------------------------------------------


def _smooth_separable(data: np.ndarray) -> np.ndarray:
    """5-tap binomial filter along both axes with replicated borders."""
    pad = np.pad(data, 2, mode="edge")
    tmp = sum(w * pad[:, k : k + data.shape[1]] for k, w in enumerate(_BINOMIAL5))
    out = sum(w * tmp[k : k + data.shape[0], :] for k, w in enumerate(_BINOMIAL5))
    return out


def build_pyramid(img: GrayImage, n_levels: int) -> Pyramid:
    """Binomial-filtered 2x image pyramid with ``n_levels`` levels.

    Level 0 is the input unchanged; each coarser level is the low-passed
    previous level decimated at even pixel indices.
    """
    if n_levels < 1:
        raise ImageError(f"need at least 1 pyramid level, got {n_levels}")
    levels = [img]
    current = img.data
    for _ in range(n_levels - 1):
        h, w = current.shape
        if h < 2 or w < 2:
            raise ImageError(
                f"{n_levels} pyramid levels too deep for a {img.width}x{img.height} image"
            )
        smooth = _smooth_separable(current)
        current = np.ascontiguousarray(smooth[0 : 2 * (h // 2) : 2, 0 : 2 * (w // 2) : 2])
        levels.append(GrayImage(np.clip(current, 0.0, 1.0)))
        current = levels[-1].data
    return Pyramid(tuple(levels))


def sample_bilinear(img: GrayImage, x: float, y: float):
    """Bilinear sample at sub-pixel ``(x, y)``; returns ``(value, clamped)``.

    Out-of-bounds coordinates clamp to the border and are flagged.
    """
    vals, clamped = bilinear_many(img.data, np.array([x]), np.array([y]))
    return float(vals[0]), bool(clamped[0])


def gradient(img: GrayImage) -> np.ndarray:
    """Central-difference gradient field, shape (H, W, 2) as (d/dx, d/dy).

    Borders are replicated, so edge gradients are half the one-sided
    difference.
    """
    if img.height < 3 or img.width < 3:
        raise ImageError("gradient needs at least a 3x3 image")
    pad = np.pad(img.data, 1, mode="edge")
    gx = 0.5 * (pad[1:-1, 2:] - pad[1:-1, :-2])
    gy = 0.5 * (pad[2:, 1:-1] - pad[:-2, 1:-1])
    return np.stack([gx, gy], axis=-1)


def add_gaussian_noise(img: GrayImage, variance: float, seed) -> GrayImage:
    """Add i.i.d. Gaussian noise of the given variance, then clamp to [0, 1].

    Deterministic for a fixed seed; ``variance == 0`` returns the input
    unchanged.
    """
    if variance < 0:
        raise ImageError(f"negative noise variance {variance}")
    if variance == 0:
        return img
    rng = np.random.default_rng(seed)
    noisy = img.data + rng.normal(0.0, np.sqrt(variance), size=img.data.shape)
    return GrayImage(np.clip(noisy, 0.0, 1.0))


def frame_noise_seed(base_seed: int, frame_index: int) -> np.random.SeedSequence:
    """Per-frame derived seed so noisy sequences are reproducible."""
    return np.random.SeedSequence(entropy=(int(base_seed), int(frame_index)))
