"""Dataset ingestion, archives, and a synthetic desk-scale corpus.

Stego output must survive transmission bit-exact, so image writing is
restricted to lossless PNG; ingestion accepts whatever Pillow can read.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .codec import ImageBuffer, dequantize, quantize
from .errors import InvalidArgumentError

ARCHIVE_VERSION = 1


def synthetic_corpus(n: int, height: int, width: int, channels: int = 1, seed: int = 0) -> np.ndarray:
    """Smooth random images in [-1, 1]: low-frequency waves plus soft blobs.

    A stand-in corpus for desk-scale experiments where a real photo
    directory is unavailable; diverse enough for a small adversarial model
    to learn while keeping per-pixel variability high.
    """
    if n < 1 or height < 1 or width < 1 or channels < 1:
        raise InvalidArgumentError("corpus dimensions must be positive")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    yy = yy / max(height - 1, 1)
    xx = xx / max(width - 1, 1)
    out = np.empty((n, height, width, channels), dtype=np.float64)
    for i in range(n):
        base = np.zeros((height, width))
        for _ in range(rng.integers(2, 5)):
            fy, fx = rng.uniform(-3.0, 3.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            base += rng.uniform(0.3, 1.0) * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
        for _ in range(rng.integers(1, 4)):
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            s = rng.uniform(0.05, 0.35)
            base += rng.uniform(-1.5, 1.5) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        base += rng.uniform(-0.5, 0.5)
        scale = max(np.std(base), 1e-6)
        for ch in range(channels):
            jitter = 0.0 if channels == 1 else 0.1 * rng.standard_normal((height, width))
            out[i, :, :, ch] = np.tanh(1.1 * base / scale + jitter)
    return out


def split_corpus(images: np.ndarray, heldout_fraction: float = 0.1, seed: int = 0):
    """Deterministic train / held-out split."""
    if not 0.0 <= heldout_fraction < 1.0:
        raise InvalidArgumentError("heldout_fraction must lie in [0, 1)")
    n = images.shape[0]
    n_held = int(round(heldout_fraction * n))
    order = np.random.default_rng(seed).permutation(n)
    return images[order[n_held:]], images[order[:n_held]]


def save_archive(path, images: np.ndarray, sources=None):
    """Raw tensor container for normalized image stacks."""
    images = np.asarray(images, dtype=np.float32)
    meta = {
        "version": ARCHIVE_VERSION,
        "count": int(images.shape[0]),
        "sources": list(sources) if sources else [],
    }
    with open(path, "wb") as fh:
        np.savez(fh, images=images, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8))


def load_archive(path):
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("version") != ARCHIVE_VERSION:
            raise InvalidArgumentError(f"unsupported archive version {meta.get('version')!r}")
        return z["images"].astype(np.float64), meta


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _prepare(img: Image.Image, height: int, width: int, channels: int) -> np.ndarray:
    img = img.convert("L" if channels == 1 else "RGB")
    # center-crop to the target aspect, then resize
    aspect = width / height
    w0, h0 = img.size
    if w0 / h0 > aspect:
        new_w = int(round(h0 * aspect))
        left = (w0 - new_w) // 2
        img = img.crop((left, 0, left + new_w, h0))
    elif w0 / h0 < aspect:
        new_h = int(round(w0 / aspect))
        top = (h0 - new_h) // 2
        img = img.crop((0, top, w0, top + new_h))
    img = img.resize((width, height), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr / 127.5 - 1.0


def ingest_directory(src_dir, height: int, width: int, channels: int = 1):
    """Read an image directory into a normalized stack; skips unreadable files.

    Returns (images, sources, warnings); ordering follows sorted filenames
    so repeated runs produce identical archives.
    """
    names = sorted(os.listdir(src_dir))
    images, sources, warnings = [], [], []
    for name in names:
        path = os.path.join(src_dir, name)
        if not os.path.isfile(path):
            continue
        try:
            with Image.open(path) as img:
                images.append(_prepare(img, height, width, channels))
            sources.append(name)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            warnings.append(f"{name}: {exc}")
    if not images:
        raise InvalidArgumentError(f"no readable images in {src_dir}")
    return np.stack(images), sources, warnings


def save_png(path, img: ImageBuffer):
    """Write an image losslessly; refuses non-PNG suffixes for stego safety."""
    path = str(path)
    if not path.lower().endswith(".png"):
        raise InvalidArgumentError("stego images must be written as lossless PNG")
    q = quantize(img)
    if q.shape[2] == 1:
        Image.fromarray(q[:, :, 0], mode="L").save(path, format="PNG")
    elif q.shape[2] == 3:
        Image.fromarray(q, mode="RGB").save(path, format="PNG")
    else:
        raise InvalidArgumentError(f"cannot write {q.shape[2]}-channel PNG")


def load_image_file(path, provenance: str = "dataset") -> ImageBuffer:
    """Read any Pillow-supported image into a normalized buffer."""
    try:
        with Image.open(path) as img:
            mode = "L" if img.mode in ("L", "1", "I", "F") else "RGB"
            arr = np.asarray(img.convert(mode), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return dequantize(arr, provenance=provenance)
