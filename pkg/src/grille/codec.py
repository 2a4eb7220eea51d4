"""Message bits in and out of image bit planes through a grille key.

Images travel through the toolkit as normalized real tensors in [-1, 1];
bit-plane arithmetic happens on the quantized 8-bit view and the result
is dequantized back, so embedding is bit-exact while the optimization
pipeline stays in reals.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import CapacityExceededError, InvalidArgumentError, KeyPairingError
from .keys import GrilleKey, Mask, _CounterPrg, capacity

PROVENANCES = ("dataset", "generated", "expanded-cover", "stego")


@dataclass(eq=False)
class ImageBuffer:
    """Image as a normalized real tensor, shape (height, width, channels)."""

    values: np.ndarray
    provenance: str = "dataset"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.size == 0:
            raise InvalidArgumentError(f"image must be HxWxC, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise InvalidArgumentError("image values must be finite")
        if v.min() < -1.0 - 1e-9 or v.max() > 1.0 + 1e-9:
            raise InvalidArgumentError("image values must lie in [-1, 1]")
        self.values = np.clip(v, -1.0, 1.0)
        if self.provenance not in PROVENANCES:
            raise InvalidArgumentError(f"unknown provenance {self.provenance!r}")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]


@dataclass(eq=False)
class MessageBits:
    """A plaintext bit sequence."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8).ravel()
        if b.size and not np.isin(b, (0, 1)).all():
            raise InvalidArgumentError("message bits must be 0/1")
        self.bits = b

    @property
    def length(self):
        return int(self.bits.size)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MessageBits":
        if not data:
            return cls(np.zeros(0, dtype=np.uint8))
        return cls(np.unpackbits(np.frombuffer(data, dtype=np.uint8)))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "MessageBits":
        return cls(rng.integers(0, 2, size=n, dtype=np.uint8))

    def to_bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def from_bitstring(cls, text: str) -> "MessageBits":
        chars = [c for c in text if not c.isspace()]
        if any(c not in "01" for c in chars):
            raise InvalidArgumentError("bit-string file may contain only 0/1 and whitespace")
        return cls(np.array([int(c) for c in chars], dtype=np.uint8))

    def __eq__(self, other):
        return isinstance(other, MessageBits) and np.array_equal(self.bits, other.bits)


def quantize(img) -> np.ndarray:
    """Map [-1, 1] reals to the 8-bit view: round((x + 1) * 127.5), clamped."""
    v = img.values if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)
    q = np.rint((v + 1.0) * 127.5)
    return np.clip(q, 0, 255).astype(np.uint8)


def dequantize(q: np.ndarray, provenance: str = "dataset") -> ImageBuffer:
    """Inverse of quantize on integers: x = q / 127.5 - 1."""
    q = np.asarray(q)
    if q.dtype.kind not in "ui" or (q.size and (q.min() < 0 or q.max() > 255)):
        raise InvalidArgumentError("quantized values must be integers in 0..255")
    return ImageBuffer(q.astype(np.float64) / 127.5 - 1.0, provenance=provenance)


def _padding_prg(key: GrilleKey) -> _CounterPrg:
    # keyed padding; explicit-cells keys fall back to a digest of the cells
    if key.seed is not None:
        return _CounterPrg(key.seed, domain=b"|message-pad-v1")
    cells_key = hashlib.sha256(np.packbits(key.cells).tobytes()).digest()
    return _CounterPrg(cells_key, domain=b"|message-pad-v1")


def padded_bits(key: GrilleKey, msg: MessageBits) -> np.ndarray:
    """Message bits extended to the grille capacity with keyed pseudorandom padding."""
    cap = capacity(key)
    if msg.length > cap:
        raise CapacityExceededError(
            f"message of {msg.length} bits exceeds grille capacity {cap}"
        )
    if msg.length == cap:
        return msg.bits.copy()
    pad = _padding_prg(key).bits(cap - msg.length)
    return np.concatenate([msg.bits, pad])


def expand_message(
    cover: ImageBuffer,
    mask: Mask,
    key: GrilleKey,
    msg: MessageBits,
) -> ImageBuffer:
    """Write message bits into the grille cells of a partially-known image.

    Bit i of the (padded) message lands in bit plane ``key.bpi`` of the
    quantized pixel at the i-th grille 1-cell in raster order, on channel
    ``key.channel``; every other pixel is untouched.  Extracting from the
    result immediately returns the message.
    """
    if (cover.height, cover.width) != (key.height, key.width):
        raise InvalidArgumentError("cover dimensions do not match the key")
    if (mask.height, mask.width) != (key.height, key.width):
        raise InvalidArgumentError("mask dimensions do not match the key")
    if key.channel >= cover.channels:
        raise InvalidArgumentError(
            f"key channel {key.channel} out of range for {cover.channels}-channel image"
        )
    if key.mask_digest is not None and key.mask_digest != mask.digest():
        raise KeyPairingError("grille key was derived against a different mask")
    if np.any(key.cells > mask.known):
        raise KeyPairingError("grille cells fall outside the known region of the mask")

    bits = padded_bits(key, msg)
    q = quantize(cover)
    plane = np.uint8(1 << (key.bpi - 1))
    chan = q[:, :, key.channel].ravel()
    idx = key.cell_indices
    chan[idx] = (chan[idx] & ~plane) | (bits.astype(np.uint8) * plane)
    q[:, :, key.channel] = chan.reshape(key.height, key.width)
    return dequantize(q, provenance="expanded-cover")


def extract(img: ImageBuffer, key: GrilleKey) -> MessageBits:
    """Read the grille cells' bit plane from an image; length = capacity(key)."""
    if (img.height, img.width) != (key.height, key.width):
        raise InvalidArgumentError("image dimensions do not match the key")
    if key.channel >= img.channels:
        raise InvalidArgumentError(
            f"key channel {key.channel} out of range for {img.channels}-channel image"
        )
    q = quantize(img)
    chan = q[:, :, key.channel].ravel()
    bits = (chan[key.cell_indices] >> (key.bpi - 1)) & 1
    return MessageBits(bits)


def bit_error_rate(a: MessageBits, b: MessageBits) -> float:
    """Hamming distance over length for two equal-length non-empty bit sequences."""
    if a.length != b.length:
        raise InvalidArgumentError(f"length mismatch: {a.length} vs {b.length}")
    if a.length == 0:
        raise InvalidArgumentError("bit_error_rate needs non-empty sequences")
    return float(np.count_nonzero(a.bits != b.bits)) / a.length
