"""Generative grille cipher toolkit.

Message bits are written into keyed grille positions of a partially
known image; a latent-space search over a trained generator then finds a
realistic image consistent with those bits, and the shared grille reads
them back.  Security metrics and a steganalysis harness round out the
evaluation side.
"""

from .codec import (
    ImageBuffer,
    MessageBits,
    bit_error_rate,
    dequantize,
    expand_message,
    extract,
    quantize,
)
from .keys import (
    GrilleKey,
    Mask,
    capacity,
    derive_grille,
    generate_completion_mask,
    parse_key,
    serialize_key,
)
from .metrics import (
    DetectionReport,
    Histogram,
    detection_error,
    epsilon_secure,
    js_divergence,
    kl_divergence,
)
from .search import (
    LossBreakdown,
    SearchConfig,
    contextual_loss,
    find_z,
    find_z_batch,
    make_stego,
    message_loss,
    perceptual_loss,
)
from .steganalysis import SpamFeatures, classify, evaluate_pe, spam_features, train_ensemble
from .toy import PlanePoint, toy_decrypt, toy_encrypt, toy_sample_mode

__version__ = "0.1.0"

__all__ = [
    "ImageBuffer",
    "MessageBits",
    "GrilleKey",
    "Mask",
    "Histogram",
    "DetectionReport",
    "SpamFeatures",
    "LossBreakdown",
    "SearchConfig",
    "PlanePoint",
    "bit_error_rate",
    "capacity",
    "classify",
    "contextual_loss",
    "dequantize",
    "derive_grille",
    "detection_error",
    "epsilon_secure",
    "evaluate_pe",
    "expand_message",
    "extract",
    "find_z",
    "find_z_batch",
    "generate_completion_mask",
    "js_divergence",
    "kl_divergence",
    "make_stego",
    "message_loss",
    "parse_key",
    "perceptual_loss",
    "quantize",
    "serialize_key",
    "spam_features",
    "toy_decrypt",
    "toy_encrypt",
    "toy_sample_mode",
    "train_ensemble",
]
