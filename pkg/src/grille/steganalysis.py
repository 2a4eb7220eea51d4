"""The adversary's toolkit: SPAM features and an FLD-subspace ensemble.

SPAM features model pixel-difference sequences as second-order Markov
chains: difference arrays are computed along eight directions, truncated
to [-T, T], and the conditional probabilities of each difference given
the two preceding ones are estimated per direction.  The four
horizontal/vertical directions are averaged into one block and the four
diagonals into another; at T = 3 each block has 7^3 = 343 entries, 686
in total.  The ensemble is a majority vote over Fisher linear
discriminants, each trained on a random feature subspace and a bootstrap
sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .metrics import DetectionReport, detection_error

SPAM_T = 3
SPAM_DIM = 2 * (2 * SPAM_T + 1) ** 3

# (dy, dx) steps; first four are the horizontal/vertical group
_HV_DIRECTIONS = ((0, 1), (0, -1), (1, 0), (-1, 0))
_DIAG_DIRECTIONS = ((1, 1), (-1, -1), (1, -1), (-1, 1))


@dataclass(eq=False)
class SpamFeatures:
    values: np.ndarray
    T: int = SPAM_T

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        expected = 2 * (2 * self.T + 1) ** 3
        if v.size != expected:
            raise InvalidArgumentError(f"expected {expected} features, got {v.size}")
        self.values = v


def _difference_array(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """D[i, j] = x[i, j] - x[i + dy, j + dx] over the in-bounds region."""
    h, w = x.shape
    i0, i1 = max(0, -dy), h - max(0, dy)
    j0, j1 = max(0, -dx), w - max(0, dx)
    return x[i0:i1, j0:j1] - x[i0 + dy : i1 + dy, j0 + dx : j1 + dx]


def _triple_views(d: np.ndarray, dy: int, dx: int):
    """Three aligned views of consecutive differences along (dy, dx)."""
    h, w = d.shape
    i0, i1 = max(0, -2 * dy), h - max(0, 2 * dy)
    j0, j1 = max(0, -2 * dx), w - max(0, 2 * dx)
    first = d[i0:i1, j0:j1]
    second = d[i0 + dy : i1 + dy, j0 + dx : j1 + dx]
    third = d[i0 + 2 * dy : i1 + 2 * dy, j0 + 2 * dx : j1 + 2 * dx]
    return first, second, third


def _direction_block(x: np.ndarray, dy: int, dx: int, T: int) -> np.ndarray:
    """Conditional transition probabilities p(d3 | d1, d2) for one direction."""
    k = 2 * T + 1
    d = np.clip(_difference_array(x, dy, dx), -T, T)
    d1, d2, d3 = _triple_views(d, dy, dx)
    if d1.size == 0:
        return np.zeros(k * k * k)
    idx = ((d1 + T) * k + (d2 + T)) * k + (d3 + T)
    triples = np.bincount(idx.ravel().astype(np.int64), minlength=k * k * k).astype(np.float64)
    pairs = triples.reshape(k * k, k).sum(axis=1)
    out = np.zeros((k * k, k))
    nz = pairs > 0
    out[nz] = triples.reshape(k * k, k)[nz] / pairs[nz, None]
    return out.ravel()


def spam_features(img: np.ndarray, T: int = SPAM_T) -> SpamFeatures:
    """686-dimensional (at T=3) SPAM feature vector of an 8-bit grayscale image."""
    x = np.asarray(img)
    if x.ndim != 2:
        raise InvalidArgumentError("spam_features wants a 2-d grayscale matrix")
    if x.shape[0] < 3 or x.shape[1] < 3:
        raise InvalidArgumentError("image must be at least 3 pixels along each direction")
    if T < 1:
        raise InvalidArgumentError("T must be positive")
    x = x.astype(np.int64)

    blocks = [_direction_block(x, dy, dx, T) for dy, dx in _HV_DIRECTIONS]
    hv = (blocks[0] + blocks[1] + blocks[2] + blocks[3]) / 4.0
    blocks = [_direction_block(x, dy, dx, T) for dy, dx in _DIAG_DIRECTIONS]
    diag = (blocks[0] + blocks[1] + blocks[2] + blocks[3]) / 4.0
    return SpamFeatures(np.concatenate([hv, diag]), T=T)


def to_grayscale(q: np.ndarray) -> np.ndarray:
    """Luma conversion (0.299/0.587/0.114, rounded) of a quantized image."""
    q = np.asarray(q)
    if q.ndim == 2:
        return q.astype(np.uint8)
    if q.ndim == 3 and q.shape[2] == 1:
        return q[:, :, 0].astype(np.uint8)
    if q.ndim == 3 and q.shape[2] == 3:
        y = 0.299 * q[:, :, 0] + 0.587 * q[:, :, 1] + 0.114 * q[:, :, 2]
        return np.clip(np.rint(y), 0, 255).astype(np.uint8)
    raise InvalidArgumentError(f"cannot convert shape {q.shape} to grayscale")


# ---------------------------------------------------------------------------
# FLD-subspace ensemble


@dataclass(eq=False)
class EnsembleModel:
    """Majority vote over linear discriminants on random feature subspaces."""

    subspaces: np.ndarray   # (L, d_sub) feature indices
    weights: np.ndarray     # (L, d_sub)
    biases: np.ndarray      # (L,)
    threshold: float        # votes strictly above this mean stego

    @property
    def learner_count(self):
        return int(self.subspaces.shape[0])

    @property
    def d_sub(self):
        return int(self.subspaces.shape[1])


def _fit_fld(x0: np.ndarray, x1: np.ndarray):
    """Fisher discriminant with a ridge fallback for singular scatter."""
    mu0 = x0.mean(axis=0)
    mu1 = x1.mean(axis=0)
    c0 = x0 - mu0
    c1 = x1 - mu1
    sw = c0.T @ c0 + c1.T @ c1
    ridge = 1e-10 * max(np.trace(sw) / sw.shape[0], 1.0)
    w = np.linalg.solve(sw + ridge * np.eye(sw.shape[0]), mu1 - mu0)
    bias = -float(w @ (mu0 + mu1) / 2.0)
    return w, bias


def _as_feature_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray) and features.ndim == 2:
        return features.astype(np.float64)
    rows = [
        f.values if isinstance(f, SpamFeatures) else np.asarray(f, dtype=np.float64).ravel()
        for f in features
    ]
    return np.asarray(rows, dtype=np.float64)


def train_ensemble(features, labels, L: int, d_sub: int, rng: np.random.Generator) -> EnsembleModel:
    """Train L discriminants on random subspaces and bootstrap samples."""
    X = _as_feature_matrix(features)
    y = np.asarray(labels).astype(np.int64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise InvalidArgumentError("features and labels must align")
    if L < 1:
        raise InvalidArgumentError("need at least one base learner")
    if not 1 <= d_sub <= X.shape[1]:
        raise InvalidArgumentError(f"d_sub must lie in 1..{X.shape[1]}")
    n = X.shape[0]
    if (y == 0).sum() < 2 or (y == 1).sum() < 2:
        raise InvalidArgumentError("need at least two examples per class")

    subspaces = np.empty((L, d_sub), dtype=np.int64)
    weights = np.empty((L, d_sub))
    biases = np.empty(L)
    for i in range(L):
        subspaces[i] = np.sort(rng.choice(X.shape[1], size=d_sub, replace=False))
        while True:
            boot = rng.integers(0, n, size=n)
            yb = y[boot]
            if (yb == 0).any() and (yb == 1).any():
                break
        xb = X[boot][:, subspaces[i]]
        weights[i], biases[i] = _fit_fld(xb[yb == 0], xb[yb == 1])
    return EnsembleModel(subspaces=subspaces, weights=weights, biases=biases, threshold=L / 2.0)


def vote_scores(model: EnsembleModel, features) -> np.ndarray:
    """Stego vote count per feature vector."""
    X = _as_feature_matrix(features)
    if X.shape[1] <= model.subspaces.max():
        raise InvalidArgumentError("feature dimension smaller than the model's subspaces")
    votes = np.zeros(X.shape[0], dtype=np.int64)
    for i in range(model.learner_count):
        proj = X[:, model.subspaces[i]] @ model.weights[i] + model.biases[i]
        votes += proj > 0
    return votes


def classify(model: EnsembleModel, f) -> tuple[str, int]:
    """Majority vote; ties are resolved toward "cover"."""
    vec = f.values if isinstance(f, SpamFeatures) else np.asarray(f, dtype=np.float64).ravel()
    if vec.size <= model.subspaces.max():
        raise InvalidArgumentError(
            f"feature dimension {vec.size} too small for the model's subspaces"
        )
    votes = int(vote_scores(model, vec[None, :])[0])
    return ("stego" if votes > model.threshold else "cover"), votes


def evaluate_pe(
    image_source,
    payloads,
    bpis,
    n_images: int,
    rng: np.random.Generator,
    learners: int = 31,
    d_sub: int = 64,
    splits: int = 10,
    T: int = SPAM_T,
    iterations: int = 0,
) -> list[DetectionReport]:
    """Detection error of the SPAM ensemble per (payload, bpi) point.

    ``image_source(payload_bpp, bpi, n, rng)`` must return two lists of
    quantized images: n stego and n clean.  Each point extracts features,
    splits them half train / half test, and averages the minimal detection
    error over ``splits`` random splits.
    """
    reports = []
    for payload in payloads:
        for bpi in bpis:
            stego_imgs, clean_imgs = image_source(payload, bpi, n_images, rng)
            if len(stego_imgs) < 4 or len(clean_imgs) < 4:
                raise InvalidArgumentError("need at least four images per class")
            Xs = np.stack([spam_features(to_grayscale(im), T).values for im in stego_imgs])
            Xc = np.stack([spam_features(to_grayscale(im), T).values for im in clean_imgs])
            pes, pfas, pmds = [], [], []
            for _ in range(splits):
                perm_c = rng.permutation(len(Xc))
                perm_s = rng.permutation(len(Xs))
                half_c, half_s = len(Xc) // 2, len(Xs) // 2
                tr = np.concatenate([Xc[perm_c[:half_c]], Xs[perm_s[:half_s]]])
                ytr = np.concatenate([np.zeros(half_c), np.ones(half_s)])
                model = train_ensemble(tr, ytr, learners, d_sub, rng)
                cover_votes = vote_scores(model, Xc[perm_c[half_c:]])
                stego_votes = vote_scores(model, Xs[perm_s[half_s:]])
                rep = detection_error(cover_votes, stego_votes)
                pes.append(rep.p_e)
                pfas.append(rep.p_fa)
                pmds.append(rep.p_md)
            stderr = float(np.std(pes, ddof=1) / np.sqrt(len(pes))) if len(pes) > 1 else 0.0
            reports.append(
                DetectionReport(
                    p_fa=float(np.mean(pfas)),
                    p_md=float(np.mean(pmds)),
                    p_e=float(np.mean(pes)),
                    payload=float(payload),
                    bpi=int(bpi),
                    iterations=int(iterations),
                    pe_stderr=stderr,
                )
            )
    return reports
