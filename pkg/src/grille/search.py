"""Latent-space search for a realistic image consistent with embedded bits.

Starting from a uniform random code, the search runs adaptive-moment
gradient steps on contextual + message + lambda * perceptual loss, with
componentwise projection of the code onto [-1, 1] after every step.  The
returned iterate is the best one visited, not the last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .codec import ImageBuffer
from .errors import InvalidArgumentError, SearchDivergedError
from .gan import PROB_CLAMP, DiscriminatorModel, GeneratorModel, LatentVector
from .keys import GrilleKey, Mask

STEGO_MODES = ("blend", "generate")


@dataclass
class SearchConfig:
    lambda_perceptual: float = 0.1
    iterations: int = 1000
    step_size: float = 0.05
    step_decay: float = 1.0       # per-iteration multiplier; 1.0 keeps the step constant
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    message_weight: float = 1.0   # 1.0 = plain unweighted sum of the three terms
    stego_mode: str = "generate"
    seed: int = 0

    def __post_init__(self):
        if self.lambda_perceptual < 0:
            raise InvalidArgumentError("lambda_perceptual must be non-negative")
        if self.iterations < 1:
            raise InvalidArgumentError("iterations must be at least 1")
        if not 0.0 < self.step_decay <= 1.0:
            raise InvalidArgumentError("step_decay must lie in (0, 1]")
        if self.stego_mode not in STEGO_MODES:
            raise InvalidArgumentError(f"unknown stego mode {self.stego_mode!r}")


@dataclass(frozen=True)
class LossBreakdown:
    """One evaluation of the search objective.

    ``message`` holds the weighted message term, so
    total = contextual + message + lambda * perceptual always.
    """

    contextual: float
    perceptual: float
    message: float
    total: float

    @classmethod
    def combine(cls, contextual, perceptual, message, lambda_perceptual):
        return cls(
            contextual=contextual,
            perceptual=perceptual,
            message=message,
            total=contextual + message + lambda_perceptual * perceptual,
        )


@dataclass
class SearchResult:
    z: LatentVector
    trace: list
    best_iteration: int
    best_loss: LossBreakdown


def _check_shapes(gen_img: ImageBuffer, other: ImageBuffer):
    if gen_img.values.shape != other.values.shape:
        raise InvalidArgumentError(
            f"image shapes differ: {gen_img.values.shape} vs {other.values.shape}"
        )


def contextual_loss(gen_img: ImageBuffer, expanded_cover: ImageBuffer, mask: Mask) -> float:
    """L1 norm of the known-pixel differences, all channels."""
    _check_shapes(gen_img, expanded_cover)
    if (mask.height, mask.width) != (gen_img.height, gen_img.width):
        raise InvalidArgumentError("mask dimensions do not match the images")
    m = mask.known.astype(np.float64)[:, :, None]
    return float(np.abs(m * (gen_img.values - expanded_cover.values)).sum())


def perceptual_loss(d_model: DiscriminatorModel, gen_img: ImageBuffer) -> float:
    """log(1 - D(G(z))) with the discriminator output clamped away from 1."""
    from .gan import d_forward

    p = d_forward(d_model, gen_img)
    return float(np.log(1.0 - p))


def message_loss(gen_img: ImageBuffer, expanded_cover: ImageBuffer, key: GrilleKey) -> float:
    """L1 norm over grille cells of the message-channel differences."""
    _check_shapes(gen_img, expanded_cover)
    if (gen_img.height, gen_img.width) != (key.height, key.width):
        raise InvalidArgumentError("key dimensions do not match the images")
    idx = key.cell_indices
    a = gen_img.values[:, :, key.channel].ravel()[idx]
    b = expanded_cover.values[:, :, key.channel].ravel()[idx]
    return float(np.abs(a - b).sum())


def make_stego(
    gen_img: ImageBuffer,
    expanded_cover: ImageBuffer,
    mask: Mask,
    mode: str = "generate",
) -> ImageBuffer:
    """Assemble the transmitted image.

    ``blend`` keeps the known pixels of the expanded cover verbatim and fills
    the missing region from the generated image, which makes extraction
    trivially exact; ``generate`` transmits the generated image unmodified.
    """
    if mode not in STEGO_MODES:
        raise InvalidArgumentError(f"unknown stego mode {mode!r}")
    _check_shapes(gen_img, expanded_cover)
    if mode == "generate":
        return ImageBuffer(gen_img.values.copy(), provenance="stego")
    if (mask.height, mask.width) != (gen_img.height, gen_img.width):
        raise InvalidArgumentError("mask dimensions do not match the images")
    m = mask.known.astype(np.float64)[:, :, None]
    blended = m * expanded_cover.values + (1.0 - m) * gen_img.values
    return ImageBuffer(blended, provenance="stego")


def find_z(
    gen: GeneratorModel,
    disc: DiscriminatorModel,
    expanded_cover: ImageBuffer,
    mask: Mask,
    key: GrilleKey,
    cfg: SearchConfig,
    rng: np.random.Generator,
) -> SearchResult:
    """Search the latent space for one expanded cover."""
    batch = find_z_batch(gen, disc, [expanded_cover], mask, key, cfg, rng)
    return batch[0]


def find_z_batch(
    gen: GeneratorModel,
    disc: DiscriminatorModel,
    expanded_covers,
    mask: Mask,
    key: GrilleKey,
    cfg: SearchConfig,
    rng: np.random.Generator,
    milestones=None,
    milestone_hook=None,
) -> list[SearchResult]:
    """Independent searches for a batch of expanded covers, vectorized.

    Each image's code sees only its own loss, so results match per-image
    runs of the same configuration.  ``milestones`` is an optional sorted
    list of iteration indices; at each one, ``milestone_hook(iteration,
    best_z_array)`` is called with the per-image best codes so far.
    """
    covers = list(expanded_covers)
    if not covers:
        raise InvalidArgumentError("need at least one expanded cover")
    h, w, c = covers[0].values.shape
    for im in covers:
        if im.values.shape != (h, w, c):
            raise InvalidArgumentError("expanded covers must share one shape")
    if (mask.height, mask.width) != (h, w):
        raise InvalidArgumentError("mask dimensions do not match the covers")
    if (key.height, key.width) != (h, w) or key.channel >= c:
        raise InvalidArgumentError("key does not match the cover geometry")

    dtype = gen.dtype
    dev = torch.device("cpu")
    gen.net.eval()
    disc.net.eval()

    b = len(covers)
    latent = gen.latent_dim
    cover_t = torch.from_numpy(
        np.ascontiguousarray(np.stack([im.values for im in covers]).transpose(0, 3, 1, 2))
    ).to(dtype)
    mask_t = torch.from_numpy(mask.known.astype(np.float64)).to(dtype).view(1, 1, h, w)
    cell_idx = torch.from_numpy(key.cell_indices.astype(np.int64))
    cover_cells = cover_t[:, key.channel].reshape(b, h * w)[:, cell_idx]

    lam = cfg.lambda_perceptual
    w_msg = cfg.message_weight
    eps = PROB_CLAMP

    z = torch.from_numpy(rng.uniform(-1.0, 1.0, size=(b, latent))).to(dtype)
    m_state = torch.zeros_like(z)
    v_state = torch.zeros_like(z)

    traces = [[] for _ in range(b)]
    best_total = torch.full((b,), np.inf, dtype=dtype)
    best_z = z.clone()
    best_iter = np.zeros(b, dtype=np.int64)
    milestone_set = set(int(m) for m in milestones) if milestones else set()

    for t in range(cfg.iterations + 1):
        zv = z.clone().requires_grad_(True)
        out = gen.net(zv)
        ctx = (mask_t * (out - cover_t)).abs().flatten(1).sum(dim=1)
        gen_cells = out[:, key.channel].reshape(b, h * w)[:, cell_idx]
        msg = w_msg * (gen_cells - cover_cells).abs().sum(dim=1)
        p = disc.net(out).clamp(eps, 1.0 - eps)
        perc = torch.log(1.0 - p)
        total = ctx + msg + lam * perc

        ctx_np = ctx.detach().cpu().numpy()
        msg_np = msg.detach().cpu().numpy()
        perc_np = perc.detach().cpu().numpy()
        total_np = total.detach().cpu().numpy()
        for i in range(b):
            traces[i].append(
                LossBreakdown(
                    contextual=float(ctx_np[i]),
                    perceptual=float(perc_np[i]),
                    message=float(msg_np[i]),
                    total=float(total_np[i]),
                )
            )
        if not np.isfinite(total_np).all():
            raise SearchDivergedError(
                f"non-finite loss at iteration {t}", trace=traces if b > 1 else traces[0]
            )

        improved = total.detach() < best_total
        if improved.any():
            best_total = torch.where(improved, total.detach(), best_total)
            best_z[improved] = z[improved]
            best_iter[improved.cpu().numpy()] = t

        if t in milestone_set and milestone_hook is not None:
            milestone_hook(t, best_z.detach().cpu().numpy().astype(np.float64))

        if t == cfg.iterations:
            break

        (grad,) = torch.autograd.grad(total.sum(), zv)
        m_state = cfg.beta1 * m_state + (1.0 - cfg.beta1) * grad
        v_state = cfg.beta2 * v_state + (1.0 - cfg.beta2) * grad * grad
        m_hat = m_state / (1.0 - cfg.beta1 ** (t + 1))
        v_hat = v_state / (1.0 - cfg.beta2 ** (t + 1))
        step = cfg.step_size * (cfg.step_decay**t)
        z = z - step * m_hat / (torch.sqrt(v_hat) + cfg.adam_eps)
        z = z.clamp(-1.0, 1.0)

    results = []
    best_z_np = best_z.cpu().numpy().astype(np.float64)
    for i in range(b):
        results.append(
            SearchResult(
                z=LatentVector(best_z_np[i]),
                trace=traces[i],
                best_iteration=int(best_iter[i]),
                best_loss=traces[i][int(best_iter[i])],
            )
        )
    return results


def trace_to_rows(trace) -> list:
    """Loss trace as CSV-ready rows: iteration, contextual, perceptual, message, total."""
    return [
        (t, lb.contextual, lb.perceptual, lb.message, lb.total) for t, lb in enumerate(trace)
    ]
