"""Adversarial generator/discriminator pair with differentiable forwards.

Desk-scale models on CPU via torch.  Generators emit images in [-1, 1]
(bounded output nonlinearity); discriminators emit probabilities clamped
away from 0 and 1 so log terms stay finite.  Training is single-writer
and, in deterministic mode, single-threaded; inference on a frozen model
is read-only and safe for concurrent callers.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .codec import ImageBuffer
from .errors import InvalidArgumentError, TrainingDivergedError

PROB_CLAMP = 1e-8
CHECKPOINT_VERSION = 1

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(eq=False)
class LatentVector:
    """Generator input code; components projected onto [-1, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size == 0 or not np.isfinite(v).all():
            raise InvalidArgumentError("latent vector must be non-empty and finite")
        self.values = np.clip(v, -1.0, 1.0)

    @property
    def dim(self):
        return int(self.values.size)


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    latent_dim: int = 100
    arch: str = "dcgan"          # "dcgan" or "mlp"
    shape: tuple = (32, 32, 1)   # (height, width, channels)
    base_channels: int = 32      # dcgan width
    hidden: tuple = (64, 64)     # mlp widths
    d_steps: int = 1             # discriminator updates per generator update
    saturating_g_loss: bool = False
    deterministic: bool = True
    dtype: str = "float32"
    eval_samples: int = 256
    checkpoint_path: str | None = None


@dataclass
class TrainReport:
    """Per-epoch training diagnostics; series lengths equal the epoch count."""

    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    value_fn: list = field(default_factory=list)
    js_proxy: list = field(default_factory=list)  # value_fn + log 4
    wall_clock: float = 0.0
    seed: int = 0


class GeneratorModel:
    """Frozen-interface wrapper: torch net + architecture descriptor."""

    def __init__(self, net: nn.Module, descriptor: dict):
        self.net = net
        self.descriptor = descriptor
        self.latent_dim = int(descriptor["latent_dim"])
        self.out_shape = tuple(descriptor["shape"])  # (H, W, C)
        self.dtype = _DTYPES[descriptor["dtype"]]


class DiscriminatorModel:
    def __init__(self, net: nn.Module, descriptor: dict):
        self.net = net
        self.descriptor = descriptor
        self.in_shape = tuple(descriptor["shape"])
        self.dtype = _DTYPES[descriptor["dtype"]]


# ---------------------------------------------------------------------------
# architectures


class _DcganG(nn.Module):
    def __init__(self, shape, latent_dim, base):
        super().__init__()
        h, w, c = shape
        if h != w or h < 8 or (h & (h - 1)) != 0:
            raise InvalidArgumentError("dcgan wants square power-of-two images >= 8")
        stages = int(math.log2(h // 4))
        ch = base * (2 ** (stages - 1))
        self.start_ch = ch
        self.fc = nn.Linear(latent_dim, ch * 4 * 4)
        layers = [nn.BatchNorm2d(ch), nn.ReLU(True)]
        for _ in range(stages - 1):
            layers += [
                nn.ConvTranspose2d(ch, ch // 2, 4, 2, 1, bias=False),
                nn.BatchNorm2d(ch // 2),
                nn.ReLU(True),
            ]
            ch //= 2
        layers += [nn.ConvTranspose2d(ch, c, 4, 2, 1), nn.Tanh()]
        self.body = nn.Sequential(*layers)

    def forward(self, z):
        x = self.fc(z).view(z.shape[0], self.start_ch, 4, 4)
        return self.body(x)


class _DcganD(nn.Module):
    def __init__(self, shape, base):
        super().__init__()
        h, w, c = shape
        stages = int(math.log2(h // 4))
        layers = [nn.Conv2d(c, base, 4, 2, 1), nn.LeakyReLU(0.2, True)]
        ch = base
        for _ in range(stages - 1):
            layers += [
                nn.Conv2d(ch, ch * 2, 4, 2, 1, bias=False),
                nn.BatchNorm2d(ch * 2),
                nn.LeakyReLU(0.2, True),
            ]
            ch *= 2
        self.body = nn.Sequential(*layers)
        self.fc = nn.Linear(ch * 4 * 4, 1)

    def forward(self, x):
        h = self.body(x)
        return torch.sigmoid(self.fc(h.flatten(1))).squeeze(1)


class _MlpG(nn.Module):
    def __init__(self, shape, latent_dim, hidden):
        super().__init__()
        out_dim = int(np.prod(shape))
        dims = [latent_dim, *hidden]
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(a, b), nn.LeakyReLU(0.2, True)]
        layers += [nn.Linear(dims[-1], out_dim), nn.Tanh()]
        self.body = nn.Sequential(*layers)
        self.shape = shape

    def forward(self, z):
        h, w, c = self.shape
        return self.body(z).view(z.shape[0], c, h, w)


class _MlpD(nn.Module):
    def __init__(self, shape, hidden):
        super().__init__()
        in_dim = int(np.prod(shape))
        dims = [in_dim, *hidden]
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(a, b), nn.LeakyReLU(0.2, True)]
        layers += [nn.Linear(dims[-1], 1)]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return torch.sigmoid(self.body(x.flatten(1))).squeeze(1)


class _LinearG(nn.Module):
    """clamp(A z + b): test double with exact analytic gradients."""

    def __init__(self, out_dim, latent_dim):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(out_dim, latent_dim, dtype=torch.float64))
        self.bias = nn.Parameter(torch.zeros(out_dim, dtype=torch.float64))

    def forward(self, z):
        return torch.clamp(z @ self.weight.T + self.bias, -1.0, 1.0)


class _ConstD(nn.Module):
    def __init__(self, p):
        super().__init__()
        self.register_buffer("p", torch.tensor(float(p), dtype=torch.float64))

    def forward(self, x):
        # keep the graph connected so callers can backpropagate (gradient is 0)
        return x.flatten(1).sum(dim=1) * 0.0 + self.p


def _dcgan_init(module):
    # DCGAN weight init: conv/linear N(0, 0.02), batchnorm N(1, 0.02)
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)


def build_models(config: TrainConfig) -> tuple[GeneratorModel, DiscriminatorModel]:
    """Build a fresh generator/discriminator pair; seeds torch's global RNG."""
    torch.manual_seed(config.seed)
    dtype = _DTYPES[config.dtype]
    shape = tuple(config.shape)
    if config.arch == "dcgan":
        g_net = _DcganG(shape, config.latent_dim, config.base_channels)
        d_net = _DcganD(shape, config.base_channels)
        g_net.apply(_dcgan_init)
        d_net.apply(_dcgan_init)
    elif config.arch == "mlp":
        g_net = _MlpG(shape, config.latent_dim, tuple(config.hidden))
        d_net = _MlpD(shape, tuple(config.hidden))
    else:
        raise InvalidArgumentError(f"unknown architecture {config.arch!r}")
    g_net = g_net.to(dtype)
    d_net = d_net.to(dtype)
    g_desc = {
        "kind": f"{config.arch}-g",
        "shape": list(shape),
        "latent_dim": config.latent_dim,
        "base": config.base_channels,
        "hidden": list(config.hidden),
        "dtype": config.dtype,
    }
    d_desc = dict(g_desc, kind=f"{config.arch}-d")
    return GeneratorModel(g_net, g_desc), DiscriminatorModel(d_net, d_desc)


def linear_oracle_generator(A, b) -> GeneratorModel:
    """Generator whose forward pass is clamp(A z + b); output shape (len(b), 1, 1)."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    if A.ndim != 2 or A.shape[0] != b.size:
        raise InvalidArgumentError("A must be (out_dim, latent_dim) matching b")
    net = _LinearG(A.shape[0], A.shape[1])
    with torch.no_grad():
        net.weight.copy_(torch.from_numpy(A))
        net.bias.copy_(torch.from_numpy(b))
    desc = {
        "kind": "linear-g",
        "shape": [b.size, 1, 1],
        "latent_dim": A.shape[1],
        "dtype": "float64",
    }
    return GeneratorModel(_ReshapeWrapper(net, (b.size, 1, 1)), desc)


class _ReshapeWrapper(nn.Module):
    def __init__(self, inner, shape):
        super().__init__()
        self.inner = inner
        self.out_shape = shape

    def forward(self, z):
        h, w, c = self.out_shape
        return self.inner(z).view(z.shape[0], c, h, w)


def constant_discriminator(shape, p: float = 0.5) -> DiscriminatorModel:
    """Sanity model emitting a fixed probability for any input."""
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError("p must lie in (0, 1)")
    desc = {"kind": "const-d", "shape": list(shape), "latent_dim": 0, "dtype": "float64", "p": p}
    return DiscriminatorModel(_ConstD(p), desc)


# ---------------------------------------------------------------------------
# forwards


def _to_tensor_batch(images, dtype) -> torch.Tensor:
    """(N, H, W, C) numpy-ish input to (N, C, H, W) torch."""
    if isinstance(images, ImageBuffer):
        images = images.values[None]
    elif isinstance(images, (list, tuple)):
        images = np.stack([im.values if isinstance(im, ImageBuffer) else im for im in images])
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def _from_tensor_batch(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1)


def _z_array(model: GeneratorModel, z) -> np.ndarray:
    v = z.values if isinstance(z, LatentVector) else np.asarray(z, dtype=np.float64).ravel()
    if v.size != model.latent_dim:
        raise InvalidArgumentError(
            f"latent dimension mismatch: model wants {model.latent_dim}, got {v.size}"
        )
    return v


def g_forward(model: GeneratorModel, z) -> ImageBuffer:
    """Deterministic forward pass of the generator for a single latent code."""
    v = _z_array(model, z)
    model.net.eval()
    with torch.no_grad():
        out = model.net(torch.from_numpy(v[None]).to(model.dtype))
    img = _from_tensor_batch(out)[0]
    return ImageBuffer(np.clip(img, -1.0, 1.0), provenance="generated")


def g_forward_with_grad(model: GeneratorModel, z, loss_fn):
    """Forward plus the gradient of a scalar loss with respect to z.

    ``loss_fn`` maps the generated (H, W, C) torch tensor to a scalar
    tensor; returns (image, loss value, gradient array).
    """
    v = _z_array(model, z)
    model.net.eval()
    zt = torch.from_numpy(v[None]).to(model.dtype).requires_grad_(True)
    out = model.net(zt)
    loss = loss_fn(out[0].permute(1, 2, 0))
    (grad,) = torch.autograd.grad(loss, zt)
    img = _from_tensor_batch(out)[0]
    return (
        ImageBuffer(np.clip(img, -1.0, 1.0), provenance="generated"),
        float(loss.detach()),
        grad[0].cpu().numpy().astype(np.float64),
    )


def g_forward_batch(model: GeneratorModel, zs) -> np.ndarray:
    """Forward a (N, latent_dim) batch of codes; returns (N, H, W, C) values."""
    arr = np.asarray(zs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != model.latent_dim:
        raise InvalidArgumentError(f"want (N, {model.latent_dim}) latent batch, got {arr.shape}")
    model.net.eval()
    with torch.no_grad():
        out = model.net(torch.from_numpy(arr).to(model.dtype))
    return np.clip(_from_tensor_batch(out), -1.0, 1.0)


def d_forward(model: DiscriminatorModel, img) -> float:
    """Discriminator probability for one image, clamped into (eps, 1-eps)."""
    x = _to_tensor_batch(img, model.dtype)
    if tuple(x.shape[1:]) != (model.in_shape[2], model.in_shape[0], model.in_shape[1]):
        raise InvalidArgumentError(
            f"image shape {tuple(x.shape[1:])} does not match discriminator {model.in_shape}"
        )
    model.net.eval()
    with torch.no_grad():
        p = model.net(x)
    return float(np.clip(p.cpu().numpy()[0], PROB_CLAMP, 1.0 - PROB_CLAMP))


def d_forward_batch(model: DiscriminatorModel, images) -> np.ndarray:
    x = _to_tensor_batch(images, model.dtype)
    model.net.eval()
    with torch.no_grad():
        p = model.net(x)
    return np.clip(p.cpu().numpy(), PROB_CLAMP, 1.0 - PROB_CLAMP)


def value_function(d_model: DiscriminatorModel, reals, fakes) -> float:
    """Empirical two-player value: E[log D(x)] + E[log(1 - D(G(z)))].

    Natural logs; per-sample terms summed with math.fsum so the constant
    discriminator identity holds exactly.
    """
    p_real = d_forward_batch(d_model, reals)
    p_fake = d_forward_batch(d_model, fakes)
    real_term = math.fsum(math.log(p) for p in p_real) / p_real.size
    fake_term = math.fsum(math.log(1.0 - p) for p in p_fake) / p_fake.size
    return real_term + fake_term


# ---------------------------------------------------------------------------
# training


def _dataset_to_array(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        arr = dataset
    else:
        items = list(dataset)
        if not items:
            raise InvalidArgumentError("dataset must be non-empty")
        shapes = {(im.values.shape if isinstance(im, ImageBuffer) else np.asarray(im).shape) for im in items}
        if len(shapes) != 1:
            raise InvalidArgumentError(f"dataset images have mixed shapes: {sorted(shapes)}")
        arr = np.stack([im.values if isinstance(im, ImageBuffer) else im for im in items])
    if arr.ndim != 4 or arr.shape[0] == 0:
        raise InvalidArgumentError("dataset must be a non-empty (N, H, W, C) stack")
    return np.asarray(arr, dtype=np.float64)


def train(dataset, config: TrainConfig):
    """Alternating gradient training of the minimax game.

    Ascends the discriminator objective and descends the generator's
    non-saturating surrogate (-log D(G(z))) by default; the original
    log(1 - D(G(z))) form sits behind ``saturating_g_loss``.  Fully
    deterministic given the seed in single-threaded mode.
    """
    data = _dataset_to_array(dataset)
    n, h, w, c = data.shape
    if (h, w, c) != tuple(config.shape):
        raise InvalidArgumentError(
            f"dataset shape {(h, w, c)} does not match config shape {tuple(config.shape)}"
        )
    if config.epochs < 1 or config.batch_size < 1:
        raise InvalidArgumentError("epochs and batch_size must be positive")

    old_threads = torch.get_num_threads()
    if config.deterministic:
        torch.set_num_threads(1)
    try:
        return _train_inner(data, config)
    finally:
        torch.set_num_threads(old_threads)


def _train_inner(data: np.ndarray, config: TrainConfig):
    t0 = time.monotonic()
    gen, disc = build_models(config)
    dtype = gen.dtype
    n = data.shape[0]
    x_all = _to_tensor_batch(data, dtype)
    rng = np.random.default_rng(config.seed)

    g_opt = torch.optim.Adam(gen.net.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))
    d_opt = torch.optim.Adam(disc.net.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))

    # fixed evaluation pool for the per-epoch value-function diagnostic
    n_eval = min(n, config.eval_samples)
    eval_real = x_all[:n_eval]
    eval_z = torch.rand(n_eval, config.latent_dim, dtype=dtype) * 2.0 - 1.0

    report = TrainReport(seed=config.seed)
    eps = PROB_CLAMP
    batch_size = min(config.batch_size, n)

    def check_finite(*vals):
        if not all(math.isfinite(float(v)) for v in vals):
            path = None
            if config.checkpoint_path:
                path = str(config.checkpoint_path) + ".diverged"
                save_checkpoint(path, gen, disc, {"diverged": True})
            raise TrainingDivergedError("non-finite loss during training", checkpoint_path=path)

    for _ in range(config.epochs):
        order = rng.permutation(n)
        d_losses, g_losses = [], []
        for start in range(0, n - batch_size + 1, batch_size):
            idx = order[start : start + batch_size]
            real = x_all[torch.from_numpy(idx)]
            bs = real.shape[0]

            for _step in range(config.d_steps):
                z = torch.rand(bs, config.latent_dim, dtype=dtype) * 2.0 - 1.0
                with torch.no_grad():
                    fake = gen.net(z)
                d_opt.zero_grad()
                p_real = disc.net(real).clamp(eps, 1.0 - eps)
                p_fake = disc.net(fake).clamp(eps, 1.0 - eps)
                d_loss = -(torch.log(p_real).mean() + torch.log(1.0 - p_fake).mean())
                d_loss.backward()
                d_opt.step()

            z = torch.rand(bs, config.latent_dim, dtype=dtype) * 2.0 - 1.0
            g_opt.zero_grad()
            p_gen = disc.net(gen.net(z)).clamp(eps, 1.0 - eps)
            if config.saturating_g_loss:
                g_loss = torch.log(1.0 - p_gen).mean()
            else:
                g_loss = -torch.log(p_gen).mean()
            g_loss.backward()
            g_opt.step()

            check_finite(d_loss, g_loss)
            d_losses.append(float(d_loss))
            g_losses.append(float(g_loss))

        gen.net.eval()
        disc.net.eval()
        with torch.no_grad():
            eval_fake = gen.net(eval_z)
            pr = disc.net(eval_real).clamp(eps, 1.0 - eps).cpu().numpy()
            pf = disc.net(eval_fake).clamp(eps, 1.0 - eps).cpu().numpy()
        v = math.fsum(math.log(p) for p in pr) / pr.size + math.fsum(
            math.log(1.0 - p) for p in pf
        ) / pf.size
        gen.net.train()
        disc.net.train()

        report.d_loss.append(float(np.mean(d_losses)) if d_losses else math.nan)
        report.g_loss.append(float(np.mean(g_losses)) if g_losses else math.nan)
        report.value_fn.append(v)
        report.js_proxy.append(v + math.log(4.0))

    gen.net.eval()
    disc.net.eval()
    report.wall_clock = time.monotonic() - t0
    if config.checkpoint_path:
        save_checkpoint(config.checkpoint_path, gen, disc, {"seed": config.seed})
    return gen, disc, report


# ---------------------------------------------------------------------------
# checkpoints: versioned binary tensor container with descriptor header


def save_checkpoint(path, gen: GeneratorModel, disc: DiscriminatorModel, meta: dict | None = None):
    payload = {
        "__header__": np.frombuffer(
            json.dumps(
                {
                    "version": CHECKPOINT_VERSION,
                    "generator": gen.descriptor,
                    "discriminator": disc.descriptor,
                    "meta": meta or {},
                }
            ).encode(),
            dtype=np.uint8,
        )
    }
    for name, tensor in gen.net.state_dict().items():
        payload[f"g:{name}"] = tensor.cpu().numpy()
    for name, tensor in disc.net.state_dict().items():
        payload[f"d:{name}"] = tensor.cpu().numpy()
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def _net_from_descriptor(desc: dict) -> nn.Module:
    kind = desc["kind"]
    shape = tuple(desc["shape"])
    if kind == "dcgan-g":
        net = _DcganG(shape, desc["latent_dim"], desc["base"])
    elif kind == "dcgan-d":
        net = _DcganD(shape, desc["base"])
    elif kind == "mlp-g":
        net = _MlpG(shape, desc["latent_dim"], tuple(desc["hidden"]))
    elif kind == "mlp-d":
        net = _MlpD(shape, tuple(desc["hidden"]))
    elif kind == "linear-g":
        net = _ReshapeWrapper(_LinearG(int(np.prod(shape)), desc["latent_dim"]), shape)
    elif kind == "const-d":
        net = _ConstD(desc["p"])
    else:
        raise InvalidArgumentError(f"unknown architecture kind {kind!r}")
    return net.to(_DTYPES[desc["dtype"]])


def load_checkpoint(path):
    """Rebuild (generator, discriminator, meta) from a checkpoint file."""
    with np.load(path) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise InvalidArgumentError(
                f"unsupported checkpoint version {header.get('version')!r}"
            )
        g_state = {k[2:]: torch.from_numpy(z[k]) for k in z.files if k.startswith("g:")}
        d_state = {k[2:]: torch.from_numpy(z[k]) for k in z.files if k.startswith("d:")}
    g_net = _net_from_descriptor(header["generator"])
    d_net = _net_from_descriptor(header["discriminator"])
    g_net.load_state_dict(g_state)
    d_net.load_state_dict(d_state)
    g_net.eval()
    d_net.eval()
    return (
        GeneratorModel(g_net, header["generator"]),
        DiscriminatorModel(d_net, header["discriminator"]),
        header["meta"],
    )
