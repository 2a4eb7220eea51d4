"""End-to-end orchestration behind the command-line surface.

Commands are deterministic given the master seed: every per-image seed,
mask, key, and message derives from it through tagged SHA-256, and the
manifests record digests of every artifact involved.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import data, gan
from .codec import (
    ImageBuffer,
    MessageBits,
    bit_error_rate,
    expand_message,
    extract,
    padded_bits,
    quantize,
)
from .errors import InvalidArgumentError
from .keys import (
    GrilleKey,
    Mask,
    capacity,
    derive_grille,
    generate_completion_mask,
    parse_key,
    serialize_key,
)
from .search import SearchConfig, find_z, find_z_batch, make_stego, trace_to_rows
from .steganalysis import evaluate_pe, to_grayscale
from .toy import PlanePoint, toy_sample_mode

MANIFEST_VERSION = 1


@dataclass
class PipelineConfig:
    height: int = 32
    width: int = 32
    channels: int = 1
    archive: str = "corpus.npz"
    heldout_fraction: float = 0.1
    mask_pattern: str = "random-scatter"
    missing_fraction: float = 0.9
    density: float = 1.0
    bpi: int = 1
    channel: int = 0
    checkpoint: str = "checkpoint.npz"
    out_dir: str = "runs"
    master_seed: int = 0
    train: gan.TrainConfig = field(default_factory=gan.TrainConfig)
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = gan.TrainConfig(**self.train)
        if isinstance(self.search, dict):
            self.search = SearchConfig(**self.search)
        # geometry is owned here; keep the training config in step
        self.train.shape = (self.height, self.width, self.channels)
        self.train.hidden = tuple(self.train.hidden)

    @property
    def geometry(self):
        return (self.height, self.width, self.channels)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2, default=list)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def derive_seed(master_seed: int, tag: str) -> int:
    """Stable 63-bit sub-seed for a named role."""
    h = hashlib.sha256(f"grille-seed|{master_seed}|{tag}".encode()).digest()
    return int.from_bytes(h[:8], "big") >> 1


def derive_secret(master_seed: int, tag: str) -> bytes:
    return hashlib.sha256(f"grille-secret|{master_seed}|{tag}".encode()).digest()


def mask_for(cfg: PipelineConfig) -> Mask:
    return generate_completion_mask(
        cfg.width,
        cfg.height,
        cfg.mask_pattern,
        cfg.missing_fraction,
        derive_seed(cfg.master_seed, "mask"),
    )


def density_for_capacity(target_bits: int, known_count: int) -> float:
    """Density whose floor(density * known) lands exactly on target_bits."""
    if not 0 <= target_bits <= known_count:
        raise InvalidArgumentError(
            f"cannot fit {target_bits} bits into {known_count} known cells"
        )
    if target_bits == known_count:
        return 1.0
    return (target_bits + 0.5) / known_count


def blowup_factor(key: GrilleKey) -> float:
    """Encryption blowup: ciphertext bits per plaintext bit, 8 / embedding-rate."""
    cap = capacity(key)
    if cap == 0:
        raise InvalidArgumentError("empty grille has no blowup factor")
    return 8.0 / (cap / (key.width * key.height))


def read_message_file(path) -> MessageBits:
    """Raw bytes, or a 0/1 text file when the suffix is .bits."""
    if str(path).endswith(".bits"):
        with open(path, "r", encoding="utf-8") as fh:
            return MessageBits.from_bitstring(fh.read())
    with open(path, "rb") as fh:
        return MessageBits.from_bytes(fh.read())


def write_bits_file(path, bits: MessageBits):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(bits.to_bitstring() + "\n")


def write_csv(path, header, rows, comments=()):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(src_dir, cfg: PipelineConfig, archive_path=None) -> dict:
    """Normalize an image directory into the dataset archive."""
    archive_path = archive_path or cfg.archive
    images, sources, warnings = data.ingest_directory(
        src_dir, cfg.height, cfg.width, cfg.channels
    )
    data.save_archive(archive_path, images, sources)
    manifest = {
        "archive": str(archive_path),
        "count": int(images.shape[0]),
        "skipped": warnings,
        "digest": data.file_digest(archive_path),
    }
    with open(str(archive_path) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_corpus(cfg: PipelineConfig):
    """(train images, held-out images) from the configured archive."""
    images, _meta = data.load_archive(cfg.archive)
    if images.shape[1:] != cfg.geometry:
        raise InvalidArgumentError(
            f"archive geometry {images.shape[1:]} does not match config {cfg.geometry}"
        )
    return data.split_corpus(
        images, cfg.heldout_fraction, derive_seed(cfg.master_seed, "split")
    )


def cmd_train(cfg: PipelineConfig):
    """Train the generator pair on the archive's training split."""
    train_imgs, _held = load_corpus(cfg)
    cfg.train.checkpoint_path = cfg.checkpoint
    gen, disc, report = gan.train(train_imgs, cfg.train)
    report_path = str(cfg.checkpoint) + ".train.csv"
    write_csv(
        report_path,
        ("epoch", "d_loss", "g_loss", "value_fn", "js_proxy"),
        [
            (e, report.d_loss[e], report.g_loss[e], report.value_fn[e], report.js_proxy[e])
            for e in range(len(report.d_loss))
        ],
        comments=(f"seed={report.seed}", f"wall_clock={report.wall_clock:.1f}s"),
    )
    return gen, disc, report


def cmd_keygen(cfg: PipelineConfig, out_path, key_seed: bytes | None = None) -> GrilleKey:
    """Derive a grille key against the configured mask and write the key file."""
    mask = mask_for(cfg)
    seed = key_seed if key_seed is not None else derive_secret(cfg.master_seed, "key")
    key = derive_grille(seed, mask, cfg.density, cfg.bpi, cfg.channel)
    with open(out_path, "wb") as fh:
        fh.write(serialize_key(key))
    return key


def load_key(path) -> GrilleKey:
    with open(path, "rb") as fh:
        return parse_key(fh.read())


def _manifest_skeleton(cfg: PipelineConfig, key: GrilleKey) -> dict:
    return {
        "version": MANIFEST_VERSION,
        "config_digest": cfg.digest(),
        "checkpoint_digest": data.file_digest(cfg.checkpoint)
        if os.path.exists(cfg.checkpoint)
        else None,
        "key_digest": key.digest(),
        "blowup_factor": blowup_factor(key) if capacity(key) else None,
        "records": [],
    }


def append_manifest(path, cfg: PipelineConfig, key: GrilleKey, record: dict):
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    else:
        manifest = _manifest_skeleton(cfg, key)
    manifest["records"].append(record)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def cmd_encrypt(
    cfg: PipelineConfig,
    message_path,
    key_path,
    cover_path,
    stego_path,
    manifest_path=None,
    seed_tag=None,
) -> dict:
    """expand_message -> latent search -> stego assembly, with provenance."""
    gen, disc, _meta = gan.load_checkpoint(cfg.checkpoint)
    key = load_key(key_path)
    msg = read_message_file(message_path)
    cover = data.load_image_file(cover_path)
    mask = mask_for(cfg)

    t0 = time.monotonic()
    expanded = expand_message(cover, mask, key, msg)
    tag = seed_tag if seed_tag is not None else os.path.basename(str(stego_path))
    rng = np.random.default_rng(derive_seed(cfg.master_seed, f"encrypt|{tag}"))
    result = find_z(gen, disc, expanded, mask, key, cfg.search, rng)
    gen_img = gan.g_forward(gen, result.z)
    stego = make_stego(gen_img, expanded, mask, cfg.search.stego_mode)
    data.save_png(stego_path, stego)

    trace_path = str(stego_path) + ".trace.csv"
    write_csv(
        trace_path,
        ("iteration", "contextual", "perceptual", "message", "total"),
        trace_to_rows(result.trace),
    )

    embedded = padded_bits(key, msg)
    recovered = extract(stego, key)
    ber = bit_error_rate(MessageBits(embedded), recovered)
    record = {
        "stego": str(stego_path),
        "stego_digest": data.file_digest(stego_path),
        "cover": str(cover_path),
        "key_file": str(key_path),
        "message_file": str(message_path),
        "message_bits": msg.length,
        "ber": ber,
        "trace": trace_path,
        "best_iteration": result.best_iteration,
        "stego_mode": cfg.search.stego_mode,
        "seed_tag": tag,
        "seconds": time.monotonic() - t0,
    }
    if manifest_path:
        append_manifest(manifest_path, cfg, key, record)
    return record


def cmd_decrypt(stego_path, key_path, out_path=None) -> MessageBits:
    """Overlay the grille on the stego image and read the bit plane."""
    key = load_key(key_path)
    stego = data.load_image_file(stego_path, provenance="stego")
    bits = extract(stego, key)
    if out_path:
        write_bits_file(out_path, bits)
    return bits


def cmd_audit(manifest_path) -> list:
    """Recompute every manifest BER from the stored stego + key inputs."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    problems = []
    for record in manifest["records"]:
        if data.file_digest(record["stego"]) != record["stego_digest"]:
            problems.append({"stego": record["stego"], "reason": "digest mismatch"})
            continue
        stego = data.load_image_file(record["stego"], provenance="stego")
        key = load_key(record["key_file"])
        msg = read_message_file(record["message_file"])
        ber = bit_error_rate(MessageBits(padded_bits(key, msg)), extract(stego, key))
        if ber != record["ber"]:
            problems.append(
                {"stego": record["stego"], "reason": "ber mismatch", "recomputed": ber}
            )
    return problems


def _held_out_covers(cfg: PipelineConfig, n: int):
    _train, held = load_corpus(cfg)
    if held.shape[0] == 0:
        raise InvalidArgumentError("held-out split is empty; lower heldout_fraction")
    covers = [ImageBuffer(held[i % held.shape[0]]) for i in range(n)]
    return covers


def cmd_eval_ber(cfg: PipelineConfig, bpis, n_images: int, out_csv=None, milestones=None):
    """Mean extraction error versus search iterations, one curve per bit plane."""
    gen, disc, _meta = gan.load_checkpoint(cfg.checkpoint)
    mask = mask_for(cfg)
    covers = _held_out_covers(cfg, n_images)
    if milestones is None:
        milestones = (0, 25, 50, 100, 200, 300, 500, 750, 1000)
    milestones = sorted(
        {m for m in milestones if 0 <= m <= cfg.search.iterations} | {cfg.search.iterations}
    )

    rows = []
    for bpi in bpis:
        key = derive_grille(
            derive_secret(cfg.master_seed, f"ber-key|{bpi}"), mask, cfg.density, bpi, cfg.channel
        )
        cap = capacity(key)
        msg_rng = np.random.default_rng(derive_seed(cfg.master_seed, f"ber-msg|{bpi}"))
        msgs = [MessageBits.random(cap, msg_rng) for _ in covers]
        expanded = [expand_message(c, mask, key, m) for c, m in zip(covers, msgs)]
        targets = np.stack([padded_bits(key, m) for m in msgs])

        ber_at = {}

        def hook(t, z_batch, _targets=targets, _key=key, _expanded=expanded):
            imgs = gan.g_forward_batch(gen, z_batch)
            bers = []
            for i in range(len(_expanded)):
                stego = make_stego(
                    ImageBuffer(imgs[i], provenance="generated"),
                    _expanded[i],
                    mask,
                    cfg.search.stego_mode,
                )
                got = extract(stego, _key)
                bers.append(bit_error_rate(MessageBits(_targets[i]), got))
            ber_at[t] = bers

        rng = np.random.default_rng(derive_seed(cfg.master_seed, f"ber-search|{bpi}"))
        find_z_batch(
            gen, disc, expanded, mask, key, cfg.search, rng,
            milestones=milestones, milestone_hook=hook,
        )
        for t in milestones:
            bers = ber_at[t]
            stderr = float(np.std(bers, ddof=1) / np.sqrt(len(bers))) if len(bers) > 1 else 0.0
            rows.append((bpi, t, float(np.mean(bers)), stderr))

    if out_csv:
        write_csv(
            out_csv,
            ("bpi", "iterations", "mean_ber", "stderr"),
            rows,
            comments=(
                f"n_images={n_images} stego_mode={cfg.search.stego_mode}",
                f"master_seed={cfg.master_seed} density={cfg.density}",
            ),
        )
    return rows


def make_pe_source(cfg: PipelineConfig, gen, disc):
    """Image source for the detection-error evaluation.

    Stego images run the full embed-then-search pipeline at the requested
    payload; clean images run the identical pipeline at payload zero
    (empty grille), so both are samples from the same generator.
    """
    mask = mask_for(cfg)
    known = mask.known_count

    def run_batch(payload, bpi, n, rng, tag):
        target_bits = int(round(payload * cfg.width * cfg.height))
        density = density_for_capacity(target_bits, known)
        key = derive_grille(
            derive_secret(cfg.master_seed, f"pe-key|{payload}|{bpi}|{tag}"),
            mask,
            density,
            bpi,
            cfg.channel,
        )
        covers = _held_out_covers(cfg, n)
        cap = capacity(key)
        msg_rng = np.random.default_rng(rng.integers(0, 2**63))
        expanded = [
            expand_message(c, mask, key, MessageBits.random(cap, msg_rng)) for c in covers
        ]
        search_rng = np.random.default_rng(rng.integers(0, 2**63))
        results = find_z_batch(gen, disc, expanded, mask, key, cfg.search, search_rng)
        z_batch = np.stack([r.z.values for r in results])
        imgs = gan.g_forward_batch(gen, z_batch)
        out = []
        for i in range(n):
            stego = make_stego(
                ImageBuffer(imgs[i], provenance="generated"),
                expanded[i],
                mask,
                cfg.search.stego_mode,
            )
            out.append(to_grayscale(quantize(stego)))
        return out

    def source(payload, bpi, n, rng):
        stego = run_batch(payload, bpi, n, rng, "stego")
        clean = run_batch(0.0, bpi, n, rng, "clean")
        return stego, clean

    return source


def cmd_eval_pe(
    cfg: PipelineConfig,
    payloads,
    bpis,
    n_images: int,
    out_csv=None,
    learners: int = 31,
    d_sub: int = 64,
    splits: int = 10,
):
    """Detection-error sweep via the SPAM ensemble on generated image sets."""
    gen, disc, _meta = gan.load_checkpoint(cfg.checkpoint)
    source = make_pe_source(cfg, gen, disc)
    rng = np.random.default_rng(derive_seed(cfg.master_seed, "eval-pe"))
    reports = evaluate_pe(
        source,
        payloads,
        bpis,
        n_images,
        rng,
        learners=learners,
        d_sub=d_sub,
        splits=splits,
        iterations=cfg.search.iterations,
    )
    if out_csv:
        write_csv(
            out_csv,
            ("payload", "bpi", "iterations", "p_e", "stderr"),
            [(r.payload, r.bpi, r.iterations, r.p_e, r.pe_stderr) for r in reports],
            comments=(
                f"desk-scale run: n_images={n_images} per class, splits={splits}, "
                f"learners={learners}, d_sub={d_sub}",
                f"stego_mode={cfg.search.stego_mode} master_seed={cfg.master_seed}",
            ),
        )
    return reports


def cmd_toy_demo(out_csv, n: int = 2000, seed: int = 0, m: float = 5.0, key=None):
    """Sampled ciphertext clouds for both sampling modes, as scatter CSV."""
    key = key or PlanePoint(0.0, 1.0)
    rng = np.random.default_rng(seed)
    rows = []
    for mode in ("uniform", "data-like"):
        for _ in range(n):
            c = toy_sample_mode(mode, m, key, rng)
            rows.append((mode, c.x, c.y))
    if out_csv:
        write_csv(out_csv, ("mode", "x", "y"), rows, comments=(f"m={m} key=({key.x},{key.y})",))
    return rows
