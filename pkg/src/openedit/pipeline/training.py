"""Two-stage training: the joint embedding first, then the adversarial decoder
against the frozen embedding."""

import json
from pathlib import Path

import numpy as np
import torch

from ..decoder import (
    Generator,
    LossWeights,
    MultiScalePatchDiscriminator,
    discriminator_loss,
    generator_loss,
    perceptual_distance,
)
from ..edgemap import extract_edges
from ..synthdata import load_split
from ..util import model_hash, save_png, seed_all
from ..vse import Vocabulary, VseModel, triplet_loss
from .checkpoint import load_vse, save_checkpoint
from .config import RunConfig

GENERATOR_WIDTHS = (128, 64, 32, 32)


class MetricsLog:
    def __init__(self, path):
        self.path = Path(path)
        self.path.write_text("")

    def write(self, **row) -> None:
        with open(self.path, "a") as f:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def _stack_images(scenes) -> torch.Tensor:
    arr = np.stack([s.image for s in scenes]).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(arr)).float()


def _caption_key(caption: str):
    """Order-insensitive content key: captions list shapes in draw order, which
    the image cannot reveal, so retrieval compares (color, kind) multisets."""
    from ..synthdata import parse_caption

    return tuple(sorted(parse_caption(caption)))


def caption_to_image_r1(model: VseModel, scenes, batch: int = 64) -> float:
    """Recall@1 for caption->image retrieval; a hit is any image depicting
    exactly the queried content (captions repeat in the template corpus)."""
    model.eval()
    images = _stack_images(scenes)
    with torch.no_grad():
        pooled = []
        for i in range(0, len(scenes), batch):
            pooled.append(model.pooled(model.encode_image_tensor(images[i : i + batch])))
        pooled = torch.cat(pooled)
        captions = [s.caption for s in scenes]
        unique = sorted(set(captions))
        embeds = model.encode_tokens([c.split() for c in unique])
        emb_for = {c: embeds[i] for i, c in enumerate(unique)}
        keys = [_caption_key(c) for c in captions]
        hits = 0
        for i, cap in enumerate(captions):
            top = int(torch.argmax(pooled @ emb_for[cap]))
            hits += keys[top] == keys[i]
    return hits / len(captions)


def train_vse(config: RunConfig):
    """Train both encoders with the hardest-negative ranking loss; keeps the
    checkpoint with the best validation caption->image R@1."""
    seed_all(config.seed)
    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config.save(run_dir / "config.json")
    log = MetricsLog(run_dir / "metrics.jsonl")

    train = load_split(config.corpus_root, "train")
    val = load_split(config.corpus_root, "val")
    vocab = Vocabulary.from_captions([s.caption for s in train])
    model = VseModel(vocab, dim=config.dim, grid=config.grid, margin=config.margin)
    if config.init_from:
        warm = load_vse(config.init_from)
        if warm.vocab.hash != vocab.hash:
            raise ValueError("warm-start checkpoint vocabulary does not match the corpus")
        model.load_state_dict(warm.state_dict())
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    # linear decay to 10% of the base rate settles the late-training R@1 oscillation
    schedule = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: 1.0 - 0.9 * min(1.0, step / max(1, config.steps))
    )

    # one scene per distinct caption per batch: identical captions inside a
    # batch would make the hardest negative a true positive
    by_caption = {}
    for idx, scene in enumerate(train):
        by_caption.setdefault(scene.caption, []).append(idx)
    caption_list = sorted(by_caption)
    rng = np.random.default_rng(config.seed)
    images = _stack_images(train)

    best_r1 = -1.0
    ckpt_path = run_dir / "ckpt-best.bin"

    def save_best():
        save_checkpoint(
            ckpt_path,
            "vse",
            {
                "dim": config.dim,
                "grid": config.grid,
                "margin": config.margin,
                "encoder_widths": list(model.image_encoder.widths),
            },
            model,
            vocab=vocab.tokens,
        )

    save_best()  # steps=0 leaves the initialization checkpoint
    model.train()
    for step in range(1, config.steps + 1):
        picks = rng.choice(len(caption_list), size=min(config.batch_size, len(caption_list)), replace=False)
        idxs = [by_caption[caption_list[c]][rng.integers(len(by_caption[caption_list[c]]))] for c in picks]
        batch_imgs = images[idxs]
        tokens = [train[i].caption.split() for i in idxs]
        feature_maps = model.encode_image_tensor(batch_imgs)
        pooled = model.pooled(feature_maps)
        texts = model.encode_tokens(tokens)
        loss = triplet_loss(pooled, texts, config.margin)
        if config.feature_norm_reg > 0:
            # uninformative locations (background) shrink toward zero, which
            # sharpens grounding maps; retrieval keeps informative ones large
            loss = loss + config.feature_norm_reg * (feature_maps**2).sum(dim=1).mean()
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite embedding loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        schedule.step()
        if step % config.log_every == 0 or step == config.steps:
            log.write(step=step, loss=float(loss.detach()))
        if step % config.eval_every == 0 or step == config.steps:
            r1 = caption_to_image_r1(model, val)
            log.write(step=step, val_r1=r1)
            if r1 > best_r1:
                best_r1 = r1
                save_best()
            model.train()
    return ckpt_path


def _edge_batch(images_np, use_edges: bool) -> torch.Tensor:
    n, size = len(images_np), images_np[0].shape[0]
    if not use_edges:
        return torch.zeros(n, 1, size, size)
    maps = [extract_edges(img).values for img in images_np]
    return torch.from_numpy(np.stack(maps)[:, None]).float()


def reconstruction_l2(generator, vse_model, scenes, edges: torch.Tensor, batch: int = 32) -> float:
    """Mean per-image RMSE of eval-mode reconstructions."""
    generator.eval()
    images = _stack_images(scenes)
    errs = []
    with torch.no_grad():
        for i in range(0, len(scenes), batch):
            imgs = images[i : i + batch]
            V = vse_model.encode_image_tensor(imgs)
            recon = generator(V, edges[i : i + batch])
            errs.extend(torch.sqrt(((recon - imgs) ** 2).mean(dim=(1, 2, 3))).tolist())
    return float(np.mean(errs))


def _sample_grid(generator, vse_model, scenes, edges, path, n: int = 8) -> None:
    generator.eval()
    images = _stack_images(scenes[:n])
    with torch.no_grad():
        recon = generator(vse_model.encode_image_tensor(images), edges[:n])
    top = np.concatenate([s.image for s in scenes[:n]], axis=1)
    bottom = np.concatenate(list(recon.numpy().transpose(0, 2, 3, 1)), axis=1)
    save_png(np.concatenate([top, bottom], axis=0), path)


def train_decoder(config: RunConfig):
    """Adversarial reconstruction training of the generator against the frozen
    embedding. Keeps the checkpoint with the best validation reconstruction L2."""
    seed_all(config.seed)
    run_dir = Path(config.run_dir)
    (run_dir / "samples").mkdir(parents=True, exist_ok=True)
    config.save(run_dir / "config.json")
    log = MetricsLog(run_dir / "metrics.jsonl")

    vse_model = load_vse(config.vse_checkpoint)
    vse_hash = model_hash(vse_model)
    for p in vse_model.parameters():
        p.requires_grad_(False)
    # the embedding checkpoint owns the joint-space geometry
    config.dim = vse_model.dim
    config.grid = vse_model.grid

    train = load_split(config.corpus_root, "train")
    val = load_split(config.corpus_root, "val")[: config.val_limit]
    images = _stack_images(train)
    train_edges = _edge_batch([s.image for s in train], config.use_edges)
    val_edges = _edge_batch([s.image for s in val], config.use_edges)

    generator = Generator(in_dim=config.dim, in_grid=config.grid, widths=GENERATOR_WIDTHS)
    discriminator = MultiScalePatchDiscriminator()
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr_g, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr_d, betas=(0.5, 0.999))
    weights = LossWeights(lambda_vgg=config.lambda_vgg, lambda_fm=config.lambda_fm)
    perceptual_fn = lambda a, b: perceptual_distance(a, b, vse_model.image_encoder)

    gen_config = {
        "dim": config.dim,
        "grid": config.grid,
        "widths": list(GENERATOR_WIDTHS),
        "edge_hidden": 16,
        "use_edges": config.use_edges,
        "vse_checkpoint": str(config.vse_checkpoint),
    }
    ckpt_path = run_dir / "ckpt-best.bin"
    best_l2 = float("inf")
    rng = np.random.default_rng(config.seed)
    divergence_strikes = 0

    save_checkpoint(ckpt_path, "decoder", gen_config, generator)
    for step in range(1, config.steps + 1):
        generator.train()
        discriminator.train()
        idxs = rng.choice(len(train), size=min(config.batch_size, len(train)), replace=False)
        real = images[idxs]
        edges = train_edges[idxs]
        with torch.no_grad():
            V = vse_model.encode_image_tensor(real)
        fake = generator(V, edges)

        real_logits, real_feats = discriminator(real)
        fake_logits_d, _ = discriminator(fake.detach())
        d_loss = discriminator_loss(real_logits, fake_logits_d)
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        fake_logits_g, fake_feats = discriminator(fake)
        g_total, parts = generator_loss(fake_logits_g, fake_feats, real_feats, fake, real, weights, perceptual_fn)
        opt_g.zero_grad()
        g_total.backward()
        opt_g.step()

        if step % config.log_every == 0 or step == config.steps:
            log.write(
                step=step,
                g_total=float(g_total.detach()),
                g_adv=float(parts["adv"].detach()),
                g_perceptual=float(parts["perceptual"].detach()),
                g_fm=float(parts["feature_matching"].detach()),
                d_loss=float(d_loss.detach()),
            )
        if step % config.eval_every == 0 or step == config.steps:
            val_l2 = reconstruction_l2(generator, vse_model, val, val_edges)
            log.write(step=step, val_l2=val_l2)
            _sample_grid(generator, vse_model, val, val_edges, run_dir / "samples" / f"step-{step:06d}.png")
            if val_l2 < best_l2:
                best_l2 = val_l2
                save_checkpoint(ckpt_path, "decoder", gen_config, generator)
            if float(d_loss.detach()) < 0.05 and float(parts["adv"].detach()) > 20.0:
                divergence_strikes += 1
                if divergence_strikes >= 3:
                    log.write(step=step, warning="adversarial divergence; stopping at best checkpoint")
                    break
            else:
                divergence_strikes = 0

    if model_hash(vse_model) != vse_hash:
        raise RuntimeError("decoder training mutated the frozen embedding parameters")
    return ckpt_path
