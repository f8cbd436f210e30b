"""Versioned checkpoint archives: parameter arrays + vocabulary + config."""

import torch

from ..decoder.generator import Generator
from ..util import vocab_hash
from ..vse import Vocabulary, VseModel

FORMAT_VERSION = 1


def save_checkpoint(path, kind: str, config: dict, model: torch.nn.Module, vocab=None) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": dict(config),
        "state": {k: v.cpu() for k, v in model.state_dict().items()},
    }
    if vocab is not None:
        payload["vocab"] = list(vocab)
        payload["config"]["vocab_hash"] = vocab_hash(vocab)
    torch.save(payload, path)


def _load(path, expected_kind: str) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {payload.get('format_version')} in {path}")
    if payload.get("kind") != expected_kind:
        raise ValueError(f"checkpoint {path} is a {payload.get('kind')!r} archive, expected {expected_kind!r}")
    return payload


def load_vse(path) -> VseModel:
    payload = _load(path, "vse")
    cfg = payload["config"]
    vocab_tokens = payload["vocab"]
    if vocab_hash(vocab_tokens) != cfg["vocab_hash"]:
        raise ValueError(f"vocabulary hash mismatch in {path}")
    model = VseModel(
        Vocabulary(vocab_tokens),
        dim=cfg["dim"],
        grid=cfg["grid"],
        margin=cfg.get("margin", 0.2),
        widths=tuple(cfg.get("encoder_widths", (32, 64, 128))),
    )
    model.load_state_dict(payload["state"])
    if model.dim != cfg["dim"] or model.grid != cfg["grid"]:
        raise ValueError("checkpoint config disagrees with reconstructed model")
    model.eval()
    return model


def load_generator(path):
    payload = _load(path, "decoder")
    cfg = payload["config"]
    model = Generator(
        in_dim=cfg["dim"],
        in_grid=cfg["grid"],
        widths=tuple(cfg["widths"]),
        edge_hidden=cfg.get("edge_hidden", 16),
    )
    model.load_state_dict(payload["state"])
    model.eval()
    return model, cfg
