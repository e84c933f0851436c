"""Checkpoint archive (schema 1).

A checkpoint is a single ``torch.save`` archive holding a plain dict::

    schema        int, currently 1
    kind          "pqdast-checkpoint"
    role          "teacher" | "student"
    width         SANet inner width (512 or 256)
    decoder_spec  list of [in, out, relu, upsample] rows
    encoder       encoder descriptor, "surrogate:<seed>" or "file:<name>"
    config_hash   hash of the training configuration ("" if unknown)
    transformer   state dict of the transformer
    decoder       state dict of the decoder
    train_state   optional: {"step", "seed", "optimizer", "config"}

The encoder itself is never stored. Files are written atomically.
"""

import os
import tempfile
from pathlib import Path

import torch

from .networks import ModelSpec, StyleTransferModel, VGGEncoder

SCHEMA_VERSION = 1
KIND = "pqdast-checkpoint"


class CheckpointError(RuntimeError):
    pass


def _atomic_save(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        torch.save(obj, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def save_checkpoint(path, model, train_state=None, config_hash=""):
    payload = {
        "schema": SCHEMA_VERSION,
        "kind": KIND,
        "role": model.spec.role,
        "width": model.spec.width,
        "decoder_spec": [list(row) for row in model.spec.decoder],
        "encoder": model.encoder.source,
        "config_hash": config_hash,
        "transformer": model.transformer.state_dict(),
        "decoder": model.decoder.state_dict(),
    }
    if train_state is not None:
        payload["train_state"] = train_state
    _atomic_save(payload, path)
    return Path(path)


def read_checkpoint(path):
    """Load and validate the raw checkpoint dict."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("kind") != KIND:
        raise CheckpointError(f"{path}: not a pqdast checkpoint")
    if payload.get("schema") != SCHEMA_VERSION:
        raise CheckpointError(
            f"{path}: schema {payload.get('schema')} unsupported (expected {SCHEMA_VERSION})"
        )
    for key in ("role", "width", "decoder_spec", "transformer", "decoder"):
        if key not in payload:
            raise CheckpointError(f"{path}: missing field {key!r}")
    return payload


def resolve_encoder(descriptor, weights=None):
    """Encoder for a checkpoint; ``weights`` overrides the stored descriptor."""
    if weights is not None:
        if str(weights).startswith("surrogate:"):
            return VGGEncoder.surrogate(int(str(weights).split(":", 1)[1]))
        return VGGEncoder.from_file(weights)
    if descriptor and descriptor.startswith("surrogate:"):
        return VGGEncoder.surrogate(int(descriptor.split(":", 1)[1]))
    raise CheckpointError(
        f"checkpoint was trained with encoder {descriptor!r}; pass the VGG weight file explicitly"
    )


def model_from_payload(payload, encoder):
    spec = ModelSpec(payload["role"], int(payload["width"]), tuple(tuple(r) for r in payload["decoder_spec"]))
    model = StyleTransferModel(encoder, spec)
    try:
        model.transformer.load_state_dict(payload["transformer"])
        model.decoder.load_state_dict(payload["decoder"])
    except (RuntimeError, KeyError) as exc:
        raise CheckpointError(f"weights do not match the recorded architecture: {exc}") from exc
    return model


def load_model(path, encoder=None, encoder_weights=None):
    """Rebuild the :class:`StyleTransferModel` stored at ``path``."""
    payload = read_checkpoint(path)
    if encoder is None:
        encoder = resolve_encoder(payload.get("encoder"), encoder_weights)
    return model_from_payload(payload, encoder)


def convert_sanet_weights(transformer_path, decoder_path, out_path, encoder_source="file:vgg_normalised.pth"):
    """Convert SANet-style ``transformer``/``decoder`` .pth files to a teacher checkpoint.

    Transformer keys ``sanet4_1.*``/``sanet5_1.*``/``merge_conv.*`` and the
    plain ``nn.Sequential`` decoder indices of that code base are accepted.
    """
    t_state = torch.load(transformer_path, map_location="cpu", weights_only=True)
    d_state = torch.load(decoder_path, map_location="cpu", weights_only=True)
    renamed = {}
    for key, value in t_state.items():
        key = key.replace("sanet4_1.", "sanet4.").replace("sanet5_1.", "sanet5.")
        renamed[key] = value
    encoder = VGGEncoder(source=encoder_source)
    model = StyleTransferModel(encoder, ModelSpec.for_role("teacher"))
    try:
        model.transformer.load_state_dict(renamed)
        model.decoder.load_state_dict({f"net.{k}": v for k, v in d_state.items()})
    except RuntimeError as exc:
        raise CheckpointError(f"not SANet-layout weights: {exc}") from exc
    return save_checkpoint(out_path, model, config_hash="converted")
