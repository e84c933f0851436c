"""Distillation (and optional teacher) training loop.

Per step in distill mode: sample a batch of frame pairs and styles, run the
frozen teacher on frame t, run the student on frames t-1 and t, and combine
content, style, distillation, depth and temporal terms into one Adam update
of the student transformer and decoder. Distillation, content, style and
depth terms use frame t only; frame t-1 exists for the temporal term.

Batch ``n`` of a run is drawn with seed ``(cfg.seed, n)``, so resuming from a
checkpoint replays exactly the batches an uninterrupted run would have seen.
"""

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, fields
from pathlib import Path

import torch

from . import losses
from .checkpoint import (
    read_checkpoint, resolve_encoder, model_from_payload, save_checkpoint,
)
from .data import sample_batch, scan_style_dataset, scan_video_dataset
from .flip import FlipParams
from .networks import StyleTransferModel

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    """Training configuration; every field is a ``key = value`` config entry."""

    mode: str = "distill"  # distill | teacher
    steps: int = 160_000
    lr: float = 1e-4
    batch_size: int = 6
    image_size: int = 256
    video_root: str = ""
    style_root: str = ""
    teacher_checkpoint: str = ""
    student_role: str = "student"  # width of the trained network in distill mode
    encoder: str = ""  # VGG weight file or "surrogate:<seed>"
    depth: str = "depth-anything"  # "stub", "depth-anything" or a model id
    lambda_c: float = 1.0
    lambda_s: float = 3.0
    lambda_k: float = 1.0
    lambda_d: float = 1.0
    lambda_t: float = 10.0
    flip_ppd: float = 67.0
    disable_pq_distill: bool = False
    disable_depth: bool = False
    disable_temporal: bool = False
    checkpoint_every: int = 5000
    out_dir: str = "runs/pqdast"
    seed: int = 0
    init_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in ("distill", "teacher"):
            raise ValueError(f"mode must be 'distill' or 'teacher', got {self.mode!r}")
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size <= 0 or self.image_size % 16:
            raise ValueError("batch_size must be positive and image_size divisible by 16")
        if self.mode == "distill" and not self.teacher_checkpoint:
            raise ValueError("distill mode needs teacher_checkpoint")
        if self.student_role not in ("student", "teacher"):
            raise ValueError(f"unknown student_role {self.student_role!r}")
        self.loss_weights  # validates non-negativity
        self.flip_params

    @property
    def loss_weights(self):
        return losses.LossWeights(self.lambda_c, self.lambda_s, self.lambda_k, self.lambda_d, self.lambda_t)

    @property
    def flip_params(self):
        return FlipParams(ppd=self.flip_ppd)

    def digest(self):
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, values):
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, types[key], key)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, overrides=None):
        """Read ``key = value`` lines (``#`` comments) plus optional overrides."""
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.optionxform = str
        parser.read_string("[train]\n" + Path(path).read_text())
        values = dict(parser["train"])
        values.update(overrides or {})
        return cls.from_mapping(values)


def _coerce(raw, typ, key):
    if not isinstance(raw, str):
        return raw
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if typ == "int":
        return int(raw.replace("_", ""))
    if typ == "float":
        return float(raw)
    return raw


def make_depth_predictor(name):
    if name == "stub":
        return losses.BlurDepthStub()
    if name == "depth-anything":
        return losses.DepthAnythingPredictor()
    return losses.DepthAnythingPredictor(name)


class Trainer:
    """Owns the student, its optimizer, and the step counter."""

    def __init__(self, cfg, encoder=None, teacher=None, depth_predictor=None):
        cfg.validate()
        self.cfg = cfg
        self.encoder = encoder or resolve_encoder(None, cfg.encoder or None)
        if self.encoder.source.startswith("surrogate"):
            log.warning("training with a random surrogate encoder (%s)", self.encoder.source)
        if cfg.mode == "distill":
            if teacher is None:
                teacher = model_from_payload(read_checkpoint(cfg.teacher_checkpoint), self.encoder)
            self.teacher = teacher.requires_grad_(False).eval()
            self.student = StyleTransferModel.build(cfg.student_role, self.encoder, cfg.init_seed)
        else:
            self.teacher = None
            self.student = StyleTransferModel.build("teacher", self.encoder, cfg.init_seed)
        self.depth = None
        if not cfg.disable_depth:
            self.depth = depth_predictor or make_depth_predictor(cfg.depth)
        self.optimizer = torch.optim.Adam(list(self.student.trainable_parameters()), lr=cfg.lr)
        self.step = 0
        self.video_index = scan_video_dataset(cfg.video_root)
        self.style_index = scan_style_dataset(cfg.style_root)

    def batch(self, step):
        return sample_batch(
            self.video_index, self.style_index, (self.cfg.seed, step),
            self.cfg.batch_size, self.cfg.image_size,
        )

    def compute_losses(self, batch):
        cfg = self.cfg
        enc = self.encoder
        content = enc(batch.frame_curr)
        style = enc(batch.style)
        fused = self.student.fuse(content, style)
        out = self.student.decoder(fused)
        out_feats = enc(out)

        terms = {
            "content": losses.content_loss(out_feats, content),
            "style": losses.style_loss(out_feats, style),
        }
        if self.teacher is not None:
            with torch.no_grad():
                t_fused = self.teacher.fuse(content, style)
                t_out = self.teacher.decoder(t_fused)
            terms["distill_feat"] = losses.distill_feature_loss(fused, t_fused)
            terms["distill_out"] = losses.distill_output_loss(out, t_out)
            if not cfg.disable_pq_distill:
                terms["distill_pq"] = losses.distill_pq_loss(out, t_out, cfg.flip_params)
            terms["distill"] = losses.distill_total(
                terms["distill_feat"], terms["distill_out"], terms.get("distill_pq")
            )
        if self.depth is not None:
            terms["depth"] = losses.depth_loss(out, batch.frame_curr, self.depth)
        if not cfg.disable_temporal:
            prev_out = self.student.decoder(self.student.fuse(enc(batch.frame_prev), style))
            terms["temporal"] = losses.temporal_loss(out, prev_out, batch.flow, batch.occlusion)
        return losses.total_loss(terms, cfg.loss_weights)

    def train_step(self):
        """One optimizer update; returns the (detached) loss report."""
        step = self.step + 1
        batch = self.batch(step)
        self.student.train()
        report = self.compute_losses(batch)
        if not torch.isfinite(report.total) or not all(torch.isfinite(v) for v in report.terms.values()):
            self._dump_nonfinite(step, report)
        self.optimizer.zero_grad(set_to_none=True)
        report.total.backward()
        self.optimizer.step()
        self.step = step
        return losses.LossReport(
            {k: v.detach() for k, v in report.terms.items()}, report.total.detach(), report.weights
        )

    def _dump_nonfinite(self, step, report):
        path = Path(self.cfg.out_dir) / f"nonfinite_step{step}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        info = {"step": step, "batch_seed": [self.cfg.seed, step], "losses": report.values()}
        path.write_text(json.dumps(info, indent=2))
        raise NonFiniteLossError(
            f"non-finite loss at step {step} (batch seed {[self.cfg.seed, step]}); details in {path}"
        )

    def train_state(self):
        return {
            "step": self.step,
            "seed": self.cfg.seed,
            "optimizer": self.optimizer.state_dict(),
            "config": dataclasses.asdict(self.cfg),
        }

    def save(self, path):
        return save_checkpoint(path, self.student, self.train_state(), self.cfg.digest())

    def resume(self, path):
        """Restore student weights, optimizer moments and step from ``path``."""
        payload = read_checkpoint(path)
        state = payload.get("train_state")
        if state is None:
            raise ValueError(f"{path} holds no training state")
        restored = model_from_payload(payload, self.encoder)
        self.student.load_state_dict(restored.state_dict())
        self.optimizer.load_state_dict(state["optimizer"])
        self.step = int(state["step"])
        return self

    def run(self, steps=None, log_path=None):
        """Train until ``steps`` (default ``cfg.steps``); returns the final checkpoint."""
        target = steps if steps is not None else self.cfg.steps
        out_dir = Path(self.cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = Path(log_path) if log_path else out_dir / "train_log.tsv"
        writer_file = open(log_path, "a", newline="")
        writer = csv.writer(writer_file, delimiter="\t")
        header_written = log_path.stat().st_size > 0
        t0 = time.perf_counter()
        try:
            while self.step < target:
                report = self.train_step()
                if not header_written:
                    writer.writerow(["step", *report.columns(), "wall_time"])
                    header_written = True
                vals = report.values()
                writer.writerow(
                    [self.step, *(f"{vals[c]:.6g}" for c in report.columns()),
                     f"{time.perf_counter() - t0:.3f}"]
                )
                writer_file.flush()
                if self.cfg.checkpoint_every and self.step % self.cfg.checkpoint_every == 0:
                    self.save(out_dir / f"checkpoint_{self.step:07d}.pt")
        finally:
            writer_file.close()
        return self.save(out_dir / "final.pt")


def run_training(cfg, **kwargs):
    """Train per ``cfg`` and return the path of the final checkpoint."""
    return Trainer(cfg, **kwargs).run()
