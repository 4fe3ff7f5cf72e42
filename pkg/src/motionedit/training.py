"""Joint training on edited-motion denoising and similarity classification."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import torch

from .diffusion import (
    GuidanceConfig,
    NoiseSchedule,
    auxiliary_loss,
    editing_loss,
    guided_sample_batch,
    q_sample,
    sample_condition_dropout,
    total_loss,
)
from .errors import ConsistencyError, InputError
from .model import MotionDiffusionTransformer, make_condition_batch
from .motion import EditTriplet, MotionSequence
from .similarity import SimilarityCurve
from .text import TextEncoder, TextFeatures


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 128
    lr: float = 1e-4
    weight_decay: float = 1e-2
    grad_clip: float = 1.0
    aux_weight: float = 1.0


@dataclass(frozen=True, eq=False)
class Example:
    """A triplet with its encoded instruction and per-source-frame labels."""

    triplet: EditTriplet
    text: TextFeatures
    labels: np.ndarray


def prepare_examples(triplets: Sequence[EditTriplet], curves: Mapping[str, SimilarityCurve],
                     encoder: TextEncoder) -> list[Example]:
    out = []
    for tr in triplets:
        if tr.id not in curves:
            raise ConsistencyError(f"no similarity curve for triplet {tr.id!r}")
        out.append(Example(tr, encoder.features(tr), np.asarray(curves[tr.id].labels)))
    return out


@dataclass
class LossReport:
    L_e: float
    L_aux: float
    L: float

    def as_dict(self) -> dict:
        return {"L_e": self.L_e, "L_aux": self.L_aux, "L": self.L}


class Trainer:
    """Owns the model parameters, optimizer and random streams of one run.

    All randomness comes from ``seed``: a numpy stream for batch order and
    condition dropout, and a torch stream for timesteps and noise.
    """

    def __init__(self, model: MotionDiffusionTransformer, sched: NoiseSchedule,
                 config: TrainConfig = TrainConfig(), guidance: GuidanceConfig = GuidanceConfig(),
                 seed: int = 0):
        if sched.T != model.config.num_timesteps:
            raise InputError(f"schedule has T={sched.T} but model expects {model.config.num_timesteps}")
        self.model = model
        self.sched = sched
        self.config = config
        self.guidance = guidance
        seq = np.random.SeedSequence(seed)
        batch_seed, drop_seed, torch_seed = seq.spawn(3)
        self.batch_rng = np.random.default_rng(batch_seed)
        self.drop_rng = np.random.default_rng(drop_seed)
        self.generator = torch.Generator().manual_seed(int(torch_seed.generate_state(1)[0]))
        self.optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr,
                                           weight_decay=config.weight_decay)
        self.step_count = 0
        self._order: list[int] = []

    def _dtype(self):
        return next(self.model.parameters()).dtype

    def compute_losses(self, batch: Sequence[Example], drop_text=None, drop_source=None,
                       t: Optional[torch.Tensor] = None, eps: Optional[torch.Tensor] = None):
        """Forward pass returning ``(L_e, L_aux)`` as tensors.

        The similarity loss only covers examples whose conditions were both
        kept, since a dropped instruction or source makes the labels
        unpredictable.
        """
        dtype = self._dtype()
        b = len(batch)
        cond = make_condition_batch([ex.triplet.source.frames for ex in batch],
                                    [ex.text for ex in batch], drop_text, drop_source, dtype=dtype)
        fmax = max(ex.triplet.target.F for ex in batch)
        d = batch[0].triplet.target.D
        tgt = np.zeros((b, fmax, d))
        tmask = np.ones((b, fmax), dtype=bool)
        for i, ex in enumerate(batch):
            tgt[i, : ex.triplet.target.F] = ex.triplet.target.frames
            tmask[i, : ex.triplet.target.F] = False
        m0 = torch.as_tensor(tgt, dtype=dtype)
        tmask_t = torch.as_tensor(tmask)
        if t is None:
            t = torch.randint(0, self.sched.T, (b,), generator=self.generator)
        if eps is None:
            eps = torch.randn(m0.shape, generator=self.generator, dtype=dtype)
        x_t = q_sample(m0, t, eps, self.sched)
        pred, cond_out = self.model(x_t, tmask_t, t, cond)
        l_e = editing_loss(m0, pred, tmask_t)

        labels = np.zeros(cond.source_mask.shape, dtype=np.int64)
        for i, ex in enumerate(batch):
            labels[i, : len(ex.labels)] = ex.labels
        excluded = cond.source_mask | cond.drop_text[:, None] | cond.drop_source[:, None]
        l_aux = auxiliary_loss(cond_out.similarity_logits, torch.as_tensor(labels), excluded)
        return l_e, l_aux

    def train_step(self, batch: Sequence[Example]) -> LossReport:
        if not batch:
            raise InputError("empty batch")
        self.model.train()
        drop_text, drop_source = sample_condition_dropout(
            self.drop_rng, len(batch), self.guidance.p_drop_text, self.guidance.p_drop_both)
        l_e, l_aux = self.compute_losses(batch, drop_text, drop_source)
        loss = total_loss(l_e, l_aux, self.config.aux_weight)
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.config.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip)
        self.optimizer.step()
        self.step_count += 1
        return LossReport(l_e.item(), l_aux.item(), loss.item())

    def next_batch(self, examples: Sequence[Example]) -> list[Example]:
        """Draw the next batch from a reshuffled-per-epoch ordering."""
        size = min(self.config.batch_size, len(examples))
        batch = []
        while len(batch) < size:
            if not self._order:
                self._order = list(self.batch_rng.permutation(len(examples)))
            batch.append(examples[self._order.pop()])
        return batch

    def fit(self, examples: Sequence[Example], steps: Optional[int] = None,
            log_path: Optional[Path] = None, log_timing: bool = True) -> list[dict]:
        """Run ``steps`` optimizer steps; optionally append JSON lines to ``log_path``."""
        if not examples:
            raise InputError("no training examples")
        steps = self.config.steps if steps is None else steps
        history = []
        fh = open(log_path, "a", encoding="utf-8") if log_path is not None else None
        try:
            for _ in range(steps):
                start = time.perf_counter()
                report = self.train_step(self.next_batch(examples))
                row = {"step": self.step_count, **report.as_dict(),
                       "lr": self.optimizer.param_groups[0]["lr"]}
                if log_timing:
                    row["wall_ms"] = round((time.perf_counter() - start) * 1000.0, 3)
                history.append(row)
                if fh is not None:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
        finally:
            if fh is not None:
                fh.close()
        return history


@torch.no_grad()
def predict_labels(model: MotionDiffusionTransformer, examples: Sequence[Example],
                   batch_size: int = 64) -> list[np.ndarray]:
    """Arg-max similarity class per source frame, fully conditioned."""
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i: i + batch_size]
        cond = make_condition_batch([ex.triplet.source.frames for ex in chunk],
                                    [ex.text for ex in chunk], dtype=dtype)
        logits = model.encode_conditions(cond).similarity_logits
        for j, ex in enumerate(chunk):
            out.append(logits[j, : ex.triplet.source.F].argmax(-1).cpu().numpy())
    return out


def similarity_accuracy(model: MotionDiffusionTransformer, examples: Sequence[Example]) -> float:
    preds = predict_labels(model, examples)
    hits = sum(int((p == ex.labels).sum()) for p, ex in zip(preds, examples))
    total = sum(len(ex.labels) for ex in examples)
    return hits / total


@torch.no_grad()
def sample_edits(model, examples: Sequence[Example], sched: NoiseSchedule,
                 guidance: GuidanceConfig = GuidanceConfig(), seed: int = 0,
                 batch_size: int = 64, lengths: Optional[Iterable[int]] = None) -> list[MotionSequence]:
    """Generate an edited motion for every example.

    Target lengths default to each example's ground-truth target length.
    """
    model.eval()
    dtype = next(model.parameters()).dtype
    lengths = [ex.triplet.target.F for ex in examples] if lengths is None else list(lengths)
    gen = torch.Generator().manual_seed(seed)
    out = []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i: i + batch_size]
        lens = lengths[i: i + batch_size]
        cond = make_condition_batch([ex.triplet.source.frames for ex in chunk],
                                    [ex.text for ex in chunk], dtype=dtype)
        x = guided_sample_batch(model, cond, lens, sched, guidance, gen)
        for j, ex in enumerate(chunk):
            src = ex.triplet.source
            out.append(MotionSequence(x[j, : lens[j]].double().cpu().numpy(), src.layout, src.frame_rate))
    return out
