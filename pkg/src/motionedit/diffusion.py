"""DDPM machinery for x0-prediction: schedule, noising, losses, sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InputError, SingularityError, ValidationError
from .model import ConditionBatch, make_condition_batch
from .motion import MotionSequence
from .text import TextFeatures

MAX_BETA = 0.999


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Cumulative signal level ``alpha_bar[t]`` for ``t = 0 .. T-1``.

    Index 0 is the first noising step, so ``alpha_bar[0] < 1``.
    """

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 1:
            raise ValidationError("alpha_bar must be a non-empty vector")
        ab = ab.copy()
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def T(self) -> int:
        return self.alpha_bar.size

    @property
    def alpha_bar_prev(self) -> np.ndarray:
        return np.concatenate([[1.0], self.alpha_bar[:-1]])

    @property
    def betas(self) -> np.ndarray:
        return 1.0 - self.alpha_bar / self.alpha_bar_prev

    @property
    def posterior_variance(self) -> np.ndarray:
        return self.betas * (1.0 - self.alpha_bar_prev) / (1.0 - self.alpha_bar)

    @property
    def posterior_coef_x0(self) -> np.ndarray:
        return self.betas * np.sqrt(self.alpha_bar_prev) / (1.0 - self.alpha_bar)

    @property
    def posterior_coef_xt(self) -> np.ndarray:
        return (1.0 - self.alpha_bar_prev) * np.sqrt(1.0 - self.betas) / (1.0 - self.alpha_bar)

    def check_t(self, t: int) -> int:
        if not 0 <= int(t) < self.T:
            raise InputError(f"timestep {t} outside [0, {self.T})")
        return int(t)

    def validate(self) -> None:
        """Raise unless the schedule is strictly decreasing inside (0, 1)."""
        ab = self.alpha_bar
        if not (np.all(ab > 0) and np.all(ab < 1) and np.all(np.diff(ab) < 0)):
            raise ValidationError("alpha_bar must be strictly decreasing inside (0, 1)")


def make_cosine_schedule(T: int = 300, s: float = 0.008) -> NoiseSchedule:
    """Cosine schedule with per-step betas clipped at 0.999."""
    if T < 1:
        raise InputError(f"T must be at least 1, got {T}")
    f = lambda u: math.cos((u / T + s) / (1 + s) * math.pi / 2) ** 2
    betas = np.array([min(1.0 - f(t + 1) / f(t), MAX_BETA) for t in range(T)])
    sched = NoiseSchedule(np.cumprod(1.0 - betas))
    sched.validate()
    return sched


def noise_at(m0, eps, alpha_bar: float):
    """``sqrt(ab) * m0 + sqrt(1 - ab) * eps`` for a scalar signal level."""
    if not 0.0 <= alpha_bar <= 1.0:
        raise InputError(f"alpha_bar must lie in [0, 1], got {alpha_bar}")
    if tuple(np.shape(m0)) != tuple(np.shape(eps)):
        raise InputError(f"shape mismatch: {np.shape(m0)} vs {np.shape(eps)}")
    if alpha_bar == 1.0:
        return m0 * 1.0
    if alpha_bar == 0.0:
        return eps * 1.0
    return math.sqrt(alpha_bar) * m0 + math.sqrt(1.0 - alpha_bar) * eps


def forward_noise(m0, t: int, eps, sched: NoiseSchedule):
    return noise_at(m0, eps, float(sched.alpha_bar[sched.check_t(t)]))


def x0_from_noise(m_t, eps, alpha_bar: float):
    if alpha_bar <= 0.0:
        raise SingularityError("cannot recover M_0 when alpha_bar is 0")
    return (m_t - math.sqrt(1.0 - alpha_bar) * eps) / math.sqrt(alpha_bar)


def reconstruct_x0(m_t, t: int, eps, sched: NoiseSchedule):
    """Invert :func:`forward_noise` given the noise that was added."""
    return x0_from_noise(m_t, eps, float(sched.alpha_bar[sched.check_t(t)]))


def q_sample(m0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Batched forward noising with a per-example timestep."""
    ab = torch.tensor(sched.alpha_bar, dtype=m0.dtype, device=m0.device)[t]
    ab = ab.reshape(-1, *([1] * (m0.ndim - 1)))
    return ab.sqrt() * m0 + (1 - ab).sqrt() * eps


# -- losses -----------------------------------------------------------------

def editing_loss(m0: torch.Tensor, predicted: torch.Tensor,
                 mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean squared error over all valid ``F' x D`` entries.

    ``mask`` is an optional ``(B, F')`` boolean with True at padding frames.
    """
    m0 = torch.as_tensor(m0)
    predicted = torch.as_tensor(predicted)
    if m0.shape != predicted.shape:
        raise InputError(f"shape mismatch: {tuple(m0.shape)} vs {tuple(predicted.shape)}")
    sq = (predicted - m0) ** 2
    if mask is None:
        return sq.mean()
    keep = (~mask).to(sq.dtype)[..., None].expand_as(sq)
    return (sq * keep).sum() / keep.sum().clamp_min(1.0)


def auxiliary_loss(logits: torch.Tensor, labels: torch.Tensor,
                   mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean per-frame cross-entropy of similarity logits against class labels.

    Args:
        logits: ``(F, K)`` or ``(B, F, K)``.
        labels: integer classes with the leading shape of ``logits``.
        mask: optional boolean, True where a frame is excluded.
    """
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=torch.long)
    k = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise InputError(f"labels shape {tuple(labels.shape)} does not match logits {tuple(logits.shape)}")
    valid = torch.ones_like(labels, dtype=torch.bool) if mask is None else ~mask
    if bool(((labels[valid] < 0) | (labels[valid] >= k)).any()):
        raise InputError(f"labels must lie in [0, {k})")
    nll = -F.log_softmax(logits, dim=-1).gather(-1, labels.clamp(0, k - 1)[..., None])[..., 0]
    w = valid.to(nll.dtype)
    return (nll * w).sum() / w.sum().clamp_min(1.0)


def total_loss(editing, auxiliary, aux_weight: float = 1.0):
    return editing + aux_weight * auxiliary


# -- guidance ---------------------------------------------------------------

@dataclass(frozen=True)
class GuidanceConfig:
    s_text: float = 2.0
    s_motion: float = 2.0
    p_drop_text: float = 0.1
    p_drop_both: float = 0.1

    def __post_init__(self):
        if self.s_text < 0 or self.s_motion < 0:
            raise ValidationError("guidance scales must be non-negative")
        for p in (self.p_drop_text, self.p_drop_both):
            if not 0.0 <= p <= 1.0:
                raise ValidationError("dropout probabilities must lie in [0, 1]")
        if self.p_drop_text + self.p_drop_both > 1.0:
            raise ValidationError("p_drop_text + p_drop_both must not exceed 1")


def sample_condition_dropout(rng: np.random.Generator, n: int,
                             p_drop_text: float, p_drop_both: float) -> tuple[np.ndarray, np.ndarray]:
    """Draw per-example ``(drop_text, drop_source)`` flags.

    With probability ``p_drop_both`` both conditions are dropped, with
    probability ``p_drop_text`` only the text; source-only dropout never occurs.
    """
    u = rng.random(n)
    both = u < p_drop_both
    text_only = (u >= p_drop_both) & (u < p_drop_both + p_drop_text)
    return both | text_only, both


# Branch order for the three guidance evaluations.
BRANCHES = ((True, True), (True, False), (False, False))


def compose_guidance(e_uncond, e_source, e_full, s_text: float, s_motion: float):
    """Two-way guided x0 estimate.

    Algebraically ``e_uncond + s_motion (e_source - e_uncond) + s_text (e_full - e_source)``,
    written as a weighted sum so that scales (1, 1) and (0, 0) return the
    full and unconditional predictions exactly.
    """
    return s_text * e_full + (s_motion - s_text) * e_source + (1.0 - s_motion) * e_uncond


@torch.no_grad()
def guided_sample_batch(model, cond: ConditionBatch, lengths, sched: NoiseSchedule,
                        guidance: GuidanceConfig = GuidanceConfig(),
                        generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Ancestral DDPM sampling with two-way classifier-free guidance.

    ``model`` must provide ``encode_conditions(cond)`` and
    ``denoise(x_t, target_mask, t, cond_out)``; the conditions are encoded
    once and reused for every step.

    Returns:
        ``(B, max(lengths), D)`` tensor; rows beyond each length are zero.
    """
    b = len(cond)
    lengths = [int(n) for n in lengths]
    if len(lengths) != b:
        raise InputError("need one target length per example")
    fmax = max(lengths)
    device, dtype = cond.source.device, cond.source.dtype
    tgt_mask = torch.arange(fmax, device=device)[None, :] >= torch.tensor(lengths, device=device)[:, None]
    branches = cond.repeat_branches(BRANCHES)
    cond_out = model.encode_conditions(branches)
    mask3 = tgt_mask.repeat(3, 1)
    d = cond.source.shape[-1]
    x = torch.randn((b, fmax, d), generator=generator, dtype=dtype, device=device)
    coef_x0 = sched.posterior_coef_x0
    coef_xt = sched.posterior_coef_xt
    sigma = np.sqrt(sched.posterior_variance)
    x0 = x
    for t in range(sched.T - 1, -1, -1):
        tt = torch.full((3 * b,), t, dtype=torch.long, device=device)
        pred = model.denoise(x.repeat(3, 1, 1), mask3, tt, cond_out)
        e_uncond, e_source, e_full = pred.chunk(3, dim=0)
        x0 = compose_guidance(e_uncond, e_source, e_full, guidance.s_text, guidance.s_motion)
        if t == 0:
            break
        noise = torch.randn(x.shape, generator=generator, dtype=dtype, device=device)
        x = float(coef_x0[t]) * x0 + float(coef_xt[t]) * x + float(sigma[t]) * noise
    return x0.masked_fill(tgt_mask[..., None], 0.0)


def guided_sample(source: MotionSequence, text: TextFeatures, model, sched: NoiseSchedule,
                  guidance: GuidanceConfig = GuidanceConfig(), length: Optional[int] = None,
                  seed: int = 0) -> MotionSequence:
    """Edit one source motion; ``length`` defaults to the source length."""
    length = source.F if length is None else int(length)
    p = next(model.parameters())
    cond = make_condition_batch([source.frames], [text], dtype=p.dtype, device=p.device)
    gen = torch.Generator(device=p.device).manual_seed(seed)
    out = guided_sample_batch(model, cond, [length], sched, guidance, gen)
    return MotionSequence(out[0, :length].double().cpu().numpy(), source.layout, source.frame_rate)
