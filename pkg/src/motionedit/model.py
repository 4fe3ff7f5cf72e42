"""Motion diffusion transformer.

Two stacked encoders:

* a condition transformer that mixes source-motion frames with text tokens
  and predicts a per-frame similarity class for every source frame;
* a diffusion transformer that denoises the edited motion. Its input is the
  enhanced source features followed by the noised target along the sequence
  axis; the timestep and pooled enhanced text enter through AdaLN-Zero.

The noised target never reaches the condition transformer, so the
similarity head is independent of the diffusion inputs.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .errors import CapacityError, CheckpointError, InputError, ValidationError
from .motion import MotionSequence
from .text import TextFeatures

CHECKPOINT_VERSION = "mdt-1"


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 512
    cond_layers: int = 4
    diff_layers: int = 8
    heads: int = 8
    K: int = 3
    D: int = 207
    max_frames: int = 300
    dropout: float = 0.1
    text_dim: int = 64
    max_tokens: int = 16
    ff_mult: int = 4
    positional: bool = True
    num_timesteps: int = 300

    def __post_init__(self):
        if self.latent_dim % self.heads != 0:
            raise ValidationError(
                f"latent_dim={self.latent_dim} is not divisible by heads={self.heads}")
        for name in ("latent_dim", "heads", "K", "D", "max_frames", "text_dim", "max_tokens"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.K < 2:
            raise ValidationError("K must be at least 2")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ConditionBatch:
    """Padded conditioning inputs for ``B`` examples.

    Masks are True at padding positions. ``drop_text`` / ``drop_source``
    replace the respective condition with the learned null embedding.
    """

    source: torch.Tensor        # (B, F, D)
    source_mask: torch.Tensor   # (B, F) bool
    text: torch.Tensor          # (B, L, E)
    text_mask: torch.Tensor     # (B, L) bool
    drop_text: torch.Tensor     # (B,) bool
    drop_source: torch.Tensor   # (B,) bool

    def __len__(self):
        return self.source.shape[0]

    def repeat_branches(self, drops: Sequence[tuple[bool, bool]]) -> "ConditionBatch":
        """Stack one copy per ``(drop_text, drop_source)`` pair, branch-major."""
        n = len(drops)
        b = len(self)
        dt = torch.tensor([d[0] for d in drops for _ in range(b)], device=self.source.device)
        ds = torch.tensor([d[1] for d in drops for _ in range(b)], device=self.source.device)
        return ConditionBatch(
            self.source.repeat(n, 1, 1), self.source_mask.repeat(n, 1),
            self.text.repeat(n, 1, 1), self.text_mask.repeat(n, 1),
            dt | self.drop_text.repeat(n), ds | self.drop_source.repeat(n))


@dataclass
class ConditionOutput:
    enhanced_motion: torch.Tensor   # (B, F, H)
    motion_mask: torch.Tensor       # (B, F) bool
    enhanced_text: torch.Tensor     # (B, L, H)
    text_mask: torch.Tensor         # (B, L) bool
    pooled_text: torch.Tensor       # (B, H)
    similarity_logits: torch.Tensor  # (B, F, K)


def make_condition_batch(sources: Sequence[np.ndarray], texts: Sequence[TextFeatures],
                         drop_text=None, drop_source=None,
                         dtype=torch.float32, device=None) -> ConditionBatch:
    b = len(sources)
    if b != len(texts) or b == 0:
        raise InputError("need the same non-zero number of sources and texts")
    fmax = max(s.shape[0] for s in sources)
    d = sources[0].shape[1]
    src = np.zeros((b, fmax, d), dtype=np.float64)
    smask = np.ones((b, fmax), dtype=bool)
    for i, s in enumerate(sources):
        src[i, : s.shape[0]] = s
        smask[i, : s.shape[0]] = False
    lmax = max(t.tokens.shape[0] for t in texts)
    e = texts[0].embed_dim
    txt = np.zeros((b, lmax, e), dtype=np.float32)
    tmask = np.ones((b, lmax), dtype=bool)
    for i, t in enumerate(texts):
        n = t.tokens.shape[0]
        txt[i, :n] = t.tokens
        tmask[i, :n] = t.padding_mask
    zeros = np.zeros(b, dtype=bool)
    as_bool = lambda v: torch.as_tensor(zeros if v is None else np.asarray(v, dtype=bool), device=device)
    return ConditionBatch(
        torch.as_tensor(src, dtype=dtype, device=device), torch.as_tensor(smask, device=device),
        torch.as_tensor(txt, dtype=dtype, device=device), torch.as_tensor(tmask, device=device),
        as_bool(drop_text), as_bool(drop_source))


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64, device=t.device) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def sinusoid_table(n: int, dim: int) -> torch.Tensor:
    """Initial value for a learned positional table.

    Starting from fixed sinusoids rather than small noise lets the model
    line up source and target frames from the first step.
    """
    return timestep_embedding(torch.arange(n), dim).float()


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        b, n, c = x.shape
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(c // self.heads)
        if pad_mask is not None:
            scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        attn = scores.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


def feed_forward(dim: int, mult: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(nn.Linear(dim, mult * dim), nn.GELU(), nn.Dropout(dropout),
                         nn.Linear(mult * dim, dim))


class EncoderLayer(nn.Module):
    """Pre-norm transformer encoder layer."""

    def __init__(self, dim: int, heads: int, ff_mult: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = feed_forward(dim, ff_mult, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, pad_mask=None):
        x = x + self.drop(self.attn(self.norm1(x), pad_mask))
        return x + self.drop(self.ff(self.norm2(x)))


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1 + scale[:, None, :]) + shift[:, None, :]


class AdaLNZeroBlock(nn.Module):
    """DiT block: shift/scale/gate for both branches regressed from ``c``."""

    def __init__(self, dim: int, heads: int, ff_mult: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.ff = feed_forward(dim, ff_mult, dropout)
        self.drop = nn.Dropout(dropout)
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(dim, 6 * dim))
        nn.init.zeros_(self.modulation[-1].weight)
        nn.init.zeros_(self.modulation[-1].bias)

    def forward(self, x, c, pad_mask=None):
        shift1, scale1, gate1, shift2, scale2, gate2 = self.modulation(c).chunk(6, dim=-1)
        x = x + gate1[:, None, :] * self.drop(self.attn(modulate(self.norm1(x), shift1, scale1), pad_mask))
        return x + gate2[:, None, :] * self.drop(self.ff(modulate(self.norm2(x), shift2, scale2)))


class FinalLayer(nn.Module):
    def __init__(self, dim: int, out_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(dim, 2 * dim))
        nn.init.zeros_(self.modulation[-1].weight)
        nn.init.zeros_(self.modulation[-1].bias)
        self.linear = nn.Linear(dim, out_dim)

    def forward(self, x, c):
        shift, scale = self.modulation(c).chunk(2, dim=-1)
        return self.linear(modulate(self.norm(x), shift, scale))


class ConditionTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        h = cfg.latent_dim
        self.cfg = cfg
        self.motion_in = nn.Linear(cfg.D, h)
        self.text_in = nn.Linear(cfg.text_dim, h)
        self.motion_pos = nn.Parameter(sinusoid_table(cfg.max_frames, h))
        self.text_pos = nn.Parameter(sinusoid_table(cfg.max_tokens, h))
        self.segment = nn.Parameter(torch.randn(2, h) * 0.02)
        self.layers = nn.ModuleList(
            EncoderLayer(h, cfg.heads, cfg.ff_mult, cfg.dropout) for _ in range(cfg.cond_layers))
        self.norm = nn.LayerNorm(h)
        self.similarity_head = nn.Linear(h, cfg.K)

    def forward(self, source, source_mask, text, text_mask) -> ConditionOutput:
        n_frames, n_tok = source.shape[1], text.shape[1]
        m = self.motion_in(source) + self.segment[0]
        w = self.text_in(text) + self.segment[1]
        if self.cfg.positional:
            m = m + self.motion_pos[:n_frames]
            w = w + self.text_pos[:n_tok]
        x = torch.cat([m, w], dim=1)
        mask = torch.cat([source_mask, text_mask], dim=1)
        for layer in self.layers:
            x = layer(x, mask)
        x = self.norm(x)
        motion, words = x[:, :n_frames], x[:, n_frames:]
        keep = (~text_mask).to(words.dtype)[..., None]
        pooled = (words * keep).sum(1) / keep.sum(1).clamp_min(1.0)
        return ConditionOutput(motion, source_mask, words, text_mask, pooled,
                               self.similarity_head(motion))


class DiffusionTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        h = cfg.latent_dim
        self.cfg = cfg
        self.motion_in = nn.Linear(cfg.D, h)
        self.target_pos = nn.Parameter(sinusoid_table(cfg.max_frames, h))
        self.segment = nn.Parameter(torch.randn(2, h) * 0.02)
        self.time_mlp = nn.Sequential(nn.Linear(h, h), nn.SiLU(), nn.Linear(h, h))
        self.text_to_cond = nn.Linear(h, h)
        self.blocks = nn.ModuleList(
            AdaLNZeroBlock(h, cfg.heads, cfg.ff_mult, cfg.dropout) for _ in range(cfg.diff_layers))
        self.final = FinalLayer(h, cfg.D)

    def conditioning(self, t: torch.Tensor, pooled_text: torch.Tensor) -> torch.Tensor:
        temb = timestep_embedding(t, self.cfg.latent_dim).to(pooled_text.dtype)
        return self.time_mlp(temb) + self.text_to_cond(pooled_text)

    def embed_target(self, x_t: torch.Tensor) -> torch.Tensor:
        h = self.motion_in(x_t) + self.segment[1]
        if self.cfg.positional:
            h = h + self.target_pos[: x_t.shape[1]]
        return h

    def forward(self, x_t, target_mask, t, cond: ConditionOutput) -> torch.Tensor:
        n_src = cond.enhanced_motion.shape[1]
        x = torch.cat([cond.enhanced_motion + self.segment[0], self.embed_target(x_t)], dim=1)
        mask = torch.cat([cond.motion_mask, target_mask], dim=1)
        c = self.conditioning(t, cond.pooled_text)
        for block in self.blocks:
            x = block(x, c, mask)
        return self.final(x[:, n_src:], c)


class MotionDiffusionTransformer(nn.Module):
    """Learnable parameters of both transformers plus the null conditions."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.condition = ConditionTransformer(cfg)
        self.diffusion = DiffusionTransformer(cfg)
        self.null_text = nn.Parameter(torch.randn(cfg.text_dim) * 0.02)
        self.null_source = nn.Parameter(torch.zeros(1, cfg.D))

    def _check_len(self, n: int, what: str):
        if n > self.config.max_frames:
            raise CapacityError(f"{what} has {n} frames; max_frames is {self.config.max_frames}")

    def _apply_drops(self, cond: ConditionBatch):
        src, smask = cond.source, cond.source_mask
        txt, tmask = cond.text, cond.text_mask
        if bool(cond.drop_source.any()):
            first = torch.zeros_like(smask)
            first[:, 0] = True
            null_src = torch.zeros_like(src)
            null_src[:, 0] = self.null_source[0].to(src.dtype)
            ds = cond.drop_source
            src = torch.where(ds[:, None, None], null_src, src)
            smask = torch.where(ds[:, None], ~first, smask)
        if bool(cond.drop_text.any()):
            first = torch.zeros_like(tmask)
            first[:, 0] = True
            null_txt = torch.zeros_like(txt)
            null_txt[:, 0] = self.null_text.to(txt.dtype)
            dt = cond.drop_text
            txt = torch.where(dt[:, None, None], null_txt, txt)
            tmask = torch.where(dt[:, None], ~first, tmask)
        return src, smask, txt, tmask

    def encode_conditions(self, cond: ConditionBatch) -> ConditionOutput:
        self._check_len(cond.source.shape[1], "source")
        return self.condition(*self._apply_drops(cond))

    def denoise(self, x_t, target_mask, t, cond_out: ConditionOutput) -> torch.Tensor:
        """Predict the clean target ``M_0`` from ``M_t``."""
        self._check_len(x_t.shape[1], "target")
        t = torch.as_tensor(t, device=x_t.device).reshape(-1).expand(x_t.shape[0])
        if bool(((t < 0) | (t >= self.config.num_timesteps)).any()):
            raise InputError(f"timestep out of range [0, {self.config.num_timesteps})")
        return self.diffusion(x_t, target_mask, t, cond_out)

    def forward(self, x_t, target_mask, t, cond: ConditionBatch):
        cond_out = self.encode_conditions(cond)
        return self.denoise(x_t, target_mask, t, cond_out), cond_out

    def gate_parameters(self) -> list[nn.Parameter]:
        """Weights and biases of every AdaLN-Zero modulation layer."""
        out = []
        for block in self.diffusion.blocks:
            out += list(block.modulation.parameters())
        out += list(self.diffusion.final.modulation.parameters())
        return out

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        """Named parameters split by owner: condition side vs diffusion side."""
        groups = {"condition": [], "diffusion": [], "null": []}
        for name, p in self.named_parameters():
            if name.startswith("condition."):
                groups["condition"].append((name, p))
            elif name.startswith("diffusion."):
                groups["diffusion"].append((name, p))
            else:
                groups["null"].append((name, p))
        return groups


ModelBundle = MotionDiffusionTransformer


def _single_text(text: TextFeatures, device, dtype):
    tok = torch.as_tensor(np.asarray(text.tokens), dtype=dtype, device=device)[None]
    mask = torch.as_tensor(np.asarray(text.padding_mask), device=device)[None]
    return tok, mask


def condition_forward(source: MotionSequence, text: TextFeatures,
                      bundle: MotionDiffusionTransformer) -> ConditionOutput:
    """Run the condition transformer on one example (batch axis of size 1)."""
    p = next(bundle.parameters())
    cond = make_condition_batch([source.frames], [text], dtype=p.dtype, device=p.device)
    return bundle.encode_conditions(cond)


def diffusion_forward(noised_target, t: int, cond: ConditionOutput,
                      bundle: MotionDiffusionTransformer) -> torch.Tensor:
    """Predict ``M_0`` of shape ``(F', D)`` for one example."""
    p = next(bundle.parameters())
    x = torch.as_tensor(np.asarray(noised_target), dtype=p.dtype, device=p.device)
    if x.ndim == 2:
        x = x[None]
    mask = torch.zeros(x.shape[:2], dtype=torch.bool, device=p.device)
    return bundle.denoise(x, mask, torch.tensor([t], device=p.device), cond)[0]


def build_bundle(cfg: ModelConfig, seed: int = 0) -> MotionDiffusionTransformer:
    torch.manual_seed(seed)
    return MotionDiffusionTransformer(cfg)


# -- checkpoints ------------------------------------------------------------

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _zip_write(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_bundle(bundle: MotionDiffusionTransformer, path, extra: Optional[dict] = None) -> None:
    """Write a zip archive with ``header.json`` and one ``.npy`` per tensor.

    Timestamps inside the archive are fixed so identical parameters give
    identical bytes.
    """
    state = bundle.state_dict()
    header = {"version": CHECKPOINT_VERSION, "config": asdict(bundle.config),
              "parameters": list(state.keys())}
    if extra:
        header.update(extra)
    with zipfile.ZipFile(path, "w") as zf:
        _zip_write(zf, "header.json", json.dumps(header, sort_keys=True, indent=1).encode())
        for name, tensor in state.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, tensor.detach().cpu().numpy(), allow_pickle=False)
            _zip_write(zf, f"params/{name}.npy", buf.getvalue())


def read_checkpoint_header(path) -> dict:
    try:
        with zipfile.ZipFile(path) as zf:
            return json.loads(zf.read("header.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint ({exc})") from None


def load_bundle(path, D: Optional[int] = None, config: Optional[ModelConfig] = None,
                dtype=torch.float32) -> MotionDiffusionTransformer:
    """Load a checkpoint written by :func:`save_bundle`.

    Args:
        D: expected feature dimension; a mismatch raises CheckpointError.
        config: expected full config; any difference raises CheckpointError.
    """
    header = read_checkpoint_header(path)
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {header.get('version')!r} != expected {CHECKPOINT_VERSION!r}")
    try:
        cfg = ModelConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValidationError) as exc:
        raise CheckpointError(f"bad config in checkpoint: {exc}") from None
    if D is not None and cfg.D != D:
        raise CheckpointError(f"checkpoint has D={cfg.D}, expected D={D}")
    if config is not None and config != cfg:
        raise CheckpointError("checkpoint config differs from the requested config")
    model = MotionDiffusionTransformer(cfg)
    expected = model.state_dict()
    state = {}
    with zipfile.ZipFile(path) as zf:
        for name, ref in expected.items():
            try:
                arr = np.lib.format.read_array(io.BytesIO(zf.read(f"params/{name}.npy")),
                                               allow_pickle=False)
            except KeyError:
                raise CheckpointError(f"checkpoint is missing parameter {name!r}") from None
            if tuple(arr.shape) != tuple(ref.shape):
                raise CheckpointError(
                    f"parameter {name!r} has shape {arr.shape}, config implies {tuple(ref.shape)}")
            state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model.to(dtype)
