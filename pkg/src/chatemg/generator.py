"""Prompt-conditioned autoregressive synthesis of full 8-channel windows.

The models only predict channel 0. A complete frame is produced by running
the model on the eight channel rotations of the same history: rotation k
puts channel k in front, so its channel-0 prediction is the next value of
channel k. All eight values are sampled from the same history and the frame
is appended before the next step.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import torch

from .dataset import sample_prompts
from .errors import ContextOverflow, InvalidArgument
from .signal_core import N_CHANNELS, Intent, Prompt, RecordingLike, rotate_channels, write_frames_csv


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 1.0     # 0 means greedy (argmax)
    top_k: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise InvalidArgument("temperature must be >= 0 (0 selects argmax)")
        if self.top_k is not None and self.top_k < 1:
            raise InvalidArgument("top_k must be >= 1")


@dataclass
class SyntheticBatch:
    windows: List[np.ndarray]
    intent: Intent
    provenance: List[dict]
    sampling: SamplingConfig

    def __len__(self) -> int:
        return len(self.windows)


def _window_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _uniforms(seed: int, n_steps: int) -> np.ndarray:
    """Per-window uniform draws, one row of 8 per generated frame."""
    return np.random.default_rng(int(seed)).random((n_steps, N_CHANNELS))


def _sample(logits: torch.Tensor, cfg: SamplingConfig, u: np.ndarray) -> torch.Tensor:
    """Inverse-CDF sampling: one token per row of (R, V) logits given R uniforms."""
    V = logits.shape[-1]
    if cfg.top_k is not None and cfg.top_k > V:
        raise InvalidArgument(f"top_k {cfg.top_k} exceeds vocabulary {V}")
    if cfg.temperature == 0:
        return logits.argmax(dim=-1)
    logits = logits.double() / cfg.temperature
    if cfg.top_k is not None and cfg.top_k < V:
        kth = torch.topk(logits, cfg.top_k, dim=-1).values[:, -1:]
        logits = logits.masked_fill(logits < kth, float("-inf"))
    cdf = torch.softmax(logits, dim=-1).cumsum(dim=-1)
    target = torch.from_numpy(np.ascontiguousarray(u, dtype=np.float64)).reshape(-1, 1) * cdf[:, -1:]
    return torch.searchsorted(cdf, target, right=True)[:, 0].clamp_(max=V - 1)


def _rotations(history: torch.Tensor) -> torch.Tensor:
    """(B, L, 8) -> (B*8, L, 8), rows ordered window-major then rotation k."""
    rots = [torch.roll(history, shifts=-k, dims=-1) for k in range(N_CHANNELS)]
    return torch.stack(rots, dim=1).reshape(-1, *history.shape[1:])


def _check_context(model, length: int) -> None:
    T = model.config.context_len
    if length >= T:
        raise ContextOverflow(f"history of {length} frames leaves no room in context {T}")


def next_frame(model, history: np.ndarray, sampling: SamplingConfig = SamplingConfig()) -> np.ndarray:
    """Sample one full frame given an (L, 8) history, L <= T - 1.

    Every rotation is run through the full forward pass (no cache).
    """
    history = np.asarray(history)
    if history.ndim != 2 or history.shape[1] != N_CHANNELS or history.shape[0] < 1:
        raise InvalidArgument("history must be (L, 8) with L >= 1")
    _check_context(model, history.shape[0])
    batch = torch.from_numpy(np.stack([rotate_channels(history, k) for k in range(N_CHANNELS)]).astype(np.int64))
    with torch.no_grad():
        logits = model(batch)[:, -1]
    return _sample(logits, sampling, _uniforms(sampling.rng_seed, 1)[0]).numpy().astype(np.int16)


def complete_batch(model, prompts: np.ndarray, target_len: int = 256,
                   sampling: SamplingConfig = SamplingConfig(),
                   seeds: Optional[Sequence[int]] = None, chunk: int = 1000) -> np.ndarray:
    """Complete (B, P, 8) prompts to (B, target_len, 8) using a key/value cache.

    Window i samples from its own generator seeded by ``seeds[i]`` so results
    do not depend on batch composition or chunking.
    """
    prompts = np.asarray(prompts)
    B, P = prompts.shape[:2]
    if P >= target_len:
        raise InvalidArgument(f"prompt length {P} must be shorter than target {target_len}")
    if target_len > model.config.context_len:
        raise ContextOverflow(f"target {target_len} exceeds context {model.config.context_len}")
    if seeds is None:
        seeds = [_window_seed(sampling.rng_seed, i) for i in range(B)]
    out = np.empty((B, target_len, N_CHANNELS), dtype=np.int16)
    out[:, :P] = prompts
    was_training = model.training
    model.eval()
    for c0 in range(0, B, chunk):
        sl = slice(c0, min(B, c0 + chunk))
        u = np.stack([_uniforms(s, target_len - P) for s in seeds[sl]])   # (b, steps, 8)
        hist = torch.from_numpy(prompts[sl].astype(np.int64))
        with torch.no_grad():
            logits, cache = model.prefill(_rotations(hist))
            for t in range(P, target_len):
                frame = _sample(logits, sampling, u[:, t - P]).view(-1, N_CHANNELS)
                out[sl, t] = frame.numpy()
                if t + 1 < target_len:
                    # rotation k of the new frame, same ordering as _rotations
                    logits = model.step(_rotations(frame[:, None, :])[:, 0], cache)
    model.train(was_training)
    return out


def complete(model, prompt, target_len: int = 256, sampling: SamplingConfig = SamplingConfig()) -> np.ndarray:
    """Complete one prompt (Prompt or (P, 8) array) to a (target_len, 8) window."""
    data = prompt.data if isinstance(prompt, Prompt) else np.asarray(prompt)
    if data.shape[0] >= target_len:
        raise InvalidArgument(f"prompt length {data.shape[0]} must be shorter than target {target_len}")
    return complete_batch(model, data[None], target_len, sampling, seeds=[sampling.rng_seed])[0]


def batch_generate(model_set: Mapping, support: RecordingLike, n_per_intent: int = 1000,
                   sampling: SamplingConfig = SamplingConfig(), P: int = 150,
                   target_len: int = 256) -> Dict[Intent, SyntheticBatch]:
    """Synthesize ``n_per_intent`` windows per intent from prompts drawn out of ``support``."""
    out = {}
    for intent in Intent:
        model = model_set[intent]
        prompt_seed = _window_seed(sampling.rng_seed, 1_000_000 + int(intent))
        prompts = sample_prompts(support, intent, n_per_intent, P, prompt_seed)
        base = _window_seed(sampling.rng_seed, 2_000_000 + int(intent))
        seeds = [_window_seed(base, i) for i in range(n_per_intent)]
        data = np.stack([p.data for p in prompts]) if prompts else np.zeros((0, P, N_CHANNELS), np.int16)
        windows = complete_batch(model, data, target_len, sampling, seeds) if prompts else data
        prov = [{"index": i, "recording_id": p.source[0], "prompt_offset": p.source[1], "seed": s}
                for i, (p, s) in enumerate(zip(prompts, seeds))]
        out[intent] = SyntheticBatch(list(windows), intent, prov, sampling)
    return out


def write_synthetic(batches: Mapping[Intent, SyntheticBatch], out_dir: Union[str, Path]) -> List[Path]:
    """One recording-format file per intent plus a JSON provenance manifest.

    Windows are written back to back; the manifest records each window's row offset.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    manifest = {}
    for intent, batch in sorted(batches.items()):
        frames = np.concatenate(batch.windows) if batch.windows else np.zeros((0, N_CHANNELS), np.int16)
        path = out_dir / f"synthetic_{intent.label}.csv"
        write_frames_csv(path, frames, [int(intent)] * len(frames))
        written.append(path)
        T = batch.windows[0].shape[0] if batch.windows else 0
        manifest[intent.label] = {
            "file": path.name, "window_len": T, "sampling": asdict(batch.sampling),
            "windows": [dict(p, row_offset=i * T) for i, p in enumerate(batch.provenance)],
        }
    mpath = out_dir / "provenance.json"
    mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    written.append(mpath)
    return written
