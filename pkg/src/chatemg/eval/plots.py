"""Point lists for real-vs-synthetic figures, written as CSV for any plotting tool."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from ..errors import InvalidArgument
from ..signal_core import N_CHANNELS, Intent, single_intent_starts
from .tsne import tsne

CHANNEL_NAMES = tuple(f"emg{i}" for i in range(1, N_CHANNELS + 1))
# the figure in the original study shows the first two channels only
FIGURE_CHANNELS = (0, 1)


def signal_rows(real: np.ndarray, synthetic: np.ndarray) -> Tuple[List[str], List[list]]:
    """Side-by-side traces: one row per time step, 8 real then 8 synthetic columns."""
    real = np.asarray(real)
    synthetic = np.asarray(synthetic)
    if real.shape != synthetic.shape or real.ndim != 2 or real.shape[1] != N_CHANNELS:
        raise InvalidArgument(f"expected two (T, 8) windows, got {real.shape} and {synthetic.shape}")
    header = ["t"] + [f"real_{c}" for c in CHANNEL_NAMES] + [f"synthetic_{c}" for c in CHANNEL_NAMES]
    rows = [[t, *real[t].tolist(), *synthetic[t].tolist()] for t in range(real.shape[0])]
    return header, rows


def window_samples(frames: np.ndarray, labels: np.ndarray, length: int) -> List[Tuple[int, int, np.ndarray]]:
    """Back-to-back single-intent windows as (start, intent, (length, 8)) triples."""
    frames = np.asarray(frames)
    labels = np.asarray(labels)
    return [(int(s), int(labels[s]), frames[s:s + length]) for s in single_intent_starts(labels, length, length)]


def tsne_rows(samples: Sequence[Tuple[str, int, np.ndarray]], perplexity: float = 30.0,
              iters: int = 1000, rng_seed: int = 0) -> Tuple[List[str], List[list]]:
    """Per-channel 2D embeddings of (source, intent, window) samples.

    Each channel is embedded separately, treating the channel's trace in every
    window as one point. Output has one row per (channel, sample).
    """
    if len(samples) < 3:
        raise InvalidArgument("t-SNE needs at least 3 windows")
    n = len(samples)
    perplexity = min(perplexity, (n - 1) / 3.0)
    data = np.stack([s[2] for s in samples]).astype(np.float64)
    header = ["channel", "figure_channel", "sample", "source", "intent", "x", "y"]
    rows = []
    for c in range(N_CHANNELS):
        emb = tsne(data[:, :, c], perplexity=perplexity, iters=iters, rng_seed=rng_seed).embedding
        for i, (source, intent, _) in enumerate(samples):
            rows.append([CHANNEL_NAMES[c], int(c in FIGURE_CHANNELS), i, source, Intent(intent).label,
                         repr(float(emb[i, 0])), repr(float(emb[i, 1]))])
    return header, rows


def write_rows(path: Union[str, Path], header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
