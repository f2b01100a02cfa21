"""Training examples for the generative models and the intent classifiers."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from .errors import InsufficientSupport, InvalidArgument
from .signal_core import (
    EmgWindow,
    Intent,
    Prompt,
    Recording,
    RecordingLike,
    normalize_for_classifier,
    rotate_channels,
    single_intent_starts,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GenExample:
    input: np.ndarray    # (T, 8) tokens
    target: np.ndarray   # (T,) next channel-0 value per step
    source: Tuple[str, int, int] = ("", 0, 0)   # recording id, start, rotation


@dataclass(frozen=True)
class SplitSpec:
    train_recordings: Tuple[str, ...]
    val_recordings: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "train_recordings", tuple(self.train_recordings))
        object.__setattr__(self, "val_recordings", tuple(self.val_recordings))
        overlap = set(self.train_recordings) & set(self.val_recordings)
        if overlap:
            raise InvalidArgument(f"train/val splits share recordings: {sorted(overlap)}")

    def write(self, path: Union[str, Path]) -> None:
        lines = ["# dataset split manifest", "[train]", *self.train_recordings, "[val]", *self.val_recordings]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: Union[str, Path]) -> "SplitSpec":
        sections = {"train": [], "val": []}
        current = None
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                if current not in sections:
                    raise InvalidArgument(f"{path}:{lineno}: unknown section {current!r}")
            elif current is None:
                raise InvalidArgument(f"{path}:{lineno}: id outside a [train]/[val] section")
            else:
                sections[current].append(line)
        return cls(sections["train"], sections["val"])


def split_recordings(recordings: Sequence[Recording], val_fraction: float = 0.4,
                     rng_seed: int = 0) -> SplitSpec:
    """Whole-recording split; at least one recording lands on each side when possible."""
    ids = sorted(r.recording_id for r in recordings)
    if not ids:
        return SplitSpec((), ())
    order = np.random.default_rng(rng_seed).permutation(len(ids))
    n_val = int(round(val_fraction * len(ids)))
    if len(ids) > 1:
        n_val = min(max(n_val, 1), len(ids) - 1)
    val = sorted(ids[i] for i in order[:n_val])
    train = sorted(ids[i] for i in order[n_val:])
    return SplitSpec(train, val)


def build_generative_set(recordings: Iterable[RecordingLike], intent, T: int = 256, stride: int = 10,
                         augment: bool = True) -> List[GenExample]:
    """Next-value examples from single-intent windows of length T + 1.

    With ``augment`` each source window yields eight examples, one per
    channel rotation; otherwise only the unrotated one.
    """
    intent = Intent.parse(intent)
    rotations = range(8) if augment else (0,)
    out: List[GenExample] = []
    for rec in recordings:
        offset = getattr(rec, "start", 0)
        labels = rec.labels
        for s in single_intent_starts(labels, T + 1, stride):
            if labels[s] != intent:
                continue
            win = np.asarray(rec.frames[s:s + T + 1])
            for k in rotations:
                rot = rotate_channels(win, k)
                out.append(GenExample(rot[:T].copy(), rot[1:, 0].copy(), (rec.recording_id, offset + int(s), k)))
    if not out:
        log.warning("no %d-frame windows of intent %s found", T + 1, intent)
    return out


def stack_examples(examples: Sequence[GenExample]) -> Tuple[np.ndarray, np.ndarray]:
    """(N, T, 8) inputs and (N, T) targets as int64 arrays."""
    if not examples:
        return np.zeros((0, 0, 8), np.int64), np.zeros((0, 0), np.int64)
    x = np.stack([e.input for e in examples]).astype(np.int64)
    y = np.stack([e.target for e in examples]).astype(np.int64)
    return x, y


def prompt_starts(support: RecordingLike, intent, P: int = 150) -> np.ndarray:
    """Every start offset (relative to ``support``) of a P-frame single-intent slice."""
    intent = Intent.parse(intent)
    starts = single_intent_starts(support.labels, P, 1)
    return starts[np.asarray(support.labels)[starts] == intent]


def sample_prompts(support: RecordingLike, intent, n: int, P: int = 150, rng_seed=0) -> List[Prompt]:
    """Draw ``n`` prompts uniformly (with replacement) from valid start offsets."""
    intent = Intent.parse(intent)
    starts = prompt_starts(support, intent, P)
    if starts.size == 0:
        raise InsufficientSupport(intent.label)
    rng = np.random.default_rng(rng_seed)
    picks = starts[rng.integers(0, starts.size, size=n)]
    offset = getattr(support, "start", 0)
    frames = support.frames
    return [Prompt(np.array(frames[s:s + P]), intent, (support.recording_id, offset + int(s))) for s in picks]


def build_classifier_set(windows: Sequence[EmgWindow]) -> Tuple[np.ndarray, np.ndarray]:
    """Normalized (N, T, 8) float features and (N,) integer intent labels, order preserved."""
    if not windows:
        return np.zeros((0, 0, 8)), np.zeros(0, dtype=np.int64)
    X = np.stack([normalize_for_classifier(w) for w in windows])
    y = np.array([int(w.intent) for w in windows], dtype=np.int64)
    return X, y
