"""Domain types and deterministic signal transforms for 8-channel EMG.

All frames live in the quantized vocabulary: integers in [0, 1000] sampled
at 100 Hz. Arrays are numpy, time along axis 0 and channels along axis 1.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgument, MalformedRecording

N_CHANNELS = 8
SAMPLE_RATE_HZ = 100
Q_MIN, Q_MAX = 0, 1000
DEFAULT_RAW_RANGE = (-128.0, 127.0)

ARM_POSITIONS = ("on_table", "off_table")
MOTOR_STATES = ("off", "on")


class Intent(enum.IntEnum):
    """User intent; the integer value is the classifier label encoding."""

    OPEN = 0
    RELAX = 1
    CLOSE = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: Union[str, int, "Intent"]) -> "Intent":
        if isinstance(value, Intent):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise InvalidArgument(f"unknown intent {value!r}; expected open, close or relax") from None

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class RecordingMeta:
    subject_id: str
    session_index: int
    arm_position: str
    motor_state: str
    recording_index: int

    def __post_init__(self):
        if self.session_index not in (1, 2):
            raise InvalidArgument(f"session_index must be 1 or 2, got {self.session_index}")
        if self.arm_position not in ARM_POSITIONS:
            raise InvalidArgument(f"arm_position must be one of {ARM_POSITIONS}")
        if self.motor_state not in MOTOR_STATES:
            raise InvalidArgument(f"motor_state must be one of {MOTOR_STATES}")

    @property
    def condition(self) -> Tuple[str, str]:
        return (self.arm_position, self.motor_state)

    @property
    def recording_id(self) -> str:
        return (f"{self.subject_id}_s{self.session_index}_{self.arm_position}"
                f"_motor{self.motor_state}_r{self.recording_index}")


@dataclass(frozen=True, eq=False)
class Recording:
    """A labelled quantized recording. ``frames`` is (N, 8) int, ``labels`` (N,) int."""

    frames: np.ndarray
    labels: np.ndarray
    meta: RecordingMeta

    def __post_init__(self):
        frames = np.asarray(self.frames)
        labels = np.asarray(self.labels)
        if frames.ndim != 2 or frames.shape[1] != N_CHANNELS:
            raise MalformedRecording(f"frames must be (N, {N_CHANNELS}), got {frames.shape}")
        if labels.shape != (frames.shape[0],):
            raise MalformedRecording("frames and labels differ in length")
        if frames.size and (frames.min() < Q_MIN or frames.max() > Q_MAX):
            raise MalformedRecording("frame values outside [0, 1000]")
        if labels.size and (labels.min() < 0 or labels.max() > 2):
            raise MalformedRecording("labels outside the intent encoding")
        frames = frames.astype(np.int16, copy=True)
        labels = labels.astype(np.int8, copy=True)
        frames.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def recording_id(self) -> str:
        return self.meta.recording_id

    def slice(self, start: int, stop: int) -> "RecordingSlice":
        return RecordingSlice(self, start, stop)


@dataclass(frozen=True)
class RecordingSlice:
    """A contiguous [start, stop) view of a recording."""

    recording: Recording
    start: int
    stop: int

    @property
    def frames(self) -> np.ndarray:
        return self.recording.frames[self.start:self.stop]

    @property
    def labels(self) -> np.ndarray:
        return self.recording.labels[self.start:self.stop]

    @property
    def meta(self) -> RecordingMeta:
        return self.recording.meta

    @property
    def recording_id(self) -> str:
        return self.recording.recording_id

    def __len__(self) -> int:
        return self.stop - self.start


RecordingLike = Union[Recording, RecordingSlice]


@dataclass(frozen=True, eq=False)
class EmgWindow:
    data: np.ndarray
    intent: Intent
    source: Tuple[str, int] = ("", 0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[1] != N_CHANNELS:
            raise InvalidArgument(f"window must be (T, {N_CHANNELS}), got {data.shape}")
        if data.min() < Q_MIN or data.max() > Q_MAX:
            raise InvalidArgument("window values outside [0, 1000]")
        object.__setattr__(self, "intent", Intent.parse(self.intent))


@dataclass(frozen=True, eq=False)
class Prompt:
    data: np.ndarray
    intent: Intent
    source: Tuple[str, int] = ("", 0)

    def __len__(self) -> int:
        return self.data.shape[0]


def median_filter(raw, width: int = 9) -> np.ndarray:
    """Per-channel running median with replicate padding at both ends."""
    if not isinstance(width, (int, np.integer)) or width < 1 or width % 2 == 0:
        raise InvalidArgument(f"median width must be a positive odd integer, got {width!r}")
    x = np.asarray(raw, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.shape[0] < 1:
        raise InvalidArgument("median_filter needs at least one frame")
    half = width // 2
    padded = np.pad(x, ((half, half), (0, 0)), mode="edge")
    # windows: (N, C, width)
    out = np.median(sliding_window_view(padded, width, axis=0), axis=-1)
    return out[:, 0] if squeeze else out


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(raw_value, raw_range: Tuple[float, float] = DEFAULT_RAW_RANGE):
    """Affine map of ``raw_range`` onto [0, 1000], rounded half away from zero and clipped.

    Accepts a scalar (returns int) or an array (returns int16 array).
    """
    lo, hi = float(raw_range[0]), float(raw_range[1])
    if not lo < hi:
        raise InvalidArgument(f"raw_range must satisfy lo < hi, got {raw_range}")
    x = np.asarray(raw_value, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("quantize received non-finite input")
    scaled = (x - lo) * (Q_MAX - Q_MIN) / (hi - lo) + Q_MIN
    q = np.clip(_round_half_away(scaled), Q_MIN, Q_MAX)
    if q.ndim == 0:
        return int(q)
    return q.astype(np.int16)


def preprocess(raw, raw_range: Tuple[float, float] = DEFAULT_RAW_RANGE, width: int = 9) -> np.ndarray:
    """Median-filter then quantize a raw (N, 8) stream."""
    return quantize(median_filter(raw, width), raw_range)


def normalize_for_classifier(window) -> np.ndarray:
    """Map quantized values to [-1, 1] via v / 500 - 1."""
    data = window.data if isinstance(window, EmgWindow) else window
    return np.asarray(data, dtype=np.float64) / 500.0 - 1.0


def rotate_channels(window: np.ndarray, k: int) -> np.ndarray:
    """Cyclic channel rotation: output channel j is input channel (j + k) mod 8."""
    if not isinstance(k, (int, np.integer)) or not 0 <= k <= N_CHANNELS - 1:
        raise InvalidArgument(f"rotation must be in 0..7, got {k!r}")
    return np.roll(np.asarray(window), -int(k), axis=-1)


def label_runs(labels: np.ndarray) -> list[Tuple[int, int, int]]:
    """Constant-label runs as (label, start, stop) triples."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    stops = np.concatenate([change, [labels.size]])
    return [(int(labels[s]), int(s), int(e)) for s, e in zip(starts, stops)]


def single_intent_starts(labels: np.ndarray, length: int, stride: int = 1) -> np.ndarray:
    """Start offsets on the ``stride`` grid whose ``length``-window carries one label."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if length < 1 or stride < 1:
        raise InvalidArgument("length and stride must be positive")
    if length > n:
        return np.zeros(0, dtype=np.int64)
    # number of label changes inside [s, s + length)
    changes = np.concatenate([[0], np.cumsum(labels[1:] != labels[:-1])])
    starts = np.arange(0, n - length + 1, stride)
    ok = changes[starts + length - 1] == changes[starts]
    return starts[ok]


def segment_windows(recording: RecordingLike, length: int = 256, stride: int = 10) -> list[EmgWindow]:
    """Single-intent windows ordered by start offset; windows crossing a cue change are dropped."""
    offset = recording.start if isinstance(recording, RecordingSlice) else 0
    frames, labels = recording.frames, recording.labels
    rid = recording.recording_id
    return [
        EmgWindow(frames[s:s + length], Intent(int(labels[s])), (rid, offset + int(s)))
        for s in single_intent_starts(labels, length, stride)
    ]


def motion_bounds(labels: np.ndarray) -> list[Tuple[int, int]]:
    """(start, stop) of every open-relax-close motion.

    A motion starts at an open cue onset and ends after the relax run that
    follows its close cue (or at the close end if no relax follows).
    """
    runs = label_runs(labels)
    motions = []
    i = 0
    while i < len(runs):
        lab, start, _ = runs[i]
        if lab != Intent.OPEN:
            i += 1
            continue
        j = i + 1
        while j < len(runs) and runs[j][0] != Intent.CLOSE:
            if runs[j][0] == Intent.OPEN:
                break
            j += 1
        if j >= len(runs) or runs[j][0] != Intent.CLOSE:
            i = j
            continue
        stop = runs[j][2]
        if j + 1 < len(runs) and runs[j + 1][0] == Intent.RELAX:
            j += 1
            stop = runs[j][2]
        motions.append((start, stop))
        i = j + 1
    return motions


def split_support_query(recording: Recording) -> Tuple[RecordingSlice, RecordingSlice]:
    """Support = leading frames through the end of motion 1; query = the remainder."""
    motions = motion_bounds(recording.labels)
    if len(motions) < 3:
        raise MalformedRecording(
            f"{recording.recording_id}: expected >= 3 open-relax-close motions, found {len(motions)}")
    cut = motions[0][1]
    return recording.slice(0, cut), recording.slice(cut, len(recording))


# ---------------------------------------------------------------- file format

CSV_HEADER = ["timestamp"] + [f"emg{i + 1}" for i in range(N_CHANNELS)] + ["label"]
MANIFEST_SUFFIX = ".manifest"


def manifest_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_suffix(MANIFEST_SUFFIX)


def write_frames_csv(path: Union[str, Path], frames: np.ndarray, labels: Sequence[int]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for i, (row, lab) in enumerate(zip(np.asarray(frames), labels)):
            values = ",".join(str(int(v)) for v in row)
            fh.write(f"{i / SAMPLE_RATE_HZ:.2f},{values},{Intent(int(lab)).label}\n")


def read_frames_csv(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """Parse a recording-format file; errors carry the offending line number."""
    frames, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise MalformedRecording(f"{path}:1: bad header, expected {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise MalformedRecording(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                values = [int(v) for v in row[1:1 + N_CHANNELS]]
                float(row[0])
            except ValueError:
                raise MalformedRecording(f"{path}:{lineno}: non-numeric field") from None
            if min(values) < Q_MIN or max(values) > Q_MAX:
                raise MalformedRecording(f"{path}:{lineno}: value outside [0, 1000]")
            try:
                labels.append(int(Intent.parse(row[-1])))
            except InvalidArgument:
                raise MalformedRecording(f"{path}:{lineno}: unknown label {row[-1]!r}") from None
            frames.append(values)
    return (np.asarray(frames, dtype=np.int16).reshape(-1, N_CHANNELS),
            np.asarray(labels, dtype=np.int8))


def read_key_values(path: Union[str, Path]) -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise MalformedRecording(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_recording(path: Union[str, Path], recording: Recording) -> None:
    """Write ``path`` (CSV frames) plus its sidecar manifest."""
    path = Path(path)
    write_frames_csv(path, recording.frames, recording.labels)
    m = recording.meta
    manifest_path(path).write_text(
        f"subject_id={m.subject_id}\nsession={m.session_index}\narm_position={m.arm_position}\n"
        f"motor_state={m.motor_state}\nrecording_index={m.recording_index}\n",
        encoding="utf-8")


def read_recording(path: Union[str, Path]) -> Recording:
    path = Path(path)
    frames, labels = read_frames_csv(path)
    mpath = manifest_path(path)
    if not mpath.exists():
        raise MalformedRecording(f"{path}: missing manifest {mpath.name}")
    kv = read_key_values(mpath)
    try:
        meta = RecordingMeta(
            subject_id=kv["subject_id"],
            session_index=int(kv["session"]),
            arm_position=kv["arm_position"],
            motor_state=kv["motor_state"],
            recording_index=int(kv["recording_index"]),
        )
    except KeyError as exc:
        raise MalformedRecording(f"{mpath}: missing key {exc.args[0]}") from None
    return Recording(frames, labels, meta)


def read_corpus(directory: Union[str, Path]) -> list[Recording]:
    """Load every recording under ``directory`` sorted by recording id."""
    paths = sorted(Path(directory).glob("*.csv"))
    recs = [read_recording(p) for p in paths if manifest_path(p).exists()]
    return sorted(recs, key=lambda r: r.recording_id)
