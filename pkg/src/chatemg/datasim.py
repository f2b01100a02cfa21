"""Parametric EMG session simulator following the cued open/relax/close protocol.

Signals are synthetic; the parameters are not claims about stroke physiology.
They exist so the full pipeline can run (and be checked) without patient data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .signal_core import (
    ARM_POSITIONS,
    DEFAULT_RAW_RANGE,
    MOTOR_STATES,
    N_CHANNELS,
    SAMPLE_RATE_HZ,
    Intent,
    Recording,
    RecordingMeta,
    preprocess,
    read_key_values,
)

SIM_PROFILE_VERSION = 1

CUE_FRAMES = 5 * SAMPLE_RATE_HZ
LEAD_IN_FRAMES = CUE_FRAMES
N_MOTIONS = 3
MOTION_SCHEDULE = (Intent.OPEN, Intent.RELAX, Intent.CLOSE, Intent.RELAX)
EFFORT_SPREAD = 0.4
CONDITIONS = tuple((arm, motor) for arm in ARM_POSITIONS for motor in MOTOR_STATES)


@dataclass
class SubjectProfile:
    subject_id: str
    baseline: np.ndarray                 # (8,) raw units
    amplitude: dict                      # Intent -> (8,) raw units, >= 0
    tau_rise: dict                       # Intent -> seconds
    tau_decay: dict                      # Intent -> seconds
    noise_scale: float = 2.0
    drift_rate: float = 0.15             # fractional activation growth over one recording
    rng_seed: int = 0

    def __post_init__(self):
        self.baseline = np.asarray(self.baseline, dtype=np.float64)
        self.amplitude = {Intent.parse(k): np.asarray(v, dtype=np.float64) for k, v in self.amplitude.items()}
        self.tau_rise = {Intent.parse(k): float(v) for k, v in self.tau_rise.items()}
        self.tau_decay = {Intent.parse(k): float(v) for k, v in self.tau_decay.items()}
        for intent, amp in self.amplitude.items():
            if amp.shape != (N_CHANNELS,) or np.any(amp < 0):
                raise ValueError(f"amplitude for {intent} must be 8 nonnegative values")

    def to_text(self) -> str:
        lines = [f"version={SIM_PROFILE_VERSION}", f"subject_id={self.subject_id}",
                 f"baseline={_fmt(self.baseline)}", f"noise_scale={self.noise_scale!r}",
                 f"drift_rate={self.drift_rate!r}", f"rng_seed={self.rng_seed}"]
        for intent in Intent:
            if intent in self.amplitude:
                lines.append(f"amplitude.{intent.label}={_fmt(self.amplitude[intent])}")
                lines.append(f"tau_rise.{intent.label}={self.tau_rise[intent]!r}")
                lines.append(f"tau_decay.{intent.label}={self.tau_decay[intent]!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "SubjectProfile":
        kv = read_key_values(path)
        if int(kv.get("version", -1)) != SIM_PROFILE_VERSION:
            raise ValueError(f"{path}: unsupported profile version {kv.get('version')}")
        amp, rise, decay = {}, {}, {}
        for key, value in kv.items():
            if "." not in key:
                continue
            group, name = key.split(".", 1)
            target = {"amplitude": amp, "tau_rise": rise, "tau_decay": decay}[group]
            target[name] = _parse_vec(value) if group == "amplitude" else float(value)
        return cls(kv["subject_id"], _parse_vec(kv["baseline"]), amp, rise, decay,
                   float(kv["noise_scale"]), float(kv["drift_rate"]), int(kv["rng_seed"]))


@dataclass
class ConditionEffect:
    arm_off_gain: np.ndarray = field(default_factory=lambda: np.ones(N_CHANNELS))
    motor_burst: np.ndarray = field(default_factory=lambda: np.zeros(N_CHANNELS))
    motor_delay_s: float = 1.0
    motor_duration_s: float = 1.5

    def __post_init__(self):
        self.arm_off_gain = np.asarray(self.arm_off_gain, dtype=np.float64)
        self.motor_burst = np.asarray(self.motor_burst, dtype=np.float64)
        if np.any(self.arm_off_gain <= 0):
            raise ValueError("arm_off_gain must be positive")


def _fmt(vec) -> str:
    return " ".join(repr(float(v)) for v in vec)


def _parse_vec(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split()], dtype=np.float64)


def _bump(center: float, width: float, peak: float) -> np.ndarray:
    """Circular Gaussian bump over the 8 electrodes around the forearm."""
    idx = np.arange(N_CHANNELS)
    d = np.minimum(np.abs(idx - center), N_CHANNELS - np.abs(idx - center))
    return peak * np.exp(-0.5 * (d / width) ** 2)


def make_profile(subject_id: str, rng_seed: int) -> SubjectProfile:
    """Draw a random subject. Each subject gets its own electrode placement and muscle map."""
    rng = np.random.default_rng(rng_seed)
    placement = rng.uniform(0, N_CHANNELS)
    # extensors and flexors sit on roughly opposite sides of the forearm
    open_center = placement
    close_center = (placement + rng.uniform(3.0, 5.0)) % N_CHANNELS
    open_peak = rng.uniform(30.0, 70.0)
    close_peak = rng.uniform(50.0, 90.0)
    amp_open = _bump(open_center, rng.uniform(0.8, 1.4), open_peak) + rng.uniform(0, 6, N_CHANNELS)
    amp_close = _bump(close_center, rng.uniform(0.8, 1.4), close_peak) + rng.uniform(0, 6, N_CHANNELS)
    # co-contraction typical of spastic muscle: closing also recruits part of the open map
    amp_close += rng.uniform(0.1, 0.4) * amp_open
    amp_relax = rng.uniform(0, 4, N_CHANNELS)
    return SubjectProfile(
        subject_id=subject_id,
        baseline=rng.uniform(-112.0, -88.0, N_CHANNELS),
        amplitude={Intent.OPEN: amp_open, Intent.CLOSE: amp_close, Intent.RELAX: amp_relax},
        tau_rise={Intent.OPEN: rng.uniform(0.2, 0.6), Intent.CLOSE: rng.uniform(0.15, 0.4),
                  Intent.RELAX: 0.5},
        tau_decay={Intent.OPEN: rng.uniform(0.3, 0.8), Intent.CLOSE: rng.uniform(0.5, 1.2),
                   Intent.RELAX: 0.5},
        noise_scale=rng.uniform(1.5, 3.0),
        drift_rate=rng.uniform(0.05, 0.25),
        rng_seed=int(rng_seed),
    )


def make_condition_effect(rng_seed: int) -> ConditionEffect:
    rng = np.random.default_rng(rng_seed)
    return ConditionEffect(arm_off_gain=rng.uniform(1.05, 1.4, N_CHANNELS),
                           motor_burst=rng.uniform(4.0, 14.0, N_CHANNELS))


def protocol_labels(n_motions: int = N_MOTIONS, cue_frames: int = CUE_FRAMES,
                    lead_in: int = LEAD_IN_FRAMES) -> np.ndarray:
    """Cue track: relax lead-in, then ``n_motions`` x (open, relax, close, relax)."""
    parts = [np.full(lead_in, Intent.RELAX, dtype=np.int8)]
    for _ in range(n_motions):
        parts += [np.full(cue_frames, intent, dtype=np.int8) for intent in MOTION_SCHEDULE]
    return np.concatenate(parts)


def _envelope(active: np.ndarray, tau_rise: float, tau_decay: float) -> np.ndarray:
    """First-order rise/decay response to a 0/1 cue indicator (causal)."""
    a_rise = 1.0 - np.exp(-1.0 / (tau_rise * SAMPLE_RATE_HZ))
    a_decay = 1.0 - np.exp(-1.0 / (tau_decay * SAMPLE_RATE_HZ))
    out = np.empty(active.shape[0])
    e = 0.0
    for t, u in enumerate(active):
        e += (a_rise if u > e else a_decay) * (u - e)
        out[t] = e
    return out


def _session_variant(profile: SubjectProfile, session_index: int) -> Tuple[SubjectProfile, float]:
    """Session 2 perturbs amplitudes and baseline and re-draws the drift rate."""
    if session_index == 1:
        return profile, profile.drift_rate
    rng = np.random.default_rng([profile.rng_seed, 7919, session_index])
    amp = {k: v * rng.uniform(0.8, 1.2, N_CHANNELS) for k, v in profile.amplitude.items()}
    varied = SubjectProfile(profile.subject_id, profile.baseline + rng.uniform(-6, 6, N_CHANNELS),
                            amp, profile.tau_rise, profile.tau_decay, profile.noise_scale,
                            profile.drift_rate, profile.rng_seed)
    return varied, float(rng.uniform(0.05, 0.25))


def simulate_raw(profile: SubjectProfile, condition: Tuple[str, str], session_index: int,
                 rng_seed: int, effect: Optional[ConditionEffect] = None,
                 labels: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Raw (N, 8) signal in ADC units and its label track, before preprocessing."""
    arm, motor = condition
    labels = protocol_labels() if labels is None else np.asarray(labels)
    effect = effect or make_condition_effect(profile.rng_seed + 1)
    prof, drift_rate = _session_variant(profile, session_index)
    rng = np.random.default_rng(rng_seed)
    n = labels.shape[0]

    # effort differs between repetitions of the same cued motion
    effort = np.ones(n)
    for lab, start in _cue_onsets(labels):
        if lab in (Intent.OPEN, Intent.CLOSE):
            stop = start + int(np.argmax(labels[start:] != lab)) if np.any(labels[start:] != lab) else n
            effort[start:stop] = rng.uniform(1.0 - EFFORT_SPREAD, 1.0 + EFFORT_SPREAD)

    activation = np.zeros((n, N_CHANNELS))
    for intent in Intent:
        cue = (labels == intent) * effort
        env = _envelope(cue.astype(np.float64), prof.tau_rise[intent], prof.tau_decay[intent])
        activation += env[:, None] * prof.amplitude[intent][None, :]
    activation *= (1.0 + drift_rate * np.arange(n) / n)[:, None]

    # fast fluctuation of muscle activity, stronger when active
    ar = np.empty((n, N_CHANNELS))
    eps = rng.standard_normal((n, N_CHANNELS))
    state = np.zeros(N_CHANNELS)
    for t in range(n):
        state = 0.85 * state + np.sqrt(1 - 0.85 ** 2) * eps[t]
        ar[t] = state
    noise = prof.noise_scale * (1.0 + activation / 25.0) * ar
    noise += 0.5 * prof.noise_scale * rng.standard_normal((n, N_CHANNELS))

    signal = prof.baseline[None, :] + activation + noise
    if motor == "on":
        delay = int(round(effect.motor_delay_s * SAMPLE_RATE_HZ))
        dur = int(round(effect.motor_duration_s * SAMPLE_RATE_HZ))
        burst = np.zeros(n)
        for lab, start in _cue_onsets(labels):
            if lab in (Intent.OPEN, Intent.CLOSE):
                burst[start + delay:start + delay + dur] = 1.0
        signal += burst[:, None] * effect.motor_burst[None, :] * (1 + 0.3 * rng.standard_normal((n, 1)))
    if arm == "off_table":
        lo = DEFAULT_RAW_RANGE[0]
        signal = (signal - lo) * effect.arm_off_gain[None, :] + lo
    return signal, labels


def _cue_onsets(labels: np.ndarray) -> list[Tuple[int, int]]:
    idx = np.concatenate([[0], np.flatnonzero(np.diff(labels)) + 1])
    return [(int(labels[i]), int(i)) for i in idx]


def simulate_recording(profile: SubjectProfile, condition: Tuple[str, str], session_index: int,
                       rng_seed: int, recording_index: int = 1,
                       effect: Optional[ConditionEffect] = None) -> Recording:
    """One protocol recording, median-filtered and quantized like real data."""
    raw, labels = simulate_raw(profile, condition, session_index, rng_seed, effect)
    meta = RecordingMeta(profile.subject_id, session_index, condition[0], condition[1], recording_index)
    return Recording(preprocess(raw), labels, meta)


def default_profiles(n_subjects: int = 5, master_seed: int = 0) -> list[SubjectProfile]:
    return [make_profile(f"S{i + 1}", _seed(master_seed, 1, i)) for i in range(n_subjects)]


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def simulate_corpus(n_subjects: int = 5, n_sessions: int = 2, conditions: Union[int, Sequence] = 4,
                    recordings_per_condition: int = 2, master_seed: int = 0,
                    profiles: Optional[Sequence[SubjectProfile]] = None) -> list[Recording]:
    """Full corpus: subjects x sessions x conditions x recordings, ordered in that nesting."""
    if min(n_subjects, n_sessions, recordings_per_condition) < 1:
        raise ValueError("corpus counts must be positive")
    if isinstance(conditions, int):
        if not 1 <= conditions <= len(CONDITIONS):
            raise ValueError("conditions must be in 1..4")
        conditions = CONDITIONS[:conditions]
    if n_sessions > 2:
        raise ValueError("the protocol has at most two sessions")
    profiles = list(profiles) if profiles is not None else default_profiles(n_subjects, master_seed)
    effect = make_condition_effect(_seed(master_seed, 2))
    out = []
    for si, prof in enumerate(profiles[:n_subjects]):
        for session in range(1, n_sessions + 1):
            for ci, cond in enumerate(conditions):
                for r in range(1, recordings_per_condition + 1):
                    seed = _seed(master_seed, 3, si, session, ci, r)
                    out.append(simulate_recording(prof, tuple(cond), session, seed, r, effect))
    return out
