"""Per-intent generative training with validation-based early stopping."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .dataset import build_generative_set, split_recordings, stack_examples
from .errors import InvalidArgument, InvalidCorpus, TrainingDiverged
from .model import ChatEMG, ModelConfig, init_params, loss, save_checkpoint
from .signal_core import Intent, Recording

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 64
    max_epochs: int = 10
    patience: int = 3
    val_interval: int = 200
    rng_seed: int = 0
    grad_clip: float = 1.0
    max_steps: Optional[int] = None
    val_batches: Optional[int] = None    # cap on validation batches per check
    stride: int = 10
    val_fraction: float = 0.4
    threads: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidArgument("learning_rate, batch_size and max_epochs must be positive")
        if self.patience < 1 or self.val_interval < 1:
            raise InvalidArgument("patience and val_interval must be >= 1")


@dataclass
class TrainReport:
    intent: str
    steps: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    stopped_epoch: int = 0
    stopped_step: int = 0
    best_val_loss: float = math.inf
    best_step: int = 0
    n_train_examples: int = 0
    n_val_examples: int = 0
    checkpoint: Optional[str] = None

    def log_lines(self) -> List[str]:
        return [f"step={s} train_loss={t:.6f} val_loss={v:.6f}"
                for s, t, v in zip(self.steps, self.train_loss, self.val_loss)]


def _as_arrays(examples) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(examples, tuple):
        return examples
    return stack_examples(examples)


@torch.no_grad()
def evaluate_loss(model: ChatEMG, x: np.ndarray, y: np.ndarray, batch_size: int = 64,
                  max_batches: Optional[int] = None) -> float:
    """Mean per-token cross-entropy of ``model`` over (x, y), in eval mode."""
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    n_batches = math.ceil(len(x) / batch_size)
    if max_batches is not None:
        n_batches = min(n_batches, max_batches)
    for b in range(n_batches):
        xb = torch.from_numpy(x[b * batch_size:(b + 1) * batch_size])
        yb = torch.from_numpy(y[b * batch_size:(b + 1) * batch_size])
        total += float(loss(model(xb), yb)) * yb.numel()
        count += yb.numel()
    model.train(was_training)
    return total / max(count, 1)


def train_intent_model(model_config: ModelConfig, train_config: TrainConfig, train_set, val_set,
                       intent, checkpoint_path: Union[str, Path, None] = None,
                       progress: Optional[Callable[[str], None]] = None,
                       init_model: Optional[ChatEMG] = None) -> Tuple[ChatEMG, TrainReport]:
    """Train one model; returns the parameters with the lowest validation loss.

    ``train_set``/``val_set`` are lists of GenExample or pre-stacked (x, y) arrays.
    """
    intent = Intent.parse(intent)
    cfg = train_config
    x_tr, y_tr = _as_arrays(train_set)
    x_va, y_va = _as_arrays(val_set)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise InvalidArgument("train and validation sets must be non-empty")

    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.rng_seed)
    model = init_model if init_model is not None else init_params(model_config, cfg.rng_seed)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999))
    rng = np.random.default_rng(cfg.rng_seed)

    report = TrainReport(intent=intent.label, n_train_examples=len(x_tr), n_val_examples=len(x_va))
    best_state = copy.deepcopy(model.state_dict())
    last_finite = best_state
    bad_checks = 0
    step = 0
    running, running_n = 0.0, 0
    stop = False
    epoch = 0

    def check():
        nonlocal best_state, bad_checks, running, running_n, stop
        val = evaluate_loss(model, x_va, y_va, cfg.batch_size, cfg.val_batches)
        tr = running / max(running_n, 1)
        report.steps.append(step)
        report.train_loss.append(tr)
        report.val_loss.append(val)
        line = f"intent={intent.label} step={step} train_loss={tr:.6f} val_loss={val:.6f}"
        log.info(line)
        if progress:
            progress(line)
        running, running_n = 0.0, 0
        if val < report.best_val_loss:
            report.best_val_loss, report.best_step = val, step
            best_state = copy.deepcopy(model.state_dict())
            bad_checks = 0
        else:
            bad_checks += 1
            if bad_checks >= cfg.patience:
                stop = True

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x_tr))
        for b in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[b:b + cfg.batch_size])
            xb = torch.from_numpy(x_tr[idx])
            yb = torch.from_numpy(y_tr[idx])
            batch_loss = loss(model(xb), yb)
            if not torch.isfinite(batch_loss):
                model.load_state_dict(last_finite)
                raise TrainingDiverged(f"non-finite loss at step {step}", state=last_finite, step=step)
            if step % cfg.val_interval == 0:
                last_finite = copy.deepcopy(model.state_dict())
            opt.zero_grad(set_to_none=True)
            batch_loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            step += 1
            running += float(batch_loss.detach())
            running_n += 1
            if step % cfg.val_interval == 0:
                check()
            if stop or (cfg.max_steps is not None and step >= cfg.max_steps):
                break
        if stop or (cfg.max_steps is not None and step >= cfg.max_steps):
            break
    if running_n:
        check()

    report.stopped_epoch = epoch
    report.stopped_step = step
    model.load_state_dict(best_state)
    model.eval()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, intent,
                        extra={"best_val_loss": report.best_val_loss, "best_step": report.best_step})
        report.checkpoint = str(checkpoint_path)
    return model, report


def train_all_intents(model_config: ModelConfig, train_config: TrainConfig,
                      offline_corpus: Sequence[Recording], checkpoint_dir: Union[str, Path, None] = None,
                      augment: bool = True, progress: Optional[Callable[[str], None]] = None,
                      ) -> Tuple[Dict[Intent, ChatEMG], Dict[Intent, TrainReport]]:
    """One model per intent, each trained only on that intent's windows.

    Recordings are split train/validation as whole recordings.
    """
    split = split_recordings(offline_corpus, train_config.val_fraction, train_config.rng_seed)
    by_id = {r.recording_id: r for r in offline_corpus}
    train_recs = [by_id[i] for i in split.train_recordings]
    val_recs = [by_id[i] for i in split.val_recordings]
    T = model_config.context_len
    sets = {}
    for intent in Intent:
        tr = build_generative_set(train_recs, intent, T, train_config.stride, augment)
        va = build_generative_set(val_recs, intent, T, train_config.stride, augment)
        if not tr or not va:
            raise InvalidCorpus(intent.label)
        sets[intent] = (tr, va)
    models, reports = {}, {}
    for intent, (tr, va) in sets.items():
        ckpt = None if checkpoint_dir is None else Path(checkpoint_dir) / f"{intent.label}.ckpt"
        models[intent], reports[intent] = train_intent_model(
            model_config, train_config, tr, va, intent, ckpt, progress)
    return models, reports
