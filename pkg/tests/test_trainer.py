import math

import numpy as np
import pytest
import torch

from chatemg.dataset import build_generative_set, stack_examples
from chatemg.datasim import make_profile, simulate_recording
from chatemg.errors import InvalidArgument, InvalidCorpus, TrainingDiverged
from chatemg.model import ModelConfig, load_checkpoint
from chatemg.signal_core import Intent, Recording, RecordingMeta
from chatemg.trainer import TrainConfig, evaluate_loss, train_all_intents, train_intent_model

MC = ModelConfig(n_embed=16, n_blocks_per_branch=1, n_heads=2, context_len=32, dropout=0.0)


@pytest.fixture(scope="module")
def recordings():
    prof = make_profile("S1", 0)
    return [simulate_recording(prof, ("on_table", "off"), 1, seed, r)
            for r, seed in enumerate([11, 12, 13], start=1)]


@pytest.fixture(scope="module")
def open_sets(recordings):
    tr = stack_examples(build_generative_set(recordings[:2], Intent.OPEN, 32, 40))
    va = stack_examples(build_generative_set(recordings[2:], Intent.OPEN, 32, 40))
    return tr, va


def test_loss_decreases(open_sets):
    tr, va = open_sets
    tc = TrainConfig(learning_rate=3e-3, batch_size=16, max_steps=20, val_interval=20, val_batches=2)
    model, rep = train_intent_model(MC, tc, tr, va, "open")
    assert rep.train_loss[-1] < math.log(1001)
    assert rep.best_val_loss < math.log(1001)
    assert rep.stopped_step == 20


def test_deterministic(open_sets, tmp_path):
    tr, va = open_sets
    tc = TrainConfig(learning_rate=1e-3, batch_size=8, max_steps=6, val_interval=3, val_batches=1)
    a, ra = train_intent_model(MC, tc, tr, va, "open", tmp_path / "a.ckpt")
    b, rb = train_intent_model(MC, tc, tr, va, "open", tmp_path / "b.ckpt")
    assert ra.val_loss == rb.val_loss and ra.train_loss == rb.train_loss
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    back, intent = load_checkpoint(tmp_path / "a.ckpt")
    assert intent is Intent.OPEN


def test_early_stopping_restores_best(open_sets):
    tr, va = open_sets
    # a huge learning rate makes validation loss worse after the first check
    tc = TrainConfig(learning_rate=0.5, batch_size=8, max_steps=200, val_interval=1, patience=2,
                     val_batches=1, grad_clip=0.0)
    try:
        model, rep = train_intent_model(MC, tc, tr, va, "open")
    except TrainingDiverged as err:
        assert err.state is not None
        return
    assert rep.stopped_step < 200
    best = min(rep.val_loss)
    assert rep.best_val_loss == best
    got = evaluate_loss(model, *va, batch_size=8, max_batches=1)
    assert got == pytest.approx(best, rel=1e-5)


def test_diverged_raises():
    x = np.zeros((4, 32, 8), np.int64)
    y = np.zeros((4, 32), np.int64)

    class Poison(torch.nn.Module):
        config = MC

        def __init__(self):
            super().__init__()
            self.w = torch.nn.Parameter(torch.tensor(float("nan")))

        def forward(self, tok):
            return torch.zeros(*tok.shape[:2], 1001) * self.w

    with pytest.raises(TrainingDiverged) as exc:
        train_intent_model(MC, TrainConfig(max_steps=2), (x, y), (x, y), "open", init_model=Poison())
    assert exc.value.step == 0


def test_example_count_is_eight_times_windows(recordings):
    plain = build_generative_set(recordings, Intent.CLOSE, 32, 40, augment=False)
    aug = build_generative_set(recordings, Intent.CLOSE, 32, 40, augment=True)
    assert len(aug) == 8 * len(plain)


def test_invalid_corpus_names_intent():
    meta = [RecordingMeta("S1", 1, "on_table", "off", i) for i in (1, 2, 3)]
    labels = np.array([Intent.OPEN] * 40 + [Intent.RELAX] * 40)
    recs = [Recording(np.zeros((80, 8), int), labels, m) for m in meta]
    with pytest.raises(InvalidCorpus) as exc:
        train_all_intents(MC, TrainConfig(max_steps=1), recs)
    assert exc.value.intent == "close"


def test_config_validation():
    with pytest.raises(InvalidArgument):
        TrainConfig(learning_rate=0)
    with pytest.raises(InvalidArgument):
        TrainConfig(patience=0)
