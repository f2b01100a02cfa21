import math
import struct

import numpy as np
import pytest
import torch

from chatemg.errors import CheckpointError, ContextOverflow, InvalidArgument
from chatemg.model import ModelConfig, as_tokens, init_params, load_checkpoint, loss, save_checkpoint
from chatemg.signal_core import Intent

TINY = ModelConfig(vocab_size=11, n_embed=8, n_blocks_per_branch=1, n_heads=2, context_len=6, dropout=0.0)


def numeric_grad_check(model, x, y, eps=1e-6):
    """Worst per-group relative error between autograd and central differences."""
    model.zero_grad()
    loss(model(x), y).backward()
    worst = {}
    for name, p in model.named_parameters():
        analytic = p.grad.detach().clone().reshape(-1)
        numeric = torch.zeros_like(analytic)
        flat = p.data.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                lp = loss(model(x), y).item()
                flat[i] = orig - eps
                lm = loss(model(x), y).item()
                flat[i] = orig
            numeric[i] = (lp - lm) / (2 * eps)
        denom = (analytic.norm() + numeric.norm()).item()
        worst[name] = 0.0 if denom < 1e-12 else (analytic - numeric).norm().item() / denom
    return worst


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.vocab_size, cfg.n_embed, cfg.n_blocks_per_branch, cfg.n_heads, cfg.context_len,
                cfg.fc_layers) == (1001, 256, 12, 8, 256, 3)

    @pytest.mark.parametrize("kw", [dict(n_embed=10, n_heads=4), dict(context_len=1), dict(vocab_size=1),
                                    dict(dropout=1.0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgument):
            ModelConfig(**kw)


class TestForward:
    def test_full_size_shape(self):
        cfg = ModelConfig(n_embed=16, n_blocks_per_branch=1, n_heads=2, dropout=0.0)
        model = init_params(cfg, 0).eval()
        x = torch.randint(0, 1001, (1, 256, 8))
        assert model(x).shape == (1, 256, 1001)

    def test_single_row(self):
        model = init_params(TINY, 0).eval()
        out = model(torch.randint(0, 11, (1, 1, 8)))
        assert out.shape == (1, 1, 11) and torch.isfinite(out).all()

    def test_errors(self):
        model = init_params(TINY, 0)
        with pytest.raises(InvalidArgument):
            model(torch.full((1, 3, 8), 11))
        with pytest.raises(ContextOverflow):
            model(torch.zeros((1, 7, 8), dtype=torch.long))

    def test_causal_perturbation(self):
        model = init_params(ModelConfig(vocab_size=50, n_embed=16, n_blocks_per_branch=2, n_heads=4,
                                        context_len=20, dropout=0.0), 1).eval()
        x = torch.randint(0, 50, (1, 20, 8))
        base = model(x)
        x2 = x.clone()
        x2[0, 9] = (x2[0, 9] + 7) % 50
        out = model(x2)
        assert torch.equal(base[0, :9], out[0, :9])
        assert not torch.equal(base[0, 9:], out[0, 9:])

    def test_context_ablation(self):
        model = init_params(TINY, 0).eval()
        x = torch.randint(0, 11, (2, 6, 8))
        model.use_context = False
        a = model(x)
        x2 = x.clone()
        x2[..., 1:] = (x2[..., 1:] + 3) % 11
        assert torch.isfinite(a).all()
        # only channel 0 matters without the context branch
        assert torch.equal(a, model(x2))
        probs = torch.softmax(a, -1).sum(-1)
        assert torch.allclose(probs, torch.ones_like(probs), atol=1e-6)

    def test_cache_matches_forward(self):
        model = init_params(ModelConfig(vocab_size=30, n_embed=16, n_blocks_per_branch=2, n_heads=4,
                                        context_len=24, dropout=0.0), 5).eval()
        x = torch.randint(0, 30, (3, 24, 8))
        full = model(x)
        logits, cache = model.prefill(x[:, :10])
        torch.testing.assert_close(logits, full[:, 9], rtol=1e-5, atol=1e-5)
        for t in range(10, 24):
            logits = model.step(x[:, t], cache)
            torch.testing.assert_close(logits, full[:, t], rtol=1e-5, atol=1e-5)
        with pytest.raises(ContextOverflow):
            model.step(x[:, 0], cache)

    def test_softmax_normalized(self):
        model = init_params(TINY, 2).eval()
        p = torch.softmax(model(torch.randint(0, 11, (4, 6, 8))), -1).sum(-1)
        assert torch.all((p - 1).abs() < 1e-6)


class TestLoss:
    def test_uniform(self):
        logits = torch.zeros(5, 1001, dtype=torch.float64)
        assert loss(logits, torch.arange(5)).item() == pytest.approx(math.log(1001), abs=1e-12)
        assert math.log(1001) == pytest.approx(6.9088, abs=1e-4)

    def test_margin(self):
        logits = torch.zeros(4, 7, dtype=torch.float64)
        logits[torch.arange(4), torch.tensor([1, 2, 3, 4])] = 60.0
        assert loss(logits, torch.tensor([1, 2, 3, 4])).item() < 1e-20

    def test_hand_oracle(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(3, 5))
        targets = [4, 0, 2]
        expected = 0.0
        for row, t in zip(logits, targets):
            z = sum(math.exp(v) for v in row)
            expected += -(row[t] - math.log(z))
        expected /= 3
        got = loss(torch.tensor(logits), torch.tensor(targets)).item()
        assert abs(got - expected) < 1e-10

    def test_nonnegative_and_errors(self):
        logits = torch.randn(2, 3, 5)
        assert loss(logits, torch.randint(0, 5, (2, 3))).item() >= 0
        with pytest.raises(InvalidArgument):
            loss(logits, torch.zeros(2, 4, dtype=torch.long))
        with pytest.raises(InvalidArgument):
            loss(logits, torch.full((2, 3), 5))


class TestInit:
    def test_deterministic(self):
        a, b = init_params(TINY, 7), init_params(TINY, 7)
        for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(p, q), n
        c = init_params(TINY, 8)
        assert not torch.equal(a.self_tok.weight, c.self_tok.weight)

    def test_biases_zero_weights_scaled(self):
        m = init_params(ModelConfig(n_embed=32, n_blocks_per_branch=1, n_heads=4), 0)
        assert torch.all(m.head[0].bias == 0)
        assert abs(m.ctx_tok[3].weight.std().item() - 0.02) < 0.001

    def test_initial_loss_near_uniform(self):
        cfg = ModelConfig(n_embed=16, n_blocks_per_branch=1, n_heads=2, context_len=32, dropout=0.0)
        model = init_params(cfg, 0).eval()
        gen = torch.Generator().manual_seed(0)
        with torch.no_grad():
            for _ in range(100):
                x = torch.randint(0, 1001, (2, 32, 8), generator=gen)
                y = torch.randint(0, 1001, (2, 32), generator=gen)
                val = loss(model(x), y).item()
                assert math.log(1001) - 0.5 <= val <= math.log(1001) + 0.5


def test_gradient_check_tiny():
    model = init_params(TINY, 3, dtype=torch.float64)
    model.train()
    gen = torch.Generator().manual_seed(1)
    # move away from the init point, where some gradients are ~1e-7 and drown in roundoff
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.3 * torch.randn(p.shape, generator=gen, dtype=torch.float64))
    x = torch.randint(0, 11, (2, 6, 8), generator=gen)
    y = torch.randint(0, 11, (2, 6), generator=gen)
    worst = numeric_grad_check(model, x, y)
    bad = {k: v for k, v in worst.items() if v >= 1e-4}
    assert not bad, bad


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        model = init_params(TINY, 4).eval()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, Intent.CLOSE)
        back, intent = load_checkpoint(path)
        assert intent is Intent.CLOSE and back.config == TINY
        x = torch.randint(0, 11, (2, 6, 8))
        assert torch.equal(model(x), back(x))

    def test_rejects_unknown_version(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, init_params(TINY, 0), Intent.OPEN)
        raw = bytearray(path.read_bytes())
        raw[8:12] = struct.pack("<I", 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_payload_is_float32_le(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, init_params(TINY, 0), Intent.OPEN)
        from chatemg.container import read_container
        header, tensors = read_container(path)
        assert header["config"]["vocab_size"] == 11 and header["intent"] == "open"
        assert all(t.dtype == np.dtype("<f4") for t in tensors.values())


def test_as_tokens():
    assert as_tokens(np.zeros((5, 8), np.int16)).shape == (1, 5, 8)
