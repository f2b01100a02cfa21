import csv
import json

import numpy as np
import pytest

from chatemg import classifiers as clf
from chatemg.datasim import simulate_corpus
from chatemg.errors import InvalidArgument, LeakageError
from chatemg.eval import HarnessConfig, IntentModelSet, Scenario, ScenarioReport, make_scenario, run_scenario
from chatemg.eval.scenarios import subject_scenarios
from chatemg.signal_core import Intent


class StubGen:
    """Generative stand-in that repeats the last prompt frame."""

    def __init__(self):
        from chatemg.model import ModelConfig
        self.config = ModelConfig(n_embed=8, n_blocks_per_branch=1, n_heads=1)
        self.training = False

    def _one_hot(self, last):
        import torch
        out = torch.full((last.shape[0], 1001), -1e4)
        out[torch.arange(last.shape[0]), last] = 1e4
        return out

    def prefill(self, tokens):
        return self._one_hot(tokens[:, -1, 0]), None

    def step(self, frame, cache):
        return self._one_hot(frame[:, 0])

    def eval(self):
        return self

    def train(self, mode=True):
        return self


@pytest.fixture(scope="module")
def corpus():
    return simulate_corpus(n_subjects=3, n_sessions=2, conditions=2, recordings_per_condition=1)


def test_make_scenarios(corpus):
    sc = make_scenario("subject", corpus, "S2")
    assert all(not rid.startswith("S2_") for rid in sc.train_recordings)
    assert len(sc.inferral_recordings) == 3
    assert all(rid.startswith("S2_") for rid in sc.inferral_recordings)
    sess = make_scenario("session", corpus)
    assert all("_s1_" in rid for rid in sess.train_recordings)
    cond = make_scenario("condition", corpus, "on_table/on")
    assert all("on_table_motoroff" in rid for rid in cond.train_recordings)
    assert [s.holdout for s in subject_scenarios(corpus)] == ["S1", "S2", "S3"]
    with pytest.raises(InvalidArgument):
        make_scenario("subject", corpus)


def test_leakage_detected(corpus):
    with pytest.raises(LeakageError):
        Scenario("subject", "S1", ("a", "b"), ("b",))
    sc = make_scenario("subject", corpus, "S1")
    models = IntentModelSet({i: StubGen() for i in Intent}, train_recordings=sc.inferral_recordings[:1])
    with pytest.raises(LeakageError):
        run_scenario(sc, corpus, models, [clf.ClfConfig("lda")], methods=("chatemg",))


def test_run_rows_and_outputs(corpus, tmp_path):
    sc = make_scenario("subject", corpus, "S3")
    models = IntentModelSet({i: StubGen() for i in Intent}, train_recordings=sc.train_recordings)
    cfg = HarnessConfig(n_per_intent=5, prompt_len=40, window_len=64, seeds=(0, 1), offline_stride=200)
    kinds = [clf.ClfConfig("lda"), clf.ClfConfig("rf", rf=clf.RFParams(n_trees=5))]
    rep = run_scenario(sc, corpus, models, kinds, config=cfg)
    assert len(rep.rows) == 3 * 2 * 3 * 2       # recordings x classifiers x methods x seeds
    assert all(0.0 <= r["accuracy"] <= 1.0 for r in rep.rows)
    rep.write(tmp_path / "acc.csv")
    rows = list(csv.DictReader(open(tmp_path / "acc.csv")))
    assert len(rows) == len(rep.rows)
    summary = json.loads((tmp_path / "acc.summary.json").read_text())["summary"]
    assert set(summary["classifiers"]) == {"lda", "rf"}
    assert "chatemg>self" in summary["classifiers"]["lda"]["p_values"]


def test_summary_aggregation():
    rows = []
    for rec, accs in (("r1", (0.5, 0.7)), ("r2", (0.9, 0.9))):
        for seed, a in enumerate(accs):
            rows.append(dict(scenario="subject", classifier="lda", method="self", subject="S1",
                             recording=rec, seed=seed, accuracy=a))
            rows.append(dict(scenario="subject", classifier="lda", method="chatemg", subject="S1",
                             recording=rec, seed=seed, accuracy=a + 0.05))
    rep = ScenarioReport(rows)
    np.testing.assert_allclose(rep.accuracies("lda", "self"), [0.6, 0.9])
    s = rep.summary()["classifiers"]["lda"]
    assert s["methods"]["self"]["mean"] == pytest.approx(0.75)
    assert s["methods"]["self"]["std"] == pytest.approx(0.15)
    assert s["methods"]["chatemg"]["per_subject"]["S1"]["n"] == 2


def test_unknown_method(corpus):
    sc = make_scenario("subject", corpus, "S1")
    with pytest.raises(InvalidArgument):
        run_scenario(sc, corpus, None, [clf.ClfConfig("lda")], methods=("magic",))
