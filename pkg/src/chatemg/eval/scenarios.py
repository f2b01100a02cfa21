"""Adaptation scenarios, baselines and accuracy reports."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .. import classifiers as clf
from ..dataset import build_classifier_set
from ..datasim import CONDITIONS
from ..errors import InvalidArgument, LeakageError
from ..generator import SamplingConfig, batch_generate
from ..signal_core import EmgWindow, Intent, Recording, segment_windows, split_support_query
from .stats import ALPHA, wilcoxon_rank_sum_one_sided

log = logging.getLogger(__name__)

METHODS = ("self", "fine_tune", "chatemg")
SCENARIO_KINDS = ("condition", "session", "subject")
CSV_FIELDS = ("scenario", "classifier", "method", "subject", "recording", "seed", "accuracy")


@dataclass
class IntentModelSet:
    """One generative model per intent plus the recordings they were trained on."""

    models: Dict[Intent, object]
    train_recordings: Tuple[str, ...] = ()

    def __post_init__(self):
        self.models = {Intent.parse(k): v for k, v in self.models.items()}
        missing = [i.label for i in Intent if i not in self.models]
        if missing:
            raise InvalidArgument(f"model set lacks intents {missing}")
        configs = {m.config for m in self.models.values() if hasattr(m, "config")}
        if len(configs) > 1:
            raise InvalidArgument("all intent models must share one config")

    def __getitem__(self, intent):
        return self.models[Intent.parse(intent)]


@dataclass(frozen=True)
class Scenario:
    kind: str
    holdout: str
    train_recordings: Tuple[str, ...]
    inferral_recordings: Tuple[str, ...]

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise InvalidArgument(f"scenario kind must be one of {SCENARIO_KINDS}")
        overlap = set(self.train_recordings) & set(self.inferral_recordings)
        if overlap:
            raise LeakageError(f"inferral recordings used for training: {sorted(overlap)}")


def _protocol_order(r: Recording):
    m = r.meta
    return (m.subject_id, m.session_index, CONDITIONS.index(m.condition), m.recording_index)


def _pick_inferral(recs: Iterable[Recording], per_subject: int) -> Tuple[str, ...]:
    by_subject: Dict[str, List[Recording]] = {}
    for r in sorted(recs, key=_protocol_order):
        by_subject.setdefault(r.meta.subject_id, []).append(r)
    return tuple(r.recording_id for rs in by_subject.values() for r in rs[:per_subject])


def make_scenario(kind: str, corpus: Sequence[Recording], holdout: Optional[str] = None,
                  per_subject: int = 3) -> Scenario:
    """Build one scenario from a corpus.

    condition: train on (on_table, motor off), infer on ``holdout`` condition
               (default off_table, motor off), given as "arm/motor".
    session:   train on session 1, infer on session ``holdout`` (default 2).
    subject:   train on every other subject, infer on subject ``holdout``.
    """
    if kind == "condition":
        train_cond = ("on_table", "off")
        target = tuple((holdout or "off_table/off").split("/"))
        train = [r for r in corpus if r.meta.condition == train_cond]
        infer = [r for r in corpus if r.meta.condition == target]
        holdout = "/".join(target)
    elif kind == "session":
        target = int(holdout or 2)
        train = [r for r in corpus if r.meta.session_index != target]
        infer = [r for r in corpus if r.meta.session_index == target]
        holdout = str(target)
    elif kind == "subject":
        if holdout is None:
            raise InvalidArgument("subject scenario needs a holdout subject id")
        train = [r for r in corpus if r.meta.subject_id != holdout]
        infer = [r for r in corpus if r.meta.subject_id == holdout]
    else:
        raise InvalidArgument(f"unknown scenario kind {kind!r}")
    if not infer:
        raise InvalidArgument(f"no inferral recordings for {kind} holdout {holdout!r}")
    return Scenario(kind, str(holdout), tuple(sorted(r.recording_id for r in train)),
                    _pick_inferral(infer, per_subject))


def subject_scenarios(corpus: Sequence[Recording], per_subject: int = 3) -> List[Scenario]:
    subjects = sorted({r.meta.subject_id for r in corpus})
    return [make_scenario("subject", corpus, s, per_subject) for s in subjects]


@dataclass
class HarnessConfig:
    n_per_intent: int = 1000
    prompt_len: int = 150
    window_len: int = 256
    support_stride: int = 10
    query_stride: int = 10
    offline_stride: int = 50
    seeds: Tuple[int, ...] = (0,)
    sampling: SamplingConfig = SamplingConfig()


@dataclass
class ScenarioReport:
    rows: List[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def accuracies(self, classifier: str, method: str, subject: Optional[str] = None) -> np.ndarray:
        """Per-recording accuracies (averaged over seeds), in recording order."""
        acc: Dict[Tuple[str, str], List[float]] = {}
        for r in self.rows:
            if r["classifier"] == classifier and r["method"] == method and (subject is None or r["subject"] == subject):
                acc.setdefault((r["subject"], r["recording"]), []).append(r["accuracy"])
        return np.array([np.mean(v) for _, v in sorted(acc.items())])

    def summary(self) -> dict:
        """Means, stds and one-sided p-values (chatemg vs each baseline) per classifier."""
        out: dict = {"alpha": ALPHA, "classifiers": {}}
        kinds = sorted({r["classifier"] for r in self.rows})
        methods = [m for m in METHODS if any(r["method"] == m for r in self.rows)]
        subjects = sorted({r["subject"] for r in self.rows})
        for kind in kinds:
            entry: dict = {"methods": {}, "p_values": {}}
            for m in methods:
                per_subject = {}
                for s in subjects:
                    a = self.accuracies(kind, m, s)
                    if a.size:
                        per_subject[s] = {"mean": float(np.mean(a)), "std": float(np.std(a)), "n": int(a.size)}
                allacc = self.accuracies(kind, m)
                entry["methods"][m] = {"mean": float(np.mean(allacc)), "std": float(np.std(allacc)),
                                       "per_subject": per_subject}
            if "chatemg" in methods:
                for base in methods:
                    if base == "chatemg":
                        continue
                    p = wilcoxon_rank_sum_one_sided(self.accuracies(kind, "chatemg"), self.accuracies(kind, base))
                    entry["p_values"][f"chatemg>{base}"] = {"p": p, "significant": bool(p < ALPHA)}
            out["classifiers"][kind] = entry
        return out

    def write(self, csv_path: Union[str, Path], summary_path: Union[str, Path, None] = None) -> None:
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow(dict(r, accuracy=repr(float(r["accuracy"]))))
        summary_path = Path(summary_path) if summary_path else csv_path.with_suffix(".summary.json")
        doc = {"summary": self.summary(), "config": self.config}
        summary_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def merge_reports(reports: Sequence[ScenarioReport]) -> ScenarioReport:
    rows = [r for rep in reports for r in rep.rows]
    config = reports[0].config if reports else {}
    return ScenarioReport(rows, config)


def _windows_xy(windows: Sequence[EmgWindow]) -> Tuple[np.ndarray, np.ndarray]:
    return build_classifier_set(windows)


def _synthetic_xy(batches) -> Tuple[np.ndarray, np.ndarray]:
    wins = [EmgWindow(w, intent) for intent, b in sorted(batches.items()) for w in b.windows]
    return build_classifier_set(wins)


def run_scenario(scenario: Scenario, corpus: Sequence[Recording], model_set: Optional[IntentModelSet],
                 clf_configs: Sequence[clf.ClfConfig], methods: Sequence[str] = METHODS,
                 config: HarnessConfig = HarnessConfig()) -> ScenarioReport:
    """Evaluate each method x classifier on every inferral recording of ``scenario``.

    self:      support set only
    fine_tune: classifier pre-trained on the scenario's training recordings, adapted to support
    chatemg:   support plus ``n_per_intent`` synthetic windows per intent prompted from support
    """
    for m in methods:
        if m not in METHODS:
            raise InvalidArgument(f"unknown method {m!r}")
    infer_ids = set(scenario.inferral_recordings)
    if infer_ids & set(scenario.train_recordings):
        raise LeakageError("scenario trains on its own inferral recordings")
    if "chatemg" in methods:
        if model_set is None:
            raise InvalidArgument("chatemg method needs a model set")
        leaked = infer_ids & set(model_set.train_recordings)
        if leaked:
            raise LeakageError(f"generative models were trained on inferral recordings {sorted(leaked)}")
    by_id = {r.recording_id: r for r in corpus}
    T = config.window_len

    offline = None
    if "fine_tune" in methods:
        wins = [w for rid in scenario.train_recordings
                for w in segment_windows(by_id[rid], T, config.offline_stride)]
        offline = _windows_xy(wins)
        if len(offline[0]) == 0:
            raise InvalidArgument("no offline windows for fine_tune")

    report = ScenarioReport(config={"scenario": asdict(scenario), "harness": _harness_dict(config),
                                    "classifiers": [asdict(c) for c in clf_configs], "methods": list(methods)})
    for seed in config.seeds:
        pretrained: Dict[str, clf.FittedClassifier] = {}
        for rid in scenario.inferral_recordings:
            rec = by_id[rid]
            support, query = split_support_query(rec)
            sX, sy = _windows_xy(segment_windows(support, T, config.support_stride))
            qX, qy = _windows_xy(segment_windows(query, T, config.query_stride))
            synth = None
            if "chatemg" in methods:
                sampling = SamplingConfig(config.sampling.temperature, config.sampling.top_k,
                                          _seed(seed, rid))
                batches = batch_generate(model_set, support, config.n_per_intent, sampling,
                                         config.prompt_len, T)
                synth = _synthetic_xy(batches)
            for base_cfg in clf_configs:
                cfg = base_cfg.with_seed(_seed(seed, base_cfg.kind))
                for method in methods:
                    if method == "self":
                        model = clf.fit(cfg, sX, sy)
                    elif method == "fine_tune":
                        if cfg.kind == "transformer":
                            if cfg.kind not in pretrained:
                                pretrained[cfg.kind] = clf.fit(cfg, *offline)
                            model = clf.fine_tune(pretrained[cfg.kind], *offline, sX, sy)
                        else:
                            model = clf.fine_tune(cfg, *offline, sX, sy)
                    else:
                        model = clf.fit(cfg, np.concatenate([sX, synth[0]]), np.concatenate([sy, synth[1]]))
                    acc = clf.accuracy(model, qX, qy)
                    log.info("%s/%s %s %s %s seed=%d acc=%.4f", scenario.kind, scenario.holdout,
                             cfg.kind, method, rid, seed, acc)
                    report.rows.append({"scenario": scenario.kind, "classifier": cfg.kind, "method": method,
                                        "subject": rec.meta.subject_id, "recording": rid, "seed": seed,
                                        "accuracy": acc})
    return report


def _seed(seed: int, tag: str) -> int:
    digest = np.frombuffer(tag.encode("utf-8"), dtype=np.uint8).astype(np.int64)
    return int(np.random.SeedSequence([int(seed), *digest.tolist()]).generate_state(1)[0])


def _harness_dict(cfg: HarnessConfig) -> dict:
    d = asdict(cfg)
    d["seeds"] = list(cfg.seeds)
    return d
