"""Command-line entry points: sim, train-gen, generate, eval, plot.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import typing
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import classifiers as clf
from .dataset import build_generative_set, split_recordings
from .datasim import default_profiles, simulate_corpus
from .errors import ChatEMGError, CheckpointError, InvalidArgument, InvalidCorpus, TrainingDiverged
from .eval.plots import signal_rows, tsne_rows, window_samples, write_rows
from .eval.scenarios import (
    METHODS,
    HarnessConfig,
    IntentModelSet,
    make_scenario,
    merge_reports,
    run_scenario,
)
from .generator import SamplingConfig, batch_generate, write_synthetic
from .model import ModelConfig, checkpoint_header, load_checkpoint, save_checkpoint
from .signal_core import (
    Intent,
    read_corpus,
    read_frames_csv,
    read_recording,
    single_intent_starts,
    split_support_query,
    write_recording,
)
from .trainer import TrainConfig, train_all_intents, train_intent_model

log = logging.getLogger("chatemg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CONFIG_NAME = "run_config.txt"


@dataclasses.dataclass(frozen=True)
class SimSettings:
    subjects: int = 5
    sessions: int = 2
    conditions: int = 4
    recordings_per_condition: int = 2


@dataclasses.dataclass(frozen=True)
class EvalSettings:
    n_per_intent: int = 1000
    prompt_len: int = 150
    window_len: int = 256
    support_stride: int = 10
    query_stride: int = 10
    offline_stride: int = 50
    seeds: Tuple[int, ...] = (0,)
    per_subject: int = 3


@dataclasses.dataclass(frozen=True)
class SampleSettings:
    temperature: float = 1.0
    top_k: Optional[int] = None


# section name -> dataclass holding its defaults; clf.* nests one level further
SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "sample": SampleSettings,
    "eval": EvalSettings,
    "sim": SimSettings,
    "clf.rf": clf.RFParams,
    "clf.lda": clf.LDAParams,
    "clf.transformer": clf.TransformerParams,
}
EXTRA_KEYS = {"clf.class_weight": (None, Optional[str])}
# seeds are driven by --seed, not by config keys
SEED_FIELDS = {"train.rng_seed", "clf.rf.rng_seed", "clf.transformer.rng_seed"}


def _parser_for(tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        inner = _parser_for(next(a for a in args if a is not type(None)))
        return lambda s: None if s.strip().lower() in ("", "none", "null") else inner(s)
    if origin in (tuple, Tuple):
        inner = _parser_for(args[0])
        return lambda s: tuple(inner(v) for v in s.split(",") if v.strip())
    if tp is bool:
        return lambda s: {"true": True, "1": True, "false": False, "0": False}[s.strip().lower()]
    if tp in (int, float, str):
        return lambda s: tp(s.strip())
    raise TypeError(f"unsupported config type {tp}")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


class RunConfig:
    """Flat ``section.key=value`` settings with typed parsing; unknown keys are rejected."""

    def __init__(self):
        self.values: Dict[str, object] = {}
        self.parsers: Dict[str, typing.Callable] = {}
        for section, cls in SECTIONS.items():
            hints = typing.get_type_hints(cls)
            for f in dataclasses.fields(cls):
                key = f"{section}.{f.name}"
                if key in SEED_FIELDS:
                    continue
                self.values[key] = f.default
                self.parsers[key] = _parser_for(hints[f.name])
        for key, (default, tp) in EXTRA_KEYS.items():
            self.values[key] = default
            self.parsers[key] = _parser_for(tp)

    def set(self, key: str, raw: str, source: str = "flag") -> None:
        if key not in self.values:
            raise InvalidArgument(f"{source}: unknown config key {key!r}")
        try:
            self.values[key] = self.parsers[key](raw)
        except (ValueError, KeyError) as err:
            raise InvalidArgument(f"{source}: bad value {raw!r} for {key}") from err

    def load(self, path: str) -> None:
        from .signal_core import read_key_values
        from .errors import MalformedRecording
        try:
            kv = read_key_values(path)
        except MalformedRecording as err:
            raise InvalidArgument(str(err)) from err
        for key, raw in kv.items():
            self.set(key, raw, source=str(path))

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items()
                if k.startswith(prefix) and "." not in k[len(prefix):]}

    def build(self, name: str, **extra):
        return SECTIONS[name](**self.section(name), **extra)

    def to_text(self, command: str) -> str:
        lines = [f"# resolved configuration for chatemg {command}"]
        lines += [f"{k}={_format(v)}" for k, v in sorted(self.values.items())]
        return "\n".join(lines) + "\n"


def _resolve(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg.load(args.config)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise InvalidArgument(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        cfg.set(key.strip(), raw.strip())
    return cfg


def _write_config(cfg: RunConfig, command: str, path: Path, extra: Optional[dict] = None) -> None:
    text = cfg.to_text(command)
    if extra:
        text += "".join(f"{k}={_format(v)}\n" for k, v in sorted(extra.items()))
    for line in text.splitlines()[1:]:
        log.info("config %s", line)
    path.write_text(text, encoding="utf-8")


def _train_config(cfg: RunConfig, seed: int, jobs: int) -> TrainConfig:
    return cfg.build("train", rng_seed=seed) if jobs is None else \
        dataclasses.replace(cfg.build("train", rng_seed=seed), threads=jobs)


def _clf_configs(cfg: RunConfig, kind: str, seed: int) -> List[clf.ClfConfig]:
    kinds = clf.KINDS if kind == "all" else (kind,)
    rf = cfg.build("clf.rf", rng_seed=seed)
    lda = cfg.build("clf.lda")
    tr = cfg.build("clf.transformer", rng_seed=seed)
    return [clf.ClfConfig(k, rf, lda, tr, cfg.values["clf.class_weight"]) for k in kinds]


def _harness(cfg: RunConfig, seeds: Tuple[int, ...], sampling: SamplingConfig) -> HarnessConfig:
    e = cfg.section("eval")
    return HarnessConfig(e["n_per_intent"], e["prompt_len"], e["window_len"], e["support_stride"],
                         e["query_stride"], e["offline_stride"], seeds, sampling)


# ------------------------------------------------------------------ commands

def cmd_sim(args) -> int:
    cfg = _resolve(args)
    if args.subjects is not None:
        cfg.set("sim.subjects", str(args.subjects))
    if args.sessions is not None:
        cfg.set("sim.sessions", str(args.sessions))
    s = cfg.build("sim")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    profiles = default_profiles(s.subjects, args.seed)
    corpus = simulate_corpus(s.subjects, s.sessions, s.conditions, s.recordings_per_condition,
                             args.seed, profiles)
    for rec in corpus:
        write_recording(out / f"{rec.recording_id}.csv", rec)
    prof_dir = out / "profiles"
    prof_dir.mkdir(exist_ok=True)
    for p in profiles:
        (prof_dir / f"{p.subject_id}.txt").write_text(p.to_text(), encoding="utf-8")
    _write_config(cfg, "sim", out / CONFIG_NAME, {"seed": args.seed})
    subjects = sorted({r.meta.subject_id for r in corpus})
    print(f"wrote {len(corpus)} recordings to {out}: subjects={','.join(subjects)} "
          f"sessions={s.sessions} conditions={s.conditions} per_condition={s.recordings_per_condition}")
    return EXIT_OK


def _load_corpus(path: str, exclude: Sequence[str] = ()) -> list:
    d = Path(path)
    if not d.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {d}")
    corpus = [r for r in read_corpus(d) if r.meta.subject_id not in set(exclude)]
    if not corpus:
        raise InvalidCorpus("any", f"no recordings found in {d}")
    return corpus


def cmd_train_gen(args) -> int:
    cfg = _resolve(args)
    mc = cfg.build("model")
    tc = _train_config(cfg, args.seed, args.jobs)
    intent = Intent.parse(args.intent)
    corpus = _load_corpus(args.data, args.exclude_subject or ())
    T = mc.context_len
    available = [i.label for i in Intent
                 if any(np.any(r.labels[single_intent_starts(r.labels, T + 1)] == i) for r in corpus)]
    if intent.label not in available:
        raise InvalidCorpus(intent.label, f"no {T + 1}-frame windows for intent '{intent.label}' in "
                                          f"{args.data}; available intents: {', '.join(available) or 'none'}")
    split = split_recordings(corpus, tc.val_fraction, tc.rng_seed)
    by_id = {r.recording_id: r for r in corpus}
    tr = build_generative_set([by_id[i] for i in split.train_recordings], intent, T, tc.stride)
    va = build_generative_set([by_id[i] for i in split.val_recordings], intent, T, tc.stride)
    if not tr or not va:
        raise InvalidCorpus(intent.label, f"intent '{intent.label}' missing from the train or validation split")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines: List[str] = []
    model, report = train_intent_model(mc, tc, tr, va, intent, progress=lines.append)
    save_checkpoint(out, model, intent, extra={
        "best_val_loss": report.best_val_loss, "best_step": report.best_step,
        "train_recordings": sorted(r.recording_id for r in corpus),
        "val_recordings": list(split.val_recordings)})
    Path(str(out) + ".log").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_config(cfg, "train-gen", Path(str(out) + ".config.txt"),
                  {"seed": args.seed, "intent": intent.label})
    print(f"{intent.label}: best val loss {report.best_val_loss:.4f} at step {report.best_step}; wrote {out}")
    return EXIT_OK


def _load_model_set(directory: Path) -> IntentModelSet:
    models, used = {}, set()
    for intent in Intent:
        path = directory / f"{intent.label}.ckpt"
        if not path.exists():
            raise CheckpointError(f"missing checkpoint {path} (need open.ckpt, relax.ckpt, close.ckpt)")
        model, got = load_checkpoint(path)
        if got is not intent:
            raise CheckpointError(f"{path} holds a model for '{got.label}', not '{intent.label}'")
        models[intent] = model
        used |= set(checkpoint_header(path).get("extra", {}).get("train_recordings", []))
    return IntentModelSet(models, tuple(sorted(used)))


def _sampling(cfg: RunConfig, seed: int) -> SamplingConfig:
    s = cfg.section("sample")
    return SamplingConfig(s["temperature"], s["top_k"], seed)


def cmd_generate(args) -> int:
    cfg = _resolve(args)
    if args.n is not None:
        cfg.set("eval.n_per_intent", str(args.n))
    model_set = _load_model_set(Path(args.models))
    rec = read_recording(args.support)
    if rec.recording_id in model_set.train_recordings:
        log.warning("support recording %s was part of the generative training data", rec.recording_id)
    support = split_support_query(rec)[0] if args.first_motion else rec.slice(0, len(rec))
    e = cfg.section("eval")
    batches = batch_generate(model_set, support, e["n_per_intent"], _sampling(cfg, args.seed),
                             e["prompt_len"], e["window_len"])
    out = Path(args.out)
    paths = write_synthetic(batches, out)
    _write_config(cfg, "generate", out / CONFIG_NAME, {"seed": args.seed, "first_motion": args.first_motion})
    total = sum(len(b) for b in batches.values())
    print(f"wrote {total} windows ({', '.join(f'{i.label}={len(b)}' for i, b in batches.items())}) "
          f"to {len(paths)} files in {out}")
    return EXIT_OK


def _holdouts(kind: str, corpus: list, holdout: Optional[str]) -> List[Optional[str]]:
    if holdout is not None:
        return [holdout]
    if kind == "subject":
        return sorted({r.meta.subject_id for r in corpus})
    return [None]


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise InvalidArgument(f"--methods must be a comma list from {METHODS}, got {args.methods!r}")
    if args.seeds is not None:
        cfg.set("eval.seeds", args.seeds)
    elif args.seed is not None:
        cfg.set("eval.seeds", str(args.seed))
    seed = args.seed or 0
    if args.jobs:
        torch.set_num_threads(args.jobs)
    corpus = _load_corpus(args.corpus)
    per_subject = cfg.values["eval.per_subject"]
    scenarios = [make_scenario(args.scenario, corpus, h, per_subject)
                 for h in _holdouts(args.scenario, corpus, args.holdout)]
    harness = _harness(cfg, tuple(cfg.values["eval.seeds"]), _sampling(cfg, seed))
    clf_cfgs = _clf_configs(cfg, args.classifier, seed)
    reports = []
    by_id = {r.recording_id: r for r in corpus}
    for sc in scenarios:
        model_set = None
        if "chatemg" in methods:
            if args.models:
                root = Path(args.models)
                sub = root / sc.holdout.replace("/", "_")
                model_set = _load_model_set(sub if sub.is_dir() else root)
            else:
                train = [by_id[i] for i in sc.train_recordings]
                models, _ = train_all_intents(cfg.build("model"), _train_config(cfg, seed, args.jobs), train)
                model_set = IntentModelSet(models, sc.train_recordings)
        reports.append(run_scenario(sc, corpus, model_set, clf_cfgs, methods, harness))
    report = merge_reports(reports)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.config = {"scenarios": [r.config.get("scenario") for r in reports],
                     **{k: v for k, v in reports[0].config.items() if k != "scenario"}}
    report.write(out)
    _write_config(cfg, "eval", out.with_suffix(".config.txt"),
                  {"seed": seed, "scenario": args.scenario, "classifier": args.classifier,
                   "methods": ",".join(methods)})
    summary = report.summary()
    for kind, entry in summary["classifiers"].items():
        means = " ".join(f"{m}={d['mean']:.3f}" for m, d in entry["methods"].items())
        ps = " ".join(f"{k}:p={v['p']:.3g}" for k, v in entry["p_values"].items())
        print(f"{kind}: {means} {ps}".rstrip())
    return EXIT_OK


def cmd_plot(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    L = args.window_len or cfg.values["eval.window_len"]
    if args.kind == "signals":
        if len(args.inputs) != 2:
            raise InvalidArgument("signals needs --in REAL_FILE SYNTHETIC_FILE")
        real, _ = read_frames_csv(args.inputs[0])
        synth, _ = read_frames_csv(args.inputs[1])
        r0, s0 = args.real_start, args.synthetic_index * L
        if r0 + L > len(real) or s0 + L > len(synth):
            raise InvalidArgument("requested window runs past the end of an input file")
        header, rows = signal_rows(real[r0:r0 + L], synth[s0:s0 + L])
    else:
        samples = []
        for path in args.inputs:
            frames, labels = read_frames_csv(path)
            samples += [(Path(path).stem, intent, w) for _, intent, w in window_samples(frames, labels, L)]
        header, rows = tsne_rows(samples, args.perplexity, args.iters, args.seed)
    write_rows(out, header, rows)
    _write_config(cfg, "plot", out.with_suffix(".config.txt"), {"seed": args.seed, "kind": args.kind})
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _common(p: argparse.ArgumentParser, seed_default: Optional[int] = 0) -> None:
    p.add_argument("--seed", type=int, default=seed_default, help="master random seed (default %(default)s)")
    p.add_argument("--config", help="key=value file with namespaced keys (model.*, train.*, sample.*, "
                                    "clf.*, eval.*, sim.*)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key; repeatable, wins over --config")
    p.add_argument("--jobs", type=int, default=None, help="cap on worker threads")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chatemg", description="Synthetic EMG augmentation pipeline.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim", help="simulate a protocol corpus")
    p.add_argument("--out", required=True, help="output directory for recordings and manifests")
    p.add_argument("--subjects", type=int, help="number of subjects (sim.subjects)")
    p.add_argument("--sessions", type=int, help="sessions per subject (sim.sessions)")
    _common(p)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("train-gen", help="train the generative model for one intent")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--intent", required=True, choices=[i.label for i in Intent])
    p.add_argument("--out", required=True, help="checkpoint path; .log and .config.txt are written beside it")
    p.add_argument("--exclude-subject", action="append", metavar="ID",
                   help="leave this subject out of training; repeatable")
    _common(p)
    p.set_defaults(func=cmd_train_gen)

    p = sub.add_parser("generate", help="synthesize windows from a support recording")
    p.add_argument("--models", required=True, help="directory with open.ckpt, relax.ckpt, close.ckpt")
    p.add_argument("--support", required=True, help="support recording file (with manifest)")
    p.add_argument("--n", type=int, help="windows per intent (eval.n_per_intent)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--first-motion", action="store_true",
                   help="draw prompts only from the lead-in and first motion of the recording")
    _common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="run an adaptation scenario and write an accuracy report")
    p.add_argument("--scenario", required=True, choices=["condition", "session", "subject"])
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--classifier", default="all", choices=[*clf.KINDS, "all"])
    p.add_argument("--methods", default=",".join(METHODS), help="comma list from self,fine_tune,chatemg")
    p.add_argument("--out", required=True, help="report CSV; summary JSON is written beside it")
    p.add_argument("--holdout", help="subject id, session index or arm/motor condition to adapt to")
    p.add_argument("--models", help="checkpoint directory (per-holdout subdirectories allowed); "
                                    "without it the generative models are trained per holdout")
    p.add_argument("--seeds", help="comma list of evaluation seeds (eval.seeds)")
    _common(p, seed_default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="export real-vs-synthetic point data as CSV")
    p.add_argument("--kind", required=True, choices=["signals", "tsne"])
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="input recording-format files")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--window-len", type=int, help="window length (default eval.window_len)")
    p.add_argument("--real-start", type=int, default=0, help="signals: first row of the real window")
    p.add_argument("--synthetic-index", type=int, default=0, help="signals: index of the synthetic window")
    p.add_argument("--perplexity", type=float, default=30.0, help="tsne: perplexity")
    p.add_argument("--iters", type=int, default=1000, help="tsne: iterations")
    _common(p)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs is not None and args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except TrainingDiverged as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidArgument as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ChatEMGError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
