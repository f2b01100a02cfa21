"""Intent classifiers over normalized (T, 8) windows: LDA, random forest, attention + MLP.

LDA and RF see each window flattened to a T*8 vector. The transformer reads
the sequence, mean-pools over time after its attention block, then applies
an MLP. All inputs are already normalized to [-1, 1].
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.discriminant_analysis import LinearDiscriminantAnalysis
from sklearn.ensemble import RandomForestClassifier

from .container import read_container, write_container
from .dataset import build_classifier_set
from .errors import CheckpointError, DegenerateTrainingSet, InvalidArgument
from .signal_core import EmgWindow, Intent

log = logging.getLogger(__name__)

KINDS = ("lda", "rf", "transformer")
CLASSIFIER_KIND = "chatemg-classifier"
N_CLASSES = len(Intent)


@dataclass(frozen=True)
class RFParams:
    n_trees: int = 100
    max_depth: Optional[int] = None
    rng_seed: int = 0


@dataclass(frozen=True)
class LDAParams:
    shrinkage: float = 0.1


@dataclass(frozen=True)
class TransformerParams:
    n_heads: int = 4
    n_attention_blocks: int = 1
    mlp_layers: int = 3
    embed_dim: int = 64
    epochs: int = 20
    fine_tune_epochs: int = 10
    lr: float = 1e-3
    fine_tune_lr: float = 5e-4
    batch_size: int = 64
    rng_seed: int = 0
    window_len: int = 256


@dataclass(frozen=True)
class ClfConfig:
    kind: str = "rf"
    rf: RFParams = RFParams()
    lda: LDAParams = LDAParams()
    transformer: TransformerParams = TransformerParams()
    class_weight: Optional[str] = None     # None or "balanced"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"classifier kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.lda.shrinkage <= 1.0:
            raise InvalidArgument("LDA shrinkage must be in [0, 1]")
        if self.rf.n_trees < 1 or self.transformer.embed_dim < 1:
            raise InvalidArgument("classifier sizes must be positive")

    def with_seed(self, seed: int) -> "ClfConfig":
        return replace(self, rf=replace(self.rf, rng_seed=seed),
                       transformer=replace(self.transformer, rng_seed=seed))


@dataclass
class FittedClassifier:
    kind: str
    config: ClfConfig
    state: Any
    classes: np.ndarray = field(default_factory=lambda: np.arange(N_CLASSES))

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


# ------------------------------------------------------------------ transformer

class AttentionClassifier(nn.Module):
    def __init__(self, p: TransformerParams, n_channels: int = 8):
        super().__init__()
        E = p.embed_dim
        self.inp = nn.Linear(n_channels, E)
        self.pos = nn.Parameter(torch.zeros(p.window_len, E))
        self.blocks = nn.ModuleList(
            nn.TransformerEncoderLayer(E, p.n_heads, dim_feedforward=2 * E, dropout=0.0,
                                       batch_first=True, norm_first=True)
            for _ in range(p.n_attention_blocks))
        layers: list[nn.Module] = []
        for i in range(p.mlp_layers):
            last = i == p.mlp_layers - 1
            layers.append(nn.Linear(E, N_CLASSES if last else E))
            if not last:
                layers.append(nn.ReLU())
        self.mlp = nn.Sequential(*layers)

    def forward(self, x):
        h = self.inp(x) + self.pos[: x.shape[1]]
        for block in self.blocks:
            h = block(h)
        return self.mlp(h.mean(dim=1))


def _class_weights(y: np.ndarray, mode: Optional[str]) -> Optional[np.ndarray]:
    if mode is None:
        return None
    if mode != "balanced":
        raise InvalidArgument(f"unknown class_weight {mode!r}")
    counts = np.bincount(y, minlength=N_CLASSES).astype(np.float64)
    w = np.where(counts > 0, len(y) / (N_CLASSES * np.maximum(counts, 1)), 0.0)
    return w


def _train_torch(net: AttentionClassifier, X: np.ndarray, y: np.ndarray, epochs: int, lr: float,
                 batch_size: int, seed: int, weights: Optional[np.ndarray]) -> None:
    if epochs <= 0 or len(X) == 0:
        return
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    dtype = next(net.parameters()).dtype
    Xt = torch.as_tensor(X, dtype=dtype)
    yt = torch.as_tensor(y, dtype=torch.long)
    wt = None if weights is None else torch.as_tensor(weights, dtype=dtype)
    net.train()
    for _ in range(epochs):
        order = rng.permutation(len(X))
        for b in range(0, len(order), batch_size):
            idx = torch.from_numpy(np.sort(order[b:b + batch_size]))
            out = net(Xt[idx])
            loss = F.cross_entropy(out, yt[idx], weight=wt)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    net.eval()


def _new_transformer(p: TransformerParams, n_channels: int) -> AttentionClassifier:
    torch.manual_seed(p.rng_seed)
    return AttentionClassifier(p, n_channels)


# ------------------------------------------------------------------ public API

def _as_xy(X, y=None) -> Tuple[np.ndarray, np.ndarray]:
    if len(X) and isinstance(X[0], EmgWindow):
        Xn, yw = build_classifier_set(X)
        return Xn, yw if y is None else np.asarray([int(Intent.parse(v)) for v in y])
    Xn = np.asarray(X, dtype=np.float64)
    yy = np.zeros(0, np.int64) if y is None else np.asarray([int(Intent.parse(v)) for v in y], dtype=np.int64)
    return Xn, yy


def flatten(X: np.ndarray) -> np.ndarray:
    """(N, T, 8) -> (N, T*8); row-major, time-major."""
    X = np.asarray(X)
    return X.reshape(len(X), -1)


def fit(config: ClfConfig, X, y=None) -> FittedClassifier:
    """Fit on normalized windows ``X`` (N, T, 8) with labels ``y``, or on a list of EmgWindow."""
    X, y = _as_xy(X, y)
    if len(X) == 0 or len(X) != len(y):
        raise InvalidArgument("fit needs a non-empty X with one label per window")
    present = np.unique(y)
    if config.kind == "lda":
        if present.size < 2:
            raise DegenerateTrainingSet("LDA needs at least two classes")
        lda = LinearDiscriminantAnalysis(solver="lsqr", shrinkage=config.lda.shrinkage)
        if config.class_weight == "balanced":
            lda.set_params(priors=np.full(present.size, 1.0 / present.size))
        lda.fit(flatten(X), y)
        state = {"coef": lda.coef_, "intercept": lda.intercept_, "classes": lda.classes_}
    elif config.kind == "rf":
        p = config.rf
        rf = RandomForestClassifier(n_estimators=p.n_trees, max_depth=p.max_depth, random_state=p.rng_seed,
                                    class_weight=config.class_weight, n_jobs=1)
        rf.fit(flatten(X), y)
        state = rf
    else:
        p = config.transformer
        if X.shape[1] > p.window_len:
            raise InvalidArgument(f"window length {X.shape[1]} exceeds {p.window_len}")
        net = _new_transformer(p, X.shape[2])
        _train_torch(net, X, y, p.epochs, p.lr, p.batch_size, p.rng_seed,
                     _class_weights(y, config.class_weight))
        state = net
    return FittedClassifier(config.kind, config, state)


def fine_tune(pretrained: Union[FittedClassifier, ClfConfig], offline_X, offline_y, support_X,
              support_y) -> FittedClassifier:
    """Adapt to a support set.

    Transformer: continue gradient training from the pretrained weights on the
    support set only (pretraining on the offline set first if given a config).
    LDA / RF: refit on the union of offline and support data.
    """
    config = pretrained.config if isinstance(pretrained, FittedClassifier) else pretrained
    oX, oy = _as_xy(offline_X, offline_y)
    sX, sy = _as_xy(support_X, support_y)
    if len(oX) == 0:
        raise InvalidArgument("fine_tune needs a non-empty offline set")
    if config.kind != "transformer":
        if len(sX) == 0:
            return fit(config, oX, oy)
        return fit(config, np.concatenate([oX, sX]), np.concatenate([oy, sy]))
    base = pretrained if isinstance(pretrained, FittedClassifier) else fit(config, oX, oy)
    net = copy.deepcopy(base.state)
    p = config.transformer
    _train_torch(net, sX, sy, p.fine_tune_epochs, p.fine_tune_lr, p.batch_size, p.rng_seed + 1,
                 _class_weights(sy, config.class_weight) if len(sy) else None)
    return FittedClassifier("transformer", config, net)


@torch.no_grad()
def _predict_transformer(net: AttentionClassifier, X: np.ndarray, batch: int = 256) -> np.ndarray:
    net.eval()
    dtype = next(net.parameters()).dtype
    out = [net(torch.as_tensor(X[b:b + batch], dtype=dtype)).argmax(-1).numpy() for b in range(0, len(X), batch)]
    return np.concatenate(out)


def _predict_trees(trees: list, X: np.ndarray, n_classes: int) -> np.ndarray:
    Xf = flatten(X).astype(np.float32)
    proba = np.zeros((len(Xf), n_classes))
    rows = np.arange(len(Xf))
    for t in trees:
        node = np.zeros(len(Xf), dtype=np.int64)
        while True:
            left = t["children_left"][node]
            leaf = left < 0
            if leaf.all():
                break
            go_left = Xf[rows, np.maximum(t["feature"][node], 0)] <= t["threshold"][node]
            nxt = np.where(go_left, left, t["children_right"][node])
            node = np.where(leaf, node, nxt)
        proba += t["value"][node]
    return proba / len(trees)


def predict(clf: FittedClassifier, X) -> np.ndarray:
    """Integer intent labels (Intent values), one per window, order preserved."""
    X, _ = _as_xy(X)
    if len(X) == 0:
        return np.zeros(0, dtype=np.int64)
    state = clf.state
    if clf.kind == "lda":
        scores = flatten(X) @ state["coef"].T + state["intercept"]
        if scores.ndim == 1 or scores.shape[1] == 1:
            scores = np.column_stack([-scores.ravel(), scores.ravel()])
        return np.asarray(state["classes"])[scores.argmax(axis=1)].astype(np.int64)
    if clf.kind == "rf":
        if isinstance(state, RandomForestClassifier):
            return state.predict(flatten(X)).astype(np.int64)
        proba = _predict_trees(state["trees"], X, len(state["classes"]))
        return np.asarray(state["classes"])[proba.argmax(axis=1)].astype(np.int64)
    return _predict_transformer(state, X).astype(np.int64)


def accuracy(clf: FittedClassifier, X, y) -> float:
    X, y = _as_xy(X, y)
    if len(y) == 0 or len(X) != len(y):
        raise InvalidArgument("accuracy needs equally sized, non-empty X and y")
    return float(np.mean(predict(clf, X) == y))


# ------------------------------------------------------------------ persistence

def _rf_to_tensors(rf: RandomForestClassifier) -> dict:
    tensors = {"classes": rf.classes_.astype(np.int64)}
    for i, est in enumerate(rf.estimators_):
        t = est.tree_
        value = t.value[:, 0, :].astype(np.float64)
        value = value / np.maximum(value.sum(axis=1, keepdims=True), 1e-300)
        tensors[f"tree{i}.children_left"] = t.children_left.astype(np.int64)
        tensors[f"tree{i}.children_right"] = t.children_right.astype(np.int64)
        tensors[f"tree{i}.feature"] = t.feature.astype(np.int64)
        tensors[f"tree{i}.threshold"] = t.threshold.astype(np.float64)
        tensors[f"tree{i}.value"] = value
    return tensors


def save_classifier(path: Union[str, Path], clf: FittedClassifier) -> None:
    header = {"kind": CLASSIFIER_KIND, "classifier": clf.kind, "config": _config_dict(clf.config)}
    if clf.kind == "lda":
        write_container(path, header, {k: np.asarray(v) for k, v in clf.state.items()}, dtype="<f8")
    elif clf.kind == "rf":
        state = clf.state
        tensors = _rf_to_tensors(state) if isinstance(state, RandomForestClassifier) else _tree_dict_tensors(state)
        header["n_trees"] = sum(1 for k in tensors if k.endswith(".feature"))
        write_container(path, header, tensors, dtype="<f8")
    else:
        write_container(path, header, {k: v.detach().numpy() for k, v in clf.state.state_dict().items()},
                        dtype="<f4")


def _tree_dict_tensors(state: dict) -> dict:
    tensors = {"classes": np.asarray(state["classes"], dtype=np.int64)}
    for i, t in enumerate(state["trees"]):
        for key, arr in t.items():
            tensors[f"tree{i}.{key}"] = arr
    return tensors


def _config_dict(cfg: ClfConfig) -> dict:
    return asdict(cfg)


def _config_from_dict(d: dict) -> ClfConfig:
    return ClfConfig(kind=d["kind"], rf=RFParams(**d["rf"]), lda=LDAParams(**d["lda"]),
                     transformer=TransformerParams(**d["transformer"]), class_weight=d.get("class_weight"))


def load_classifier(path: Union[str, Path]) -> FittedClassifier:
    header, tensors = read_container(path)
    if header.get("kind") != CLASSIFIER_KIND:
        raise CheckpointError(f"{path}: not a classifier container")
    kind = header["classifier"]
    config = _config_from_dict(header["config"])
    if kind == "lda":
        return FittedClassifier(kind, config, tensors)
    if kind == "rf":
        trees = []
        for i in range(header["n_trees"]):
            trees.append({key: tensors[f"tree{i}.{key}"] for key in
                          ("children_left", "children_right", "feature", "threshold", "value")})
        return FittedClassifier(kind, config, {"trees": trees, "classes": tensors["classes"]})
    if kind == "transformer":
        net = AttentionClassifier(config.transformer)
        net.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
        net.eval()
        return FittedClassifier(kind, config, net)
    raise CheckpointError(f"{path}: unknown classifier kind {kind!r}")
