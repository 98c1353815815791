"""Training, evaluation, cross-validation and checkpoints."""
from __future__ import annotations

import json
import logging
import warnings
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import survival
from . import tensor as T
from .data import Dataset
from .features import select_cpg_features
from .metrics import MetricsReport, classification_scores
from .model import ConfigError, MoadNet, RunConfig
from .tensor import Tensor

log = logging.getLogger(__name__)

CHECKPOINT_PARAMS = "params.npz"
CHECKPOINT_META = "run.json"


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss."""


def cross_entropy(logits, y, weights=None) -> Tensor:
    """Mean (optionally class-weighted) cross-entropy of ``B x C`` logits."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    if logits.ndim == 1:
        logits = T.reshape(logits, (1, logits.shape[0]))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    picked = T.take(T.log_softmax(logits), (np.arange(len(y)), y))
    if weights is None:
        return -T.mean(picked)
    # divide by batch size, not sum of weights: with one slide per step the latter cancels the weight
    w = np.asarray(weights, dtype=np.float64)[y]
    return -T.sum(picked * Tensor(w)) * (1.0 / len(w))


class Adam:
    """Adaptive-moment updates with L2 weight decay folded into the gradient."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, grad_clip: float | None = None):
        self.params = params
        self.lr, self.b1, self.b2 = lr, betas[0], betas[1]
        self.eps, self.weight_decay, self.grad_clip = eps, weight_decay, grad_clip
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}
        if self.grad_clip is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.grad_clip:
                grads = {k: g * (self.grad_clip / norm) for k, g in grads.items()}
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in sorted(self.params):
            p = self.params[k]
            g = grads[k] + self.weight_decay * p.data
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class Preprocessor:
    """Training-fold omic normalization (and optional feature selection)."""

    mean: np.ndarray
    std: np.ndarray
    selected: np.ndarray | None = None

    @classmethod
    def fit(cls, omic: np.ndarray, select: int | None = None) -> "Preprocessor":
        selected = select_cpg_features(omic, select) if select else None
        x = omic[:, selected] if selected is not None else omic
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std > 0, std, 1.0), selected)

    def __call__(self, row: np.ndarray) -> np.ndarray:
        x = row[self.selected] if self.selected is not None else row
        return (x - self.mean) / self.std


@dataclass
class TrainedModel:
    model: MoadNet
    prep: Preprocessor
    bins: survival.BinEdges | None = None
    class_names: list[str] | None = None
    loss_history: list[float] = field(default_factory=list)

    @property
    def config(self) -> RunConfig:
        return self.model.config


def _targets(ds: Dataset, idx, bins):
    if ds.task == "subtype":
        return {"y": np.array([ds.slides[i].label for i in idx])}
    times = np.array([ds.slides[i].time for i in idx])
    return {
        "y": bins.assign(times),
        "c": np.array([ds.slides[i].censor for i in idx]),
    }


def _check_finite(loss: Tensor, slide_id: str) -> None:
    if np.isfinite(loss.data).all():
        return
    bad = T.first_nonfinite(loss)
    what = "loss" if bad is None else (bad.name or f"output of {bad._op} (node {bad._id}, shape {bad.shape})")
    raise NumericalError(f"non-finite loss on slide {slide_id}; first non-finite tensor: {what}")


def train(config: RunConfig, data: Dataset, train_idx=None) -> TrainedModel:
    """Fit one model on ``train_idx`` (default: every slide)."""
    cfg = config
    if cfg.task != data.task:
        raise ConfigError(f"config task {cfg.task!r} does not match dataset task {data.task!r}")
    if data.n_features != cfg.n_features:
        raise ConfigError(f"config n_features={cfg.n_features} but omic table has {data.n_features}")
    idx = np.arange(len(data)) if train_idx is None else np.asarray(train_idx)
    rng_init, rng_order, rng_drop = T.split_rng(T.make_rng(cfg.seed), 3)

    prep = Preprocessor.fit(data.omic[[data._omic_index[data.slides[i].omic_id] for i in idx]], cfg.select_features)
    bins = None
    if cfg.task == "subtype":
        n_out = data.n_classes
    else:
        bins = survival.discretize_bins(
            [data.slides[i].time for i in idx], [data.slides[i].censor for i in idx], cfg.n_bins
        )
        n_out = cfg.n_bins
    model = MoadNet.build(cfg, n_out, rng_init)
    targets = _targets(data, idx, bins)
    weights = None
    if cfg.task == "subtype" and cfg.class_weights:
        counts = np.bincount(targets["y"], minlength=n_out).astype(np.float64)
        weights = np.where(counts > 0, counts.sum() / np.maximum(counts, 1) / n_out, 0.0)

    omics = {i: prep(data.omic_row(data.slides[i])) for i in idx}
    opt = Adam(model.params, cfg.lr, cfg.betas, weight_decay=cfg.weight_decay, grad_clip=cfg.grad_clip)
    pos = {int(i): k for k, i in enumerate(idx)}
    history = []
    for _ in range(cfg.epochs):
        order = rng_order.permutation(idx)
        epoch_loss = 0.0
        opt.zero_grad()
        for step, i in enumerate(order, start=1):
            slide = data.slides[i]
            out = model.forward(omics[i], slide.bag(), training=True, rng=rng_drop)
            k = pos[int(i)]
            if cfg.task == "subtype":
                loss = cross_entropy(out.logits, targets["y"][k : k + 1], weights)
            else:
                loss = survival.nll_loss(out.logits, targets["y"][k : k + 1], targets["c"][k : k + 1])
            _check_finite(loss, slide.slide_id)
            epoch_loss += loss.item()
            T.backward(loss * (1.0 / cfg.batch_size))
            if step % cfg.batch_size == 0 or step == len(order):
                opt.step()
                opt.zero_grad()
        history.append(epoch_loss / len(order))
    return TrainedModel(model, prep, bins, data.class_names, history)


def predict(trained: TrainedModel, data: Dataset, idx=None, workers: int = 1) -> list[dict]:
    """Eval-mode logits and attention per slide, in ``idx`` order."""
    idx = np.arange(len(data)) if idx is None else np.asarray(idx)

    def one(i):
        slide = data.slides[i]
        with T.no_grad():
            out = trained.model.forward(trained.prep(data.omic_row(slide)), slide.bag(), training=False)
        return {
            "slide_id": slide.slide_id,
            "logits": out.logits.data.copy(),
            "attention": None if out.attention is None else out.attention.data.copy(),
        }

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, idx))
    return [one(i) for i in idx]


def score(trained: TrainedModel, data: Dataset, idx=None, workers: int = 1) -> dict[str, float]:
    idx = np.arange(len(data)) if idx is None else np.asarray(idx)
    preds = predict(trained, data, idx, workers)
    logits = np.stack([p["logits"] for p in preds])
    if data.task == "subtype":
        truth = np.array([data.slides[i].label for i in idx])
        return classification_scores(logits.argmax(axis=1), truth, data.n_classes)
    risks = survival.risk_from_logits(logits)
    times = np.array([data.slides[i].time for i in idx])
    censor = np.array([data.slides[i].censor for i in idx])
    return {"c_index": survival.concordance_index(risks, times, censor)}


def fold_assignment(data: Dataset, folds: int, seed: int) -> np.ndarray:
    """Stratified fold id per slide (by class, or by censorship for survival)."""
    strata = data.labels() if data.task == "subtype" else data.censors()
    rng = T.make_rng(seed)
    assign = np.empty(len(data), dtype=np.int64)
    offset = 0
    for s in np.unique(strata):
        members = np.flatnonzero(strata == s)
        if len(members) < folds:
            warnings.warn(
                f"stratum {s} has {len(members)} members for {folds} folds; stratification is best-effort",
                stacklevel=2,
            )
        members = rng.permutation(members)
        # continue round-robin across strata so small strata do not pile into fold 0
        assign[members] = (np.arange(len(members)) + offset) % folds
        offset += len(members)
    return assign


@dataclass
class CVResult:
    report: MetricsReport
    models: list[TrainedModel]
    folds: np.ndarray


def run_cv(config: RunConfig, data: Dataset, folds: int | None = None, workers: int = 1) -> CVResult:
    folds = folds or config.folds
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    assign = fold_assignment(data, folds, config.seed)
    report = MetricsReport(data.task)
    models = []
    for f in range(folds):
        train_idx = np.flatnonzero(assign != f)
        test_idx = np.flatnonzero(assign == f)
        trained = train(config, data, train_idx)
        report.folds.append(score(trained, data, test_idx, workers))
        models.append(trained)
        log.info("fold %d/%d: %s", f + 1, folds, report.folds[-1])
    return CVResult(report, models, assign)


# ---------------------------------------------------------------- checkpoints

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def _write_npz(path: Path, arrays: dict[str, np.ndarray]) -> None:
    """npz with fixed zip timestamps so identical arrays give identical bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_FIXED_DATE)
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arrays[name]), allow_pickle=False)


def save_checkpoint(trained: TrainedModel, out_dir, data_root=None, metrics: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v for k, v in trained.model.state_dict().items()}
    arrays["prep/mean"] = trained.prep.mean
    arrays["prep/std"] = trained.prep.std
    if trained.prep.selected is not None:
        arrays["prep/selected"] = trained.prep.selected
    _write_npz(out / CHECKPOINT_PARAMS, arrays)
    meta = {
        "config": trained.config.to_dict(),
        "n_out": trained.model.n_out,
        "bin_edges": None if trained.bins is None else list(trained.bins.edges),
        "class_names": trained.class_names,
        "loss_history": trained.loss_history,
        "data_dir": None if data_root is None else str(Path(data_root).resolve()),
        "metrics": metrics,
    }
    (out / CHECKPOINT_META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def load_checkpoint(run_dir) -> tuple[TrainedModel, dict]:
    run = Path(run_dir)
    meta = json.loads((run / CHECKPOINT_META).read_text())
    cfg = RunConfig.from_dict(meta["config"])
    with np.load(run / CHECKPOINT_PARAMS) as npz:
        arrays = {k: npz[k] for k in npz.files}
    model = MoadNet.build(cfg, meta["n_out"], 0)
    model.load_state_dict({k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
    prep = Preprocessor(arrays["prep/mean"], arrays["prep/std"], arrays.get("prep/selected"))
    bins = survival.BinEdges(tuple(meta["bin_edges"])) if meta["bin_edges"] is not None else None
    return TrainedModel(model, prep, bins, meta["class_names"], meta["loss_history"]), meta
