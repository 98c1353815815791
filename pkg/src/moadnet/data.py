"""On-disk dataset formats, dataset loading and the planted-signal generator.

Layout of a dataset directory::

    manifest.json          task, class names, entries
    omic.csv               sample id, then one float column per feature
    labels.csv             slide_id,label  |  slide_id,time_months,censor
    features/<id>.moadfeat binary patch-embedding file per slide
    signal_patches.json    (synthetic only) ground-truth signal patch indices
"""
from __future__ import annotations

import csv
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .encoders import PatchBag

log = logging.getLogger(__name__)

MAGIC = b"MOADFEAT"
VERSION = 1
_HEADER = struct.Struct("<8sIIIB")


class DataError(ValueError):
    """Malformed or inconsistent dataset."""


# ---------------------------------------------------------------- feature files


def write_features(path, embeddings, coords=None) -> None:
    """Write an ``N x D`` embedding matrix (float32) with optional tile origins."""
    emb = np.ascontiguousarray(embeddings, dtype="<f4")
    if emb.ndim != 2:
        raise DataError(f"embeddings must be 2-D, got shape {emb.shape}")
    n, d = emb.shape
    parts = [_HEADER.pack(MAGIC, VERSION, n, d, 0 if coords is None else 1), emb.tobytes()]
    if coords is not None:
        xy = np.ascontiguousarray(coords, dtype="<i4")
        if xy.shape != (n, 2):
            raise DataError(f"coords must have shape ({n}, 2), got {xy.shape}")
        parts.append(xy.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_features(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Return ``(embeddings as float64, coords or None)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, n, d, flag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    body = n * d * 4
    expected = _HEADER.size + body + (n * 8 if flag else 0)
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for N={n}, D={d}, got {len(raw)}")
    emb = np.frombuffer(raw, dtype="<f4", count=n * d, offset=_HEADER.size).reshape(n, d).astype(np.float64)
    coords = None
    if flag:
        coords = np.frombuffer(raw, dtype="<i4", count=2 * n, offset=_HEADER.size + body).reshape(n, 2).astype(np.int64)
    if not np.all(np.isfinite(emb)):
        raise DataError(f"{path}: non-finite embedding values")
    return emb, coords


# ---------------------------------------------------------------- CSV tables


def write_omic_table(path, ids, matrix) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id"] + [f"f{j}" for j in range(matrix.shape[1])])
    for sid, row in zip(ids, matrix):
        w.writerow([sid] + [repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue())


def read_omic_table(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty omic table")
    width = len(rows[0]) - 1
    ids, values = [], []
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != width + 1:
            raise DataError(f"{path}:{k}: expected {width + 1} columns, got {len(row)}")
        ids.append(row[0])
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise DataError(f"{path}:{k}: {exc}") from None
    matrix = np.array(values, dtype=np.float64).reshape(len(ids), width)
    if not np.all(np.isfinite(matrix)):
        raise DataError(f"{path}: non-finite omic values")
    return ids, matrix


def write_labels(path, task: str, records) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if task == "subtype":
        w.writerow(["slide_id", "label"])
        for r in records:
            w.writerow([r["slide_id"], r["label"]])
    else:
        w.writerow(["slide_id", "time_months", "censor"])
        for r in records:
            w.writerow([r["slide_id"], repr(float(r["time_months"])), int(r["censor"])])
    Path(path).write_text(buf.getvalue())


def read_labels(path) -> dict[str, dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = {}
        for row in reader:
            rec: dict = {}
            if "label" in row:
                rec["label"] = row["label"]
            else:
                rec["time_months"] = float(row["time_months"])
                rec["censor"] = int(row["censor"])
            out[row["slide_id"]] = rec
    return out


# ---------------------------------------------------------------- dataset


@dataclass
class Slide:
    slide_id: str
    omic_id: str
    features_path: Path
    label: int | None = None
    time: float | None = None
    censor: int | None = None
    _bag: PatchBag | None = field(default=None, repr=False)

    def bag(self) -> PatchBag:
        if self._bag is None:
            emb, coords = read_features(self.features_path)
            self._bag = PatchBag(self.slide_id, emb, coords)
        return self._bag


@dataclass
class Dataset:
    root: Path
    task: str
    slides: list[Slide]
    omic_ids: list[str]
    omic: np.ndarray
    class_names: list[str] | None = None

    def __len__(self) -> int:
        return len(self.slides)

    @property
    def n_features(self) -> int:
        return self.omic.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names) if self.class_names else 0

    def omic_row(self, slide: Slide) -> np.ndarray:
        return self.omic[self._omic_index[slide.omic_id]]

    def __post_init__(self):
        self._omic_index = {sid: k for k, sid in enumerate(self.omic_ids)}

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.slides])

    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.slides], dtype=np.float64)

    def censors(self) -> np.ndarray:
        return np.array([s.censor for s in self.slides], dtype=np.int64)

    def index_of(self, slide_id: str) -> int:
        for k, s in enumerate(self.slides):
            if s.slide_id == slide_id:
                return k
        raise DataError(f"slide {slide_id!r} not in dataset {self.root}")

    def signal_patches(self) -> dict[str, list[int]] | None:
        p = self.root / "signal_patches.json"
        return json.loads(p.read_text()) if p.exists() else None


def load_dataset(root) -> Dataset:
    """Load and validate a dataset directory (see module docstring)."""
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise DataError(f"{root}: no manifest.json")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{mpath}: {exc}") from None
    task = manifest.get("task")
    if task not in ("subtype", "survival"):
        raise DataError(f"{mpath}: task must be 'subtype' or 'survival', got {task!r}")
    omic_ids, omic = read_omic_table(root / manifest.get("omic_table", "omic.csv"))
    if len(set(omic_ids)) != len(omic_ids):
        raise DataError("duplicate sample ids in omic table")
    label_file = root / manifest.get("labels", "labels.csv")
    file_labels = read_labels(label_file) if label_file.exists() else {}
    class_names = manifest.get("class_names")

    slides, seen = [], set()
    for entry in manifest.get("entries", []):
        sid = entry["slide_id"]
        if sid in seen:
            raise DataError(f"duplicate slide id {sid!r}")
        seen.add(sid)
        fpath = root / entry["features_path"]
        if not fpath.exists():
            raise DataError(f"{sid}: feature file {fpath} not found")
        if entry["omic_id"] not in omic_ids:
            raise DataError(f"{sid}: omic id {entry['omic_id']!r} missing from omic table")
        rec = {**file_labels.get(sid, {}), **{k: entry[k] for k in ("label", "time_months", "censor") if k in entry}}
        slide = Slide(sid, entry["omic_id"], fpath)
        if task == "subtype":
            if "label" not in rec:
                raise DataError(f"{sid}: no class label")
            label = rec["label"]
            if class_names is None:
                raise DataError("subtype manifest needs class_names")
            if str(label) not in class_names:
                raise DataError(f"{sid}: label {label!r} not in class_names")
            slide.label = class_names.index(str(label))
        else:
            if "time_months" not in rec or "censor" not in rec:
                raise DataError(f"{sid}: survival labels need time_months and censor")
            slide.time = float(rec["time_months"])
            slide.censor = int(rec["censor"])
            if slide.time <= 0 or slide.censor not in (0, 1):
                raise DataError(f"{sid}: invalid survival label {rec}")
        slides.append(slide)
    if not slides:
        raise DataError(f"{mpath}: no entries")
    return Dataset(root, task, slides, omic_ids, omic, class_names)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- synthetic


@dataclass
class SyntheticSpec:
    """Planted-signal benchmark parameters.

    Class ``y`` pairs omic group ``y % omic_groups`` with patch group
    ``y // omic_groups``; each modality alone resolves only its own group.
    """

    n_classes: int = 4
    n_slides: int = 200
    n_features: int = 64
    d_e: int = 32
    n_min: int = 50
    n_max: int = 200
    signal_fraction: float = 0.1
    noise: float = 1.0
    prototype_scale: float = 1.0
    shared_signal: float = 1.0
    omic_groups: int = 2
    seed: int = 0
    task: str = "subtype"
    censor_rate: float = 0.3
    tile_size: int = 256

    @property
    def patch_groups(self) -> int:
        return self.n_classes // self.omic_groups


def class_groups(y: int, omic_groups: int = 2) -> tuple[int, int]:
    """``(omic group, patch group)`` of class ``y``."""
    return y % omic_groups, y // omic_groups


def generate_synthetic(out_dir, spec: SyntheticSpec | None = None) -> Path:
    """Write a planted-signal dataset; identical seeds give identical bytes."""
    spec = spec or SyntheticSpec()
    if spec.omic_groups < 1 or spec.n_classes % spec.omic_groups:
        raise ValueError(
            f"{spec.n_classes} classes cannot be factored into {spec.omic_groups} omic groups"
        )
    if not 0 < spec.signal_fraction <= 1 or not 1 <= spec.n_min <= spec.n_max:
        raise ValueError("signal_fraction must be in (0, 1] and 1 <= n_min <= n_max")
    if spec.task not in ("subtype", "survival"):
        raise ValueError(f"unknown task {spec.task!r}")
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    rng_proto, rng_labels, rng_slides = T.split_rng(T.make_rng(spec.seed), 3)

    omic_proto = spec.prototype_scale * rng_proto.choice([-1.0, 1.0], (spec.omic_groups, spec.n_features))
    patch_proto = spec.prototype_scale * rng_proto.choice([-1.0, 1.0], (spec.patch_groups, spec.d_e))
    # component common to every signal patch, so "where is the signal" has one answer for all groups
    patch_proto = patch_proto + spec.shared_signal * spec.prototype_scale * rng_proto.choice([-1.0, 1.0], spec.d_e)
    # balanced classes, shuffled
    labels = rng_labels.permutation(np.arange(spec.n_slides) % spec.n_classes)

    omic = np.empty((spec.n_slides, spec.n_features))
    entries, label_records, signal = [], [], {}
    rates = 0.02 * 2.0 ** np.arange(spec.n_classes)
    for k, y in enumerate(labels):
        y = int(y)
        g_o, g_p = class_groups(y, spec.omic_groups)
        sid, oid = f"S{k:04d}", f"P{k:04d}"
        omic[k] = omic_proto[g_o] + spec.noise * rng_slides.standard_normal(spec.n_features)
        n = int(rng_slides.integers(spec.n_min, spec.n_max + 1))
        emb = spec.noise * rng_slides.standard_normal((n, spec.d_e))
        n_sig = max(1, int(round(spec.signal_fraction * n)))
        start = int(rng_slides.integers(0, n - n_sig + 1))
        emb[start : start + n_sig] += patch_proto[g_p]
        side = int(np.ceil(np.sqrt(n)))
        j = np.arange(n)
        coords = np.stack([(j % side) * spec.tile_size, (j // side) * spec.tile_size], axis=1)
        write_features(out / "features" / f"{sid}.moadfeat", emb, coords)
        signal[sid] = list(range(start, start + n_sig))
        entry = {"slide_id": sid, "features_path": f"features/{sid}.moadfeat", "omic_id": oid}
        rec = {"slide_id": sid}
        if spec.task == "subtype":
            rec["label"] = f"class{y}"
        else:
            event = rng_slides.exponential(1.0 / rates[y])
            censored = rng_slides.random() < spec.censor_rate
            t = rng_slides.uniform(0.0, event) if censored else event
            rec["time_months"] = max(float(t), 1e-3)
            rec["censor"] = int(censored)
        entry.update({k: v for k, v in rec.items() if k != "slide_id"})
        entries.append(entry)
        label_records.append(rec)

    write_omic_table(out / "omic.csv", [e["omic_id"] for e in entries], omic)
    write_labels(out / "labels.csv", spec.task, label_records)
    manifest = {
        "task": spec.task,
        "omic_table": "omic.csv",
        "labels": "labels.csv",
        "entries": entries,
    }
    if spec.task == "subtype":
        manifest["class_names"] = [f"class{c}" for c in range(spec.n_classes)]
    _dump_json(out / "manifest.json", manifest)
    _dump_json(out / "signal_patches.json", signal)
    _dump_json(out / "generator.json", {**spec.__dict__, "classes": [int(v) for v in labels]})
    return out
