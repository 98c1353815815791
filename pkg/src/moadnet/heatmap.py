"""Export per-patch attention weights as CSV and an optional PGM image."""
from __future__ import annotations

import io
import logging
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import DataError, Dataset, load_dataset
from .training import TrainedModel, load_checkpoint

log = logging.getLogger(__name__)


def slide_attention(trained: TrainedModel, data: Dataset, slide_id: str) -> np.ndarray:
    """Eval-mode attention weights for one slide, exactly as the model computes them."""
    slide = data.slides[data.index_of(slide_id)]
    with T.no_grad():
        out = trained.model.forward(trained.prep(data.omic_row(slide)), slide.bag(), training=False)
    if out.attention is None:
        raise ValueError(f"{trained.config.fusion} model has no attention stage")
    return out.attention.data.copy()


def grid_positions(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map tile origins to integer grid cells using the smallest coordinate step."""
    cells = []
    for axis in range(2):
        v = coords[:, axis]
        uniq = np.unique(v)
        step = int(np.min(np.diff(uniq))) if len(uniq) > 1 else 1
        cells.append((v - uniq[0]) // step)
    return cells[0], cells[1]


def write_pgm(path, attention: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Binary P5 grayscale map; pixel = round(255 * a / max a) at each tile cell."""
    col, row = grid_positions(coords)
    img = np.zeros((int(row.max()) + 1, int(col.max()) + 1), dtype=np.uint8)
    img[row, col] = np.round(255.0 * attention / attention.max()).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + img.tobytes())
    return img


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def export_heatmap(run_dir, slide_id: str, out_path, pgm: bool = False, data_dir=None) -> np.ndarray:
    """Write ``patch_index,x,y,attention`` rows for ``slide_id``.

    The PGM (``out_path`` with suffix ``.pgm``) needs tile coordinates; without
    them only the CSV is written.
    """
    trained, meta = load_checkpoint(run_dir)
    root = data_dir or meta.get("data_dir")
    if root is None:
        raise DataError("run has no recorded data directory; pass data_dir")
    data = load_dataset(root)
    att = slide_attention(trained, data, slide_id)
    coords = data.slides[data.index_of(slide_id)].bag().coords

    buf = io.StringIO()
    buf.write("patch_index,x,y,attention\n")
    for j, a in enumerate(att):
        x, y = ("", "") if coords is None else (int(coords[j, 0]), int(coords[j, 1]))
        buf.write(f"{j},{x},{y},{float(a)!r}\n")
    out = Path(out_path)
    out.write_text(buf.getvalue())
    if pgm:
        if coords is None:
            log.warning("slide %s has no tile coordinates; wrote CSV only", slide_id)
        else:
            write_pgm(out.with_suffix(".pgm"), att, coords)
    return att
