"""
Attention heatmap export
========================

Train a dual-fusion model on a small synthetic set, then write the attention
of one slide as CSV and as a grayscale PGM laid out on the tile grid.
"""
import csv
import tempfile
from pathlib import Path

import numpy as np

from moadnet.benchmark import BENCHMARK_CONFIG
from moadnet.data import SyntheticSpec, generate_synthetic, load_dataset
from moadnet.heatmap import export_heatmap, read_pgm
from moadnet.training import save_checkpoint, train

work = Path(tempfile.mkdtemp())
root = generate_synthetic(work / "data", SyntheticSpec(n_slides=60, seed=3))
data = load_dataset(root)
run = save_checkpoint(train(BENCHMARK_CONFIG.replace(epochs=15), data), work / "run", root)

slide = data.slides[0]
att = export_heatmap(run, slide.slide_id, work / "heat.csv", pgm=True)
with open(work / "heat.csv", newline="") as fh:
    rows = list(csv.DictReader(fh))
print(f"{len(rows)} patches, attention sums to {sum(float(r['attention']) for r in rows):.12f}")

###############################################################################
# Planted patches should carry most of the attention mass.
signal = data.signal_patches()[slide.slide_id]
print(f"planted patches: {len(signal)}/{len(att)}, attention mass on them: {att[signal].sum():.3f}")

###############################################################################
# Coarse text rendering of the PGM (brighter = more attention).
img = read_pgm(work / "heat.pgm")
shades = " .:-=+*#%@"
for row in img:
    print("".join(shades[min(int(v) * len(shades) // 256, len(shades) - 1)] for v in row))
print("PGM written to", work / "heat.pgm", "max pixel", img.max(), "at argmax patch", int(np.argmax(att)))
