import json

import numpy as np
import pytest

from moadnet import data
from moadnet.data import DataError, SyntheticSpec


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestFeatureFile:
    def test_round_trip_with_coords(self, tmp_path):
        rng = np.random.default_rng(0)
        emb = rng.standard_normal((7, 5)).astype(np.float32)
        xy = rng.integers(0, 10_000, (7, 2))
        data.write_features(tmp_path / "a.moadfeat", emb, xy)
        got, coords = data.read_features(tmp_path / "a.moadfeat")
        np.testing.assert_array_equal(got, emb.astype(np.float64))
        np.testing.assert_array_equal(coords, xy)

    def test_round_trip_without_coords(self, tmp_path):
        emb = np.arange(6.0).reshape(3, 2)
        data.write_features(tmp_path / "b.moadfeat", emb)
        got, coords = data.read_features(tmp_path / "b.moadfeat")
        np.testing.assert_array_equal(got, emb)
        assert coords is None

    def test_header_layout(self, tmp_path):
        data.write_features(tmp_path / "c.moadfeat", np.ones((2, 3)), np.zeros((2, 2)))
        raw = (tmp_path / "c.moadfeat").read_bytes()
        assert raw[:8] == b"MOADFEAT"
        assert int.from_bytes(raw[8:12], "little") == 1
        assert int.from_bytes(raw[12:16], "little") == 2
        assert int.from_bytes(raw[16:20], "little") == 3
        assert raw[20] == 1
        assert len(raw) == 21 + 2 * 3 * 4 + 2 * 8

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "d.moadfeat"
        data.write_features(p, np.ones((2, 2)))
        p.write_bytes(b"NOTMOADF" + p.read_bytes()[8:])
        with pytest.raises(DataError, match="magic"):
            data.read_features(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "e.moadfeat"
        data.write_features(p, np.ones((4, 2)))
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(DataError):
            data.read_features(p)


class TestTables:
    def test_omic_round_trip_exact(self, tmp_path):
        m = np.random.default_rng(1).standard_normal((4, 3)) * 1e-7
        data.write_omic_table(tmp_path / "o.csv", ["a", "b", "c", "d"], m)
        ids, got = data.read_omic_table(tmp_path / "o.csv")
        assert ids == ["a", "b", "c", "d"]
        np.testing.assert_array_equal(got, m)

    def test_ragged_row(self, tmp_path):
        (tmp_path / "o.csv").write_text("sample_id,f0,f1\na,1,2\nb,3\n")
        with pytest.raises(DataError, match="columns"):
            data.read_omic_table(tmp_path / "o.csv")

    def test_survival_labels_round_trip(self, tmp_path):
        recs = [{"slide_id": "s1", "time_months": 12.5, "censor": 1}, {"slide_id": "s2", "time_months": 3.0, "censor": 0}]
        data.write_labels(tmp_path / "l.csv", "survival", recs)
        got = data.read_labels(tmp_path / "l.csv")
        assert got == {"s1": {"time_months": 12.5, "censor": 1}, "s2": {"time_months": 3.0, "censor": 0}}


class TestManifestValidation:
    def _copy(self, src, dst):
        for rel, raw in _tree_bytes(src).items():
            (dst / rel).parent.mkdir(parents=True, exist_ok=True)
            (dst / rel).write_bytes(raw)
        return dst

    def _edit(self, root, fn):
        m = json.loads((root / "manifest.json").read_text())
        fn(m)
        (root / "manifest.json").write_text(json.dumps(m))

    def test_loads(self, tiny):
        assert len(tiny) == 24 and tiny.n_classes == 4 and tiny.n_features == 64

    def test_duplicate_slide(self, tiny_root, tmp_path):
        root = self._copy(tiny_root, tmp_path)
        self._edit(root, lambda m: m["entries"].append(m["entries"][0]))
        with pytest.raises(DataError, match="duplicate"):
            data.load_dataset(root)

    def test_missing_feature_file(self, tiny_root, tmp_path):
        root = self._copy(tiny_root, tmp_path)
        (root / "features" / "S0000.moadfeat").unlink()
        with pytest.raises(DataError, match="not found"):
            data.load_dataset(root)

    def test_unknown_omic_id(self, tiny_root, tmp_path):
        root = self._copy(tiny_root, tmp_path)
        self._edit(root, lambda m: m["entries"][0].update(omic_id="nobody"))
        with pytest.raises(DataError, match="omic id"):
            data.load_dataset(root)

    def test_label_outside_class_names(self, tiny_root, tmp_path):
        root = self._copy(tiny_root, tmp_path)
        self._edit(root, lambda m: m["entries"][0].update(label="class9"))
        with pytest.raises(DataError, match="class_names"):
            data.load_dataset(root)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            data.load_dataset(tmp_path)


class TestSynthetic:
    def test_class_mapping(self):
        assert data.class_groups(3, 2) == (1, 1)
        assert [data.class_groups(y) for y in range(4)] == [(0, 0), (1, 0), (0, 1), (1, 1)]

    def test_byte_identical(self, tmp_path):
        spec = SyntheticSpec(n_slides=8, n_min=5, n_max=9, seed=3)
        a = _tree_bytes(data.generate_synthetic(tmp_path / "a", spec))
        b = _tree_bytes(data.generate_synthetic(tmp_path / "b", spec))
        assert a == b

    def test_seed_changes_data(self, tmp_path):
        a = _tree_bytes(data.generate_synthetic(tmp_path / "a", SyntheticSpec(n_slides=8, n_min=5, n_max=9, seed=3)))
        b = _tree_bytes(data.generate_synthetic(tmp_path / "b", SyntheticSpec(n_slides=8, n_min=5, n_max=9, seed=4)))
        assert a["omic.csv"] != b["omic.csv"]

    def test_unfactorable_classes(self, tmp_path):
        with pytest.raises(ValueError, match="factored"):
            data.generate_synthetic(tmp_path, SyntheticSpec(n_classes=5))

    def test_planted_structure(self, tiny):
        signal = tiny.signal_patches()
        gen = json.loads((tiny.root / "generator.json").read_text())
        for s, y in zip(tiny.slides, gen["classes"]):
            bag = s.bag()
            assert s.label == y
            assert 8 <= len(bag) <= 20
            idx = signal[s.slide_id]
            assert len(idx) == max(1, round(0.1 * len(bag)))
            assert bag.coords.shape == (len(bag), 2)

    def test_balanced_classes(self, tiny):
        np.testing.assert_array_equal(np.bincount(tiny.labels()), [6, 6, 6, 6])

    def test_omic_separates_only_omic_group(self, tmp_path):
        ds = data.load_dataset(data.generate_synthetic(tmp_path, SyntheticSpec(n_slides=400, n_min=5, n_max=6)))
        y = ds.labels()
        means = np.stack([ds.omic[y == c].mean(axis=0) for c in range(4)])
        # classes sharing an omic group have the same omic prototype
        assert np.abs(means[0] - means[2]).mean() < 0.25
        assert np.abs(means[0] - means[1]).mean() > 0.5

    def test_survival_variant(self, tiny_survival_root):
        ds = data.load_dataset(tiny_survival_root)
        assert ds.task == "survival"
        assert np.all(ds.times() > 0)
        assert set(np.unique(ds.censors())) <= {0, 1}
        assert 0 < ds.censors().mean() < 0.7
