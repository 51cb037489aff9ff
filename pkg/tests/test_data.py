import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image
from scipy.stats import chi2_contingency

from siamshift.data import (
    DATA_ROOT_ENV,
    INST,
    RANDOM_FRACTION,
    SYMB,
    DatasetTable,
    LabeledImage,
    PairSample,
    PairSampler,
    SplitSpec,
    load_image_folder,
    load_omniglot_pretrain,
    load_omniglot_task,
    make_split,
    read_split_manifest,
    sample_pairs,
    split_inst,
    split_random_fraction,
    split_symb,
    synth_glyphs,
    write_split_manifest,
)
from conftest import glyph_png as _glyph_png
from siamshift.errors import DimensionError, DomainError, FormatError


@pytest.fixture(scope="module")
def omni_task(omniglot_root):
    return load_omniglot_task(omniglot_root)


class TestIngest:
    def test_empty_directory(self, tmp_path):
        with pytest.raises(DomainError, match="no classes found"):
            load_image_folder(tmp_path)

    def test_two_by_three(self, tmp_path):
        for c in ("a", "b"):
            (tmp_path / c).mkdir()
            for i in range(3):
                _glyph_png(tmp_path / c / f"{i}.png", i)
        table = load_image_folder(tmp_path)
        assert len(table) == 6
        assert {c: len(v) for c, v in table.by_label.items()} == {0: 3, 1: 3}

    def test_resize_and_normalise(self, tmp_path):
        (tmp_path / "x").mkdir()
        Image.fromarray(np.random.default_rng(0).integers(0, 256, (20, 30, 3), dtype=np.uint8)).save(
            tmp_path / "x" / "rgb.png")
        img = load_image_folder(tmp_path, size=16, channels=3)[0]
        assert img.pixels.shape == (3, 16, 16)
        assert img.pixels.min() >= 0 and img.pixels.max() <= 1

    def test_binary_images_stay_binary(self, tmp_path):
        (tmp_path / "x").mkdir()
        _glyph_png(tmp_path / "x" / "g.png", 3, size=50)
        px = load_image_folder(tmp_path, size=32)[0].pixels
        assert set(np.unique(px)) <= {0.0, 1.0}

    def test_unreadable_file_skipped_and_counted(self, tmp_path):
        (tmp_path / "x").mkdir()
        _glyph_png(tmp_path / "x" / "ok.png", 0)
        (tmp_path / "x" / "bad.png").write_bytes(b"not an image")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            table = load_image_folder(tmp_path)
        assert len(table) == 1 and table.meta["ingest"]["skipped"] == 1
        assert any("bad.png" in str(w.message) for w in caught)

    def test_class_with_only_unreadable_files(self, tmp_path):
        for c in ("a", "b"):
            (tmp_path / c).mkdir()
        _glyph_png(tmp_path / "a" / "ok.png", 0)
        (tmp_path / "b" / "bad.png").write_bytes(b"")
        with pytest.warns(UserWarning), pytest.raises(DomainError, match="no readable images"):
            load_image_folder(tmp_path)

    def test_label_map_selects_and_labels(self, tmp_path):
        for c in ("a", "b", "c"):
            (tmp_path / c).mkdir()
            _glyph_png(tmp_path / c / "0.png", 0)
        table = load_image_folder(tmp_path, {"c": 0, "a": 1})
        assert sorted((i.groups["alphabet"], i.task_label) for i in table) == [("a", 1), ("c", 0)]
        with pytest.raises(DomainError, match="not found"):
            load_image_folder(tmp_path, {"zzz": 0})

    def test_omniglot_counts(self, omni_task):
        counts = {c: len(v) for c, v in omni_task.by_label.items()}
        assert counts == {0: 940, 1: 800}

    def test_omniglot_groups_and_polarity(self, omni_task):
        img = omni_task[0]
        assert img.groups["alphabet"] == "Japanese_(katakana)"
        assert img.groups["character"] == "Japanese_(katakana)/character01"
        assert img.groups["writer"] == "01"
        # white background becomes 0 after inversion
        assert np.mean(img.pixels == 0) > 0.5
        assert len(omni_task.by_group["character"]) == 87

    def test_omniglot_pretrain_excludes_task_alphabets(self, omniglot_root):
        pre = load_omniglot_pretrain(omniglot_root)
        assert sorted(pre.by_group["alphabet"]) == ["Greek", "Kannada"]
        assert len(pre.classes) == 2 and len(pre) == 100

    def test_data_root_env(self, omniglot_root, monkeypatch):
        monkeypatch.setenv(DATA_ROOT_ENV, str(omniglot_root))
        assert len(load_omniglot_task()) == 1740
        monkeypatch.delenv(DATA_ROOT_ENV)
        with pytest.raises(FileNotFoundError, match=DATA_ROOT_ENV):
            load_omniglot_task()


class TestTypes:
    def test_pixels_out_of_range(self):
        with pytest.raises(DomainError):
            LabeledImage("x", np.full((1, 2, 2), 1.5), 0)

    def test_pixels_rank(self):
        with pytest.raises(DimensionError):
            LabeledImage("x", np.zeros((2, 2)), 0)

    def test_pixels_read_only(self):
        img = LabeledImage("x", np.zeros((1, 2, 2)), 1)
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 1

    def test_duplicate_id(self):
        img = LabeledImage("x", np.zeros((1, 2, 2)), 0)
        with pytest.raises(DomainError, match="duplicate"):
            DatasetTable([img, LabeledImage("x", np.zeros((1, 2, 2)), 1)])

    def test_indexes_consistent(self, glyphs):
        for c, positions in glyphs.by_label.items():
            assert all(glyphs[i].task_label == c for i in positions)
        for key, index in glyphs.by_group.items():
            for value, positions in index.items():
                assert all(glyphs[i].groups[key] == value for i in positions)
        assert sum(len(v) for v in glyphs.by_label.values()) == len(glyphs)

    def test_one_class_table_is_not_binary(self, glyphs):
        with pytest.raises(DomainError):
            glyphs.subset(list(glyphs.by_label[0])).require_binary()


def _check_partition(table, train, test):
    tr, te = set(train.ids), set(test.ids)
    assert not tr & te
    assert tr | te == set(table.ids)


class TestSplits:
    def test_inst_omniglot_sizes(self, omni_task):
        train, test = split_inst(omni_task, 0.3, seed=0)
        assert {c: len(v) for c, v in train.by_label.items()} == {0: 280, 1: 240}
        assert {c: len(v) for c, v in test.by_label.items()} == {0: 660, 1: 560}
        _check_partition(omni_task, train, test)

    def test_symb_omniglot_sizes(self, omni_task):
        train, test = split_symb(omni_task, 0.3, seed=0)

        def n_chars(t, c):
            return len({t[i].groups["character"] for i in t.by_label[c]})

        assert (n_chars(train, 0), n_chars(train, 1)) == (14, 12)
        assert (n_chars(test, 0), n_chars(test, 1)) == (33, 28)
        assert not set(train.by_group["character"]) & set(test.by_group["character"])
        _check_partition(omni_task, train, test)

    def test_inst_seeds_differ_sizes_match(self, glyphs):
        a, _ = split_inst(glyphs, 0.3, seed=1)
        b, _ = split_inst(glyphs, 0.3, seed=2)
        assert a.ids != b.ids and len(a) == len(b)

    def test_inst_characters_shared(self, glyphs):
        train, test = split_inst(glyphs, 0.5, seed=0)
        assert set(train.by_group["character"]) & set(test.by_group["character"])

    def test_inst_boundary(self, glyphs):
        with pytest.raises(DomainError):
            split_inst(glyphs, 0.999, seed=0)
        train, test = split_inst(glyphs, 0.9, seed=0)
        assert test.classes == (0, 1)

    def test_symb_one_character_per_class(self):
        t = synth_glyphs(chars_per_class=1, instances_per_char=3)
        with pytest.raises(DomainError, match="cannot split"):
            split_symb(t, 0.3, seed=0)

    def test_random_fraction_counts(self):
        t = synth_glyphs(chars_per_class=5, instances_per_char=10)
        train, test = split_random_fraction(t, 0.3, seed=4)
        assert (len(train), len(test)) == (30, 70)

    def test_random_fraction_stratified(self):
        t = synth_glyphs(chars_per_class=6, instances_per_char=5).subset(list(range(47)))
        train, _ = split_random_fraction(t, 0.3, seed=0)
        for c, members in t.by_label.items():
            assert abs(len(train.by_label[c]) - 0.3 * len(members)) <= 1

    @pytest.mark.parametrize("kind", [INST, SYMB, RANDOM_FRACTION])
    def test_seed_determinism(self, glyphs, kind):
        a = make_split(glyphs, SplitSpec(kind, 0.3, 123))
        b = make_split(glyphs, SplitSpec(kind, 0.3, 123))
        assert a[0].ids == b[0].ids and a[1].ids == b[1].ids

    def test_spec_validation(self):
        with pytest.raises(DomainError):
            SplitSpec("WRITER")
        with pytest.raises(DomainError):
            SplitSpec(INST, 1.0)
        assert SplitSpec("random").kind == RANDOM_FRACTION

    def test_manifest_round_trip(self, glyphs, tmp_path):
        spec = SplitSpec(SYMB, 0.3, 9)
        train, test = make_split(glyphs, spec)
        write_split_manifest(tmp_path / "s.json", spec, train, test)
        d = json.loads((tmp_path / "s.json").read_text())
        assert set(d) == {"kind", "fraction", "seed", "train_ids", "test_ids"}
        spec2, tr2, te2 = read_split_manifest(tmp_path / "s.json", glyphs)
        assert spec2 == spec and tr2.ids == train.ids and te2.ids == test.ids

    def test_manifest_unknown_id(self, glyphs, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps(
            {"kind": "INST", "fraction": 0.3, "seed": 0, "train_ids": ["nope"], "test_ids": []}))
        with pytest.raises(FormatError):
            read_split_manifest(tmp_path / "s.json", glyphs)

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from([INST, SYMB, RANDOM_FRACTION]), st.floats(0.15, 0.85), st.integers(0, 2**63 - 1))
    def test_partition_property(self, glyphs, kind, fraction, seed):
        train, test = make_split(glyphs, SplitSpec(kind, fraction, seed))
        _check_partition(glyphs, train, test)
        if kind == SYMB:
            assert not set(train.by_group["character"]) & set(test.by_group["character"])


class TestPairs:
    def test_exact_count_and_same_rate(self, glyphs):
        pairs = sample_pairs(glyphs, 1000, 0.5, seed=0)
        assert len(pairs) == 1000
        assert 0.45 <= np.mean([p.same for p in pairs]) <= 0.55

    def test_every_pair_sound(self, glyphs):
        for p in sample_pairs(glyphs, 500, 0.3, seed=1):
            assert p.same == int(p.a.task_label == p.b.task_label)
            assert p.a.id != p.b.id

    def test_two_images_different_classes(self):
        t = DatasetTable([LabeledImage("a", np.zeros((1, 2, 2)), 0), LabeledImage("b", np.zeros((1, 2, 2)), 1)])
        with pytest.raises(DomainError, match="insufficient same-class pairs"):
            sample_pairs(t, 4, 0.5)
        assert all(p.same == 0 for p in sample_pairs(t, 10, 0.0))

    @pytest.mark.parametrize("n", [0, -3])
    def test_non_positive_n(self, glyphs, n):
        with pytest.raises(DomainError):
            sample_pairs(glyphs, n)

    def test_pair_sample_invariants(self, glyphs):
        with pytest.raises(DomainError):
            PairSample(glyphs[0], glyphs[0], 1)
        with pytest.raises(DomainError):
            PairSample(glyphs[0], glyphs[1], 0)

    def test_stream_determinism(self, glyphs):
        a, b = PairSampler(glyphs, seed=5), PairSampler(glyphs, seed=5)
        for _ in range(3):
            for x, y in zip(a.sample_indices(50), b.sample_indices(50)):
                np.testing.assert_array_equal(x, y)

    def test_class_balance(self):
        t = synth_glyphs(chars_per_class=10, instances_per_char=10)
        t = t.subset(list(t.by_label[0][:20]) + list(t.by_label[1]))
        ia, ib, same = PairSampler(t, 1.0, seed=0).sample_indices(4000)
        assert abs(np.mean(t.labels[ia] == 0) - 0.5) < 0.05
        ia, _, _ = PairSampler(t, 1.0, seed=0, class_balanced=False).sample_indices(4000)
        assert abs(np.mean(t.labels[ia] == 0) - 20 / 120) < 0.05


class TestSynth:
    def test_unbiased_nuisance_independent(self):
        t = synth_glyphs(chars_per_class=25, instances_per_char=20, bias_strength=0.0, seed=3)
        labels = t.labels
        patch = np.array([img.groups["nuisance"] == "1" for img in t])
        table = [[np.sum((labels == c) & (patch == p)) for p in (0, 1)] for c in (0, 1)]
        assert chi2_contingency(table)[1] > 0.01

    def test_full_bias_in_location_a(self):
        t = synth_glyphs(chars_per_class=6, instances_per_char=10, bias_strength=1.0, seed=0)
        for pos in t.by_group["location"]["A"]:
            img = t[pos]
            assert (img.groups["nuisance"] == "1") == (img.task_label == 1)
        b = [t[p] for p in t.by_group["location"]["B"]]
        assert {(i.groups["nuisance"], i.task_label) for i in b} == {("0", 0), ("0", 1), ("1", 0), ("1", 1)}

    def test_patch_is_drawn(self):
        t = synth_glyphs(chars_per_class=4, instances_per_char=4, bias_strength=1.0)
        for img in t:
            corner = img.pixels[0, :6, :6]
            assert (corner.min() >= 0.35 - 1e-6) == (img.groups["nuisance"] == "1")

    def test_determinism(self):
        a = synth_glyphs(chars_per_class=3, instances_per_char=4, bias_strength=0.4, seed=8)
        b = synth_glyphs(chars_per_class=3, instances_per_char=4, bias_strength=0.4, seed=8)
        assert a.content_hash() == b.content_hash()
        c = synth_glyphs(chars_per_class=3, instances_per_char=4, bias_strength=0.4, seed=9)
        assert a.content_hash() != c.content_hash()

    def test_groups_and_range(self, glyphs):
        assert len(glyphs) == 400
        for img in glyphs:
            assert {"alphabet", "character", "writer", "location", "nuisance"} <= set(img.groups)
            assert 0 <= img.pixels.min() and img.pixels.max() <= 1

    def test_domain(self):
        with pytest.raises(DomainError):
            synth_glyphs(bias_strength=1.5)
