import json
from collections import Counter

import numpy as np
import pytest

from hcpnet.errors import ConfigError, DataError
from hcpnet.imageops import read_image, read_ppm, write_ppm
from hcpnet.manifest import DatasetManifest
from hcpnet.synth import SyntheticSpec, _rng, gen_synthetic, generate_split, render_scene


def test_fixed_seed_gives_byte_identical_output(tmp_path):
    spec = SyntheticSpec(seed=3)
    a = gen_synthetic(spec, {"train": 12, "pretrain": 6}, str(tmp_path / "a"))
    b = gen_synthetic(spec, {"train": 12, "pretrain": 6}, str(tmp_path / "b"))
    for split in a:
        assert (tmp_path / "a" / f"{split}.jsonl").read_bytes() == (tmp_path / "b" / f"{split}.jsonl").read_bytes()
        for ra, rb in zip(a[split], b[split]):
            assert open(a[split].image_path(ra), "rb").read() == open(b[split].image_path(rb), "rb").read()


def test_different_seed_changes_images(tmp_path):
    a = generate_split(SyntheticSpec(seed=1), "train", 3, str(tmp_path / "a"))
    b = generate_split(SyntheticSpec(seed=2), "train", 3, str(tmp_path / "b"))
    assert not np.array_equal(a.load_image(a.records[0]), b.load_image(b.records[0]))


def test_every_image_has_a_label_and_boxes_in_bounds(tmp_path):
    spec = SyntheticSpec(seed=4)
    man = generate_split(spec, "train", 60, str(tmp_path))
    assert man.num_classes == 10
    for rec in man:
        assert sum(rec.labels) >= 1
        for ob in rec.objects:
            assert ob["x0"] >= 0 and ob["y0"] >= 0 and ob["w"] >= 1 and ob["h"] >= 1
            assert ob["x0"] + ob["w"] <= spec.image_size and ob["y0"] + ob["h"] <= spec.image_size
            assert rec.labels[ob["category"]] == 1


def test_objects_per_image_histogram_covers_range():
    spec = SyntheticSpec(seed=5, objects_min=1, objects_max=4)
    counts = Counter(len(render_scene(spec, _rng(spec, "train", i))[1]) for i in range(1000))
    assert set(counts) == {1, 2, 3, 4}
    # uniform draw of the requested count; placement failures are rare
    for n in (1, 2, 3, 4):
        assert 200 <= counts[n] <= 300, counts


def test_pretrain_split_is_single_label_and_centered(tmp_path):
    spec = SyntheticSpec(seed=6)
    man = generate_split(spec, "pretrain", 40, str(tmp_path))
    assert man.num_classes == len(spec.categories) + len(spec.extra_categories)
    for i, rec in enumerate(man):
        assert sum(rec.labels) == 1 and rec.class_id == i % man.num_classes
        ob = rec.objects[0]
        cx, cy = ob["x0"] + ob["w"] / 2, ob["y0"] + ob["h"] / 2
        assert abs(cx - spec.pretrain_size / 2) < spec.pretrain_size / 4
        assert abs(cy - spec.pretrain_size / 2) < spec.pretrain_size / 4
    assert man.load_image(man.records[0]).shape == (spec.pretrain_size, spec.pretrain_size, 3)


def test_objectness_split_uses_disjoint_categories(tmp_path):
    spec = SyntheticSpec(seed=7)
    obj = generate_split(spec, "objectness", 5, str(tmp_path))
    train = generate_split(spec, "train", 5, str(tmp_path))
    assert not set(obj.categories) & set(train.categories)


def test_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec(categories=())
    with pytest.raises(ConfigError):
        SyntheticSpec(objects_min=3, objects_max=2)
    with pytest.raises(ConfigError):
        SyntheticSpec(size_max=500)
    with pytest.raises(ConfigError):
        generate_split(SyntheticSpec(), "train", 0, "/nonexistent")


def test_ppm_roundtrip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
    path = str(tmp_path / "x.ppm")
    write_ppm(path, img)
    assert np.array_equal(read_ppm(path), img)
    assert np.array_equal(read_image(path), img)


def test_manifest_roundtrip_and_errors(tmp_path):
    man = DatasetManifest(["a", "b"], "train", root=str(tmp_path))
    man.add("x.ppm", [1, 0], [{"x0": 0, "y0": 0, "w": 3, "h": 3, "category": 0}])
    man.add("y.ppm", [1, 1])
    path = tmp_path / "m.jsonl"
    man.save(str(path))
    back = DatasetManifest.load(str(path))
    assert back.dumps() == man.dumps()
    assert back.labels_matrix().tolist() == [[1, 0], [1, 1]]

    bad = {
        "nohdr": '{"image": "x", "labels": [1, 0]}\n',
        "width": '{"categories": ["a", "b"]}\n{"image": "x", "labels": [1]}\n',
        "value": '{"categories": ["a", "b"]}\n{"image": "x", "labels": [2, 0]}\n',
        "box": '{"categories": ["a"]}\n{"image": "x", "labels": [1], "objects": [{"x0": 0}]}\n',
        "json": '{"categories": ["a"]}\n{oops\n',
    }
    for name, text in bad.items():
        p = tmp_path / f"{name}.jsonl"
        p.write_text(text)
        with pytest.raises(DataError):
            DatasetManifest.load(str(p))
    with pytest.raises(DataError):
        DatasetManifest.load(str(tmp_path / "missing.jsonl"))


def test_box_reads_are_counted(tmp_path):
    man = generate_split(SyntheticSpec(seed=8), "train", 4, str(tmp_path))
    back = DatasetManifest.load(str(tmp_path / "train.jsonl"))
    assert back.box_reads == 0
    back.labels_matrix()
    [back.load_image(r) for r in back]
    assert back.box_reads == 0
    _ = back.records[0].objects
    assert back.box_reads == 1
    header = json.loads((tmp_path / "train.jsonl").read_text().splitlines()[0])
    assert header["split"] == "train" and len(header["categories"]) == man.num_classes
