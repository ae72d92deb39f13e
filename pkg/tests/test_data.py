"""Ingestion, corpus loading, and the synthetic fixture generator."""

import numpy as np
import pytest
import torch
from PIL import Image

from asymvq.data import (
    image_to_tensor,
    ingest,
    load_corpus,
    synthesize_corpus,
    tensor_to_image,
)
from asymvq.errors import InputError


def write_png(path, h, w, value=128):
    Image.new("RGB", (w, h), (value, value, value)).save(path)


def test_image_tensor_round_trip():
    rng = np.random.default_rng(0)
    arr = rng.integers(0, 256, size=(9, 7, 3), dtype=np.uint8)
    img = Image.fromarray(arr)
    t = image_to_tensor(img)
    assert t.shape == (3, 9, 7)
    assert t.min() >= -1.0 and t.max() <= 1.0
    back = np.asarray(tensor_to_image(t))
    assert np.array_equal(back, arr)


def test_tensor_to_image_clamps():
    t = torch.tensor([[[2.0]], [[-2.0]], [[0.0]]])
    px = np.asarray(tensor_to_image(t))[0, 0]
    assert list(px) == [255, 0, 128]


def test_ingest_writes_manifest_and_cache(tmp_path):
    src, cache = tmp_path / "src", tmp_path / "cache"
    src.mkdir()
    for i in range(4):
        write_png(src / f"photo_{i}.jpg", 40 + i, 64, value=10 * i)
    manifest = ingest(src, 32, cache)
    lines = manifest.read_text().splitlines()
    assert lines == [f"photo_{i}.png" for i in range(4)]
    for line in lines:
        with Image.open(cache / line) as img:
            assert img.size == (32, 32)


def test_ingest_skips_unreadable_with_footer(tmp_path):
    src, cache = tmp_path / "src", tmp_path / "cache"
    src.mkdir()
    write_png(src / "a.png", 16, 16)
    (src / "b.png").write_bytes(b"this is not a png")
    lines = ingest(src, 16, cache).read_text().splitlines()
    assert lines == ["a.png", "# skipped: b.png"]
    assert not (cache / "b.png").exists()


def test_ingest_rerun_is_byte_identical(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    for i in range(3):
        write_png(src / f"{i}.png", 20, 30, value=50 + i)
    m1 = ingest(src, 16, tmp_path / "c1")
    m2 = ingest(src, 16, tmp_path / "c2")
    assert m1.read_text() == m2.read_text()
    for name in m1.read_text().split():
        assert (tmp_path / "c1" / name).read_bytes() == (tmp_path / "c2" / name).read_bytes()


def test_ingest_missing_directory(tmp_path):
    with pytest.raises(InputError, match="not found"):
        ingest(tmp_path / "missing", 16, tmp_path / "cache")


def test_load_corpus_sorted_and_stacked(tmp_path):
    for name, v in [("b.png", 20), ("a.png", 10), ("c.png", 30)]:
        write_png(tmp_path / name, 8, 8, value=v)
    images, names = load_corpus(tmp_path)
    assert names == ["a.png", "b.png", "c.png"]
    assert images.shape == (3, 3, 8, 8)
    # sorted order means the darkest image comes first
    assert images[0].mean() < images[1].mean() < images[2].mean()


def test_load_corpus_empty_dir(tmp_path):
    with pytest.raises(InputError, match="no images"):
        load_corpus(tmp_path)


def test_load_corpus_mixed_shapes(tmp_path):
    write_png(tmp_path / "a.png", 8, 8)
    write_png(tmp_path / "b.png", 16, 16)
    with pytest.raises(InputError, match="mixed"):
        load_corpus(tmp_path)
    images, _ = load_corpus(tmp_path, image_size=8)  # resize reconciles them
    assert images.shape == (2, 3, 8, 8)


def test_synthesize_corpus_deterministic(tmp_path):
    a = synthesize_corpus(tmp_path / "a", count=5, image_size=16, seed=9)
    b = synthesize_corpus(tmp_path / "b", count=5, image_size=16, seed=9)
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    c = synthesize_corpus(tmp_path / "c", count=5, image_size=16, seed=10)
    assert any(pa.read_bytes() != pc.read_bytes() for pa, pc in zip(a, c))


def test_synthesize_corpus_loads_at_size(tmp_path):
    synthesize_corpus(tmp_path, count=3, image_size=32, seed=0)
    images, names = load_corpus(tmp_path)
    assert images.shape == (3, 3, 32, 32)
    assert len(names) == 3
    # busy fixtures: per-image pixel variance should be real, not flat color
    assert all(images[i].std() > 0.05 for i in range(3))
