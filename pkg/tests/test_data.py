"""Synthetic generator and image-folder ingestion tests."""

import numpy as np
import pytest

from salbench.data import (
    SIGN_SPECS,
    bilinear_resize,
    generate_synthetic,
    load_image_folder,
)
from salbench.errors import DatasetError
from salbench.imgio import read_pnm, write_pgm, write_ppm
from salbench.model import init_model, reference_cnn
from salbench.training import evaluate_accuracy


def test_sign_specs_unique_triples():
    triples = {(s.shape, s.color, s.glyph) for s in SIGN_SPECS}
    assert len(triples) == len(SIGN_SPECS) == 8


def test_generation_deterministic_bitwise():
    a = generate_synthetic(2, 1, seed=7)
    b = generate_synthetic(2, 1, seed=7)
    assert a.images.tobytes() == b.images.tobytes()
    assert np.array_equal(a.labels, b.labels)


def test_split_changes_images():
    train = generate_synthetic(3, 4, seed=0, split="train")
    test = generate_synthetic(3, 4, seed=0, split="test")
    assert not np.array_equal(train.images, test.images)


def test_uniform_class_histogram():
    ds = generate_synthetic(5, 7, seed=1)
    counts = np.bincount(ds.labels, minlength=5)
    assert counts.tolist() == [7] * 5


def test_pixel_range_invariant():
    ds = generate_synthetic(8, 3, seed=2)
    assert ds.images.min() >= 0.0
    assert ds.images.max() <= 1.0


def test_class_count_out_of_range():
    with pytest.raises(DatasetError):
        generate_synthetic(1, 5, seed=0)
    with pytest.raises(DatasetError):
        generate_synthetic(9, 5, seed=0)
    with pytest.raises(DatasetError):
        generate_synthetic(4, 0, seed=0)


def test_fresh_model_scores_chance_level():
    # mean accuracy over 10 init seeds should sit near 1/8
    ds = generate_synthetic(8, 50, seed=0, split="test")
    accs = [
        evaluate_accuracy(init_model(reference_cnn(8), s), ds) for s in range(10)
    ]
    assert abs(float(np.mean(accs)) - 0.125) <= 0.05


def test_folder_load_exact_at_native_size(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", arr)
    (tmp_path / "labels.txt").write_text("a.ppm,1\n")
    ds = load_image_folder(tmp_path, tmp_path / "labels.txt")
    assert np.array_equal(ds.images[0], arr.transpose(2, 0, 1) / 255.0)
    assert ds.labels[0] == 1


def test_folder_load_grayscale_replicates_channels(tmp_path):
    arr = np.arange(32 * 32, dtype=np.uint8).reshape(32, 32) % 251
    write_pgm(tmp_path / "g.pgm", arr)
    (tmp_path / "labels.txt").write_text("g.pgm,0\n")
    ds = load_image_folder(tmp_path, tmp_path / "labels.txt")
    assert np.array_equal(ds.images[0][0], ds.images[0][1])
    assert np.array_equal(ds.images[0][0], arr / 255.0)


def test_folder_load_constant_resample(tmp_path):
    arr = np.full((64, 64, 3), 77, dtype=np.uint8)
    write_ppm(tmp_path / "c.ppm", arr)
    (tmp_path / "labels.txt").write_text("c.ppm,0\n")
    ds = load_image_folder(tmp_path, tmp_path / "labels.txt")
    assert np.allclose(ds.images[0], 77 / 255.0, atol=1e-12)


def test_folder_load_empty_labels(tmp_path):
    (tmp_path / "labels.txt").write_text("\n\n")
    with pytest.raises(DatasetError) as err:
        load_image_folder(tmp_path, tmp_path / "labels.txt")
    assert "empty" in str(err.value)


def test_folder_load_malformed_line_names_lineno(tmp_path):
    write_pgm(tmp_path / "x.pgm", np.zeros((8, 8), dtype=np.uint8))
    (tmp_path / "labels.txt").write_text("x.pgm,0\nbroken-line\n")
    with pytest.raises(DatasetError) as err:
        load_image_folder(tmp_path, tmp_path / "labels.txt")
    assert ":2" in str(err.value)


def test_folder_load_bad_class_index(tmp_path):
    write_pgm(tmp_path / "x.pgm", np.zeros((8, 8), dtype=np.uint8))
    (tmp_path / "labels.txt").write_text("x.pgm,notanint\n")
    with pytest.raises(DatasetError) as err:
        load_image_folder(tmp_path, tmp_path / "labels.txt")
    assert ":1" in str(err.value)


def test_folder_load_missing_image(tmp_path):
    (tmp_path / "labels.txt").write_text("ghost.pgm,0\n")
    with pytest.raises(DatasetError) as err:
        load_image_folder(tmp_path, tmp_path / "labels.txt")
    assert "ghost.pgm" in str(err.value)


def test_png_roundtrip(tmp_path):
    pytest.importorskip("PIL")
    from salbench.imgio import write_png

    rng = np.random.default_rng(1)
    arr = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    write_png(tmp_path / "a.png", arr)
    (tmp_path / "labels.txt").write_text("a.png,2\n")
    ds = load_image_folder(tmp_path, tmp_path / "labels.txt")
    assert np.array_equal(ds.images[0], arr.transpose(2, 0, 1) / 255.0)


def test_pnm_comment_and_maxval_handling(tmp_path):
    raw = b"P5\n# a comment\n4 2\n255\n" + bytes(range(8))
    (tmp_path / "c.pgm").write_bytes(raw)
    arr = read_pnm(tmp_path / "c.pgm")
    assert arr.shape == (2, 4)
    assert arr.ravel().tolist() == list(range(8))
    (tmp_path / "wide.pgm").write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(DatasetError):
        read_pnm(tmp_path / "wide.pgm")


def test_bilinear_resize_constant_any_size():
    img = np.full((17, 23, 3), 0.37)
    out = bilinear_resize(img, 32, 32)
    assert np.allclose(out, 0.37, atol=1e-12)


def test_bilinear_resize_identity():
    rng = np.random.default_rng(2)
    img = rng.random((32, 32, 3))
    assert np.array_equal(bilinear_resize(img, 32, 32), img)
