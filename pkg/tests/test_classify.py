"""
Image classification with product-form class models.

Scenarios:
  * IDX files (plain and gzip) round trip; bad headers raise FormatError
  * image shifts pad with white pixels; the shift group lists identity first
  * class scores match the explicit shift/support/pixel product sum
  * classifier containers round trip
  * a few training sweeps on tiny synthetic images
"""
import gzip

import numpy as np
import pytest

from gpslab.core.exceptions import FormatError, InvalidArgumentError
from gpslab.services import classify
from gpslab.services.classify import (
    N_CLASSES,
    ImageSet,
    PixelClassModel,
    class_score,
    error_rate,
    load_idx,
    predict,
    save_idx,
    shift_group,
    shift_images,
    train_one_vs_rest,
)

SHAPE = (4, 4)


@pytest.fixture()
def tiny_images(rng):
    """Class 0 lights the top rows, class 1 the bottom rows."""
    images = 0.1 * rng.random((20, *SHAPE))
    labels = np.arange(20) % 2
    images[labels == 0, :2, :] += 0.8
    images[labels == 1, 2:, :] += 0.8
    return ImageSet(np.clip(images, 0.0, 1.0), labels)


@pytest.fixture()
def small_model():
    return PixelClassModel.random(2, scale=0.3, seed=5, shift_radius=1, image_shape=SHAPE)


def brute_score(model, image, label):
    total = 0.0
    for dy, dx in model.shifts:
        pixels = shift_images(image, dy, dx).reshape(-1)
        factors = model.eps0[label] + model.eps1[label] * pixels[:, None]
        total += np.prod(factors, axis=0).sum()
    return total


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_idx_round_trip(tmp_path, tiny_images, suffix):
    images_path = tmp_path / f"images.idx{suffix}"
    labels_path = tmp_path / f"labels.idx{suffix}"
    save_idx(tiny_images, images_path, labels_path)
    loaded = load_idx(images_path, labels_path)
    assert np.array_equal(loaded.labels, tiny_images.labels)
    assert np.allclose(loaded.images, tiny_images.images, atol=0.5 / 255)


def test_idx_bad_magic(tmp_path, tiny_images):
    images_path, labels_path = tmp_path / "images.idx", tmp_path / "labels.idx"
    save_idx(tiny_images, images_path, labels_path)
    with pytest.raises(FormatError):
        load_idx(labels_path, labels_path)


def test_idx_truncated_payload(tmp_path, tiny_images):
    images_path, labels_path = tmp_path / "images.idx.gz", tmp_path / "labels.idx"
    save_idx(tiny_images, images_path, labels_path)
    raw = gzip.decompress(images_path.read_bytes())
    images_path.write_bytes(gzip.compress(raw[:-3]))
    with pytest.raises(FormatError):
        load_idx(images_path, labels_path)


def test_idx_missing_file(tmp_path):
    with pytest.raises(FormatError):
        load_idx(tmp_path / "nope.idx", tmp_path / "nope-labels.idx")


def test_image_set_validation():
    with pytest.raises(InvalidArgumentError):
        ImageSet(np.zeros((2, 4, 4)), [0])
    with pytest.raises(InvalidArgumentError):
        ImageSet(np.full((1, 4, 4), 2.0), [0])
    with pytest.raises(InvalidArgumentError):
        ImageSet(np.zeros((1, 4, 4)), [N_CLASSES])


# ---------------------------------------------------------------------------
# Shifts
# ---------------------------------------------------------------------------

def test_shift_pads_with_white():
    image = np.arange(1, 17, dtype=float).reshape(SHAPE) / 16
    moved = shift_images(image, 1, -1)
    assert moved[1, 0] == image[0, 1]
    assert np.all(moved[0] == 0)
    assert np.all(moved[:, -1] == 0)
    assert np.all(shift_images(image, 4, 0) == 0)


def test_shift_group():
    shifts = shift_group(1)
    assert len(shifts) == 9
    assert shifts[0] == (0, 0)
    assert len(set(shifts)) == 9
    assert shift_group(0) == [(0, 0)]
    with pytest.raises(InvalidArgumentError):
        shift_group(-1)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

def test_scores_match_product_sum(small_model, tiny_images):
    scores = small_model.scores(tiny_images.images[:3])
    assert scores.shape == (3, N_CLASSES)
    for n in range(3):
        for label in (0, 4, 9):
            expected = brute_score(small_model, tiny_images.images[n], label)
            assert scores[n, label] == pytest.approx(expected)
            assert class_score(small_model, label, tiny_images.images[n]) == pytest.approx(expected)


def test_predict_breaks_ties_to_smallest_label():
    shape = (N_CLASSES, 16, 1)
    model = PixelClassModel(np.ones(shape), np.zeros(shape), 0, SHAPE)
    assert predict(model, np.zeros(SHAPE)) == 0
    assert error_rate(model, np.zeros((2, *SHAPE)), [0, 3]) == pytest.approx(0.5)


def test_model_shape_is_validated():
    with pytest.raises(InvalidArgumentError):
        PixelClassModel(np.ones((N_CLASSES, 15, 1)), np.ones((N_CLASSES, 15, 1)), 0, SHAPE)
    with pytest.raises(InvalidArgumentError):
        PixelClassModel.random(1, image_shape=SHAPE).scores(np.zeros((1, 3, 3)))


def test_container_round_trip(tmp_path, small_model, tiny_images):
    loaded = PixelClassModel.load(small_model.save(tmp_path / "classifier.yaml"))
    assert loaded.shift_radius == 1
    assert loaded.image_shape == SHAPE
    assert np.allclose(loaded.scores(tiny_images.images[:4]), small_model.scores(tiny_images.images[:4]))


def test_container_must_hold_a_classifier(tmp_path, make_qgps):
    path = make_qgps().save(tmp_path / "qgps.yaml")
    with pytest.raises(FormatError):
        PixelClassModel.load(path)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def test_training_sweeps_record_metrics(tiny_images):
    test = tiny_images.head(6)
    result = train_one_vs_rest(tiny_images, n_supports=2, sweeps=2, sigma2=0.1, seed=3, test=test, shift_radius=1)
    assert [m["sweep"] for m in result.metrics] == [0, 1]
    assert all(0.0 <= m["train_err"] <= 1.0 for m in result.metrics)
    assert 0.0 <= result.metrics[-1]["test_err"] <= 1.0
    assert 0 < result.sigma2 <= 0.1
    assert result.model.image_shape == SHAPE


def test_training_without_test_set_reports_nan(tiny_images):
    result = train_one_vs_rest(tiny_images.head(4), n_supports=1, sweeps=1, seed=3, shift_radius=0)
    assert np.isnan(result.metrics[0]["test_err"])


def test_training_validates_arguments(tiny_images):
    with pytest.raises(InvalidArgumentError):
        train_one_vs_rest(tiny_images.head(0), 1, 1)
    with pytest.raises(InvalidArgumentError):
        train_one_vs_rest(tiny_images, 1, 1, sigma2=0.0)


def test_products_are_built_in_bounded_blocks(small_model, tiny_images, monkeypatch):
    full = small_model.scores(tiny_images.images)
    blocks = []
    chunk_size = classify._image_chunk

    def recording_chunk(*args):
        blocks.append(chunk_size(*args))
        return blocks[-1]

    monkeypatch.setattr(classify, "FACTOR_BUDGET", 9 * 16 * 2 * 3)
    monkeypatch.setattr(classify, "_image_chunk", recording_chunk)
    assert np.allclose(small_model.scores(tiny_images.images), full)
    assert blocks and set(blocks) == {3}


def test_training_streams_ten_thousand_images(rng, monkeypatch):
    n = 10_000
    labels = np.arange(n) % N_CLASSES
    images = 0.2 * rng.random((n, *SHAPE))
    flat = images.reshape(n, -1)
    flat[np.arange(n), labels] += 0.7
    train = ImageSet(images, labels)
    monkeypatch.setattr(classify, "FACTOR_BUDGET", 9 * 16 * 2 * 64)

    result = train_one_vs_rest(train, n_supports=2, sweeps=1, sigma2=0.1, seed=3, shift_radius=1)

    record = result.metrics[0]
    assert 0.0 <= record["train_err"] <= 1.0
    assert record["train_err"] == pytest.approx(error_rate(result.model, train.images, train.labels), abs=0.01)
