"""
One-vs-rest image classification with real product-form models.

Class d scores an image by

    sum_S sum_m prod_i (eps0[d, i, m] + eps1[d, i, m] * S[x]_i)

where S runs over small image translations with white (zero) padding.
Training sweeps over pixels; at each pixel the ten class models are
linear in (eps0, eps1) of that pixel and are fitted by Bayesian
regression with one shared noise parameter.
"""
from __future__ import annotations

import gzip
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from tqdm import tqdm

from gpslab.core.config import settings
from gpslab.core.exceptions import FormatError, IllConditionedError, InvalidArgumentError
from gpslab.models.qgps import QGPS_FORMAT, QGPS_VERSION
from gpslab.services.bayes_linear import RegressionData, log_space_precisions, noise_derivative
from gpslab.services.sweep import solve_shared_alpha, zigzag_schedule
from gpslab.utils.io import check_container, read_yaml, write_yaml

logger = logging.getLogger(__name__)

N_CLASSES = 10
IMAGE_SHAPE = (28, 28)
IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
FACTOR_BUDGET = 1 << 22  # elements per (images, shifts, pixels, supports) block


@dataclass
class ImageSet:
    images: np.ndarray  # (N, rows, cols) in [0, 1]
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.images.ndim != 3:
            raise InvalidArgumentError("Images must have shape (N, rows, cols)", field="images")
        if len(self.images) != len(self.labels):
            raise InvalidArgumentError(f"{len(self.images)} images but {len(self.labels)} labels", field="labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise InvalidArgumentError("Pixel values must lie in [0, 1]", field="images")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise InvalidArgumentError(f"Labels must lie in [0, {N_CLASSES})", field="labels")

    def __len__(self) -> int:
        return len(self.labels)

    def head(self, n: int) -> "ImageSet":
        return ImageSet(self.images[:n], self.labels[:n])


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise FormatError(f"Cannot read IDX file: {exc}", path=str(path))


def _idx_payload(path: str | Path, magic: int, n_dims: int) -> tuple[tuple[int, ...], np.ndarray]:
    raw = _read_bytes(path)
    header_size = 4 * (1 + n_dims)
    if len(raw) < header_size:
        raise FormatError("Truncated IDX header", path=str(path))
    header = np.frombuffer(raw[:header_size], dtype=">u4")
    if int(header[0]) != magic:
        raise FormatError(f"IDX magic {int(header[0])} != {magic}", path=str(path))
    dims = tuple(int(d) for d in header[1:])
    payload = np.frombuffer(raw[header_size:], dtype=np.uint8)
    if payload.size != math.prod(dims):
        raise FormatError(f"IDX payload has {payload.size} bytes, dimensions {dims} need {math.prod(dims)}", path=str(path))
    return dims, payload


def load_idx(images_path: str | Path, labels_path: str | Path) -> ImageSet:
    dims, pixels = _idx_payload(images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,), labels = _idx_payload(labels_path, IDX_LABELS_MAGIC, 1)
    if dims[0] != n_labels:
        raise FormatError(f"{dims[0]} images but {n_labels} labels", path=str(labels_path))
    if labels.size and labels.max() >= N_CLASSES:
        raise FormatError(f"Label {int(labels.max())} outside [0, {N_CLASSES})", path=str(labels_path))
    images = pixels.reshape(dims).astype(float) / 255.0
    logger.info(f"Loaded {dims[0]} images of shape {dims[1:]} from {images_path}")
    return ImageSet(images, labels)


def save_idx(images: ImageSet, images_path: str | Path, labels_path: str | Path) -> None:
    """Write an ImageSet back to IDX (pixels rounded to bytes)."""
    n, rows, cols = images.images.shape
    pixels = np.rint(images.images * 255.0).astype(np.uint8)
    for path, magic, dims, payload in (
        (images_path, IDX_IMAGES_MAGIC, (n, rows, cols), pixels),
        (labels_path, IDX_LABELS_MAGIC, (n,), images.labels.astype(np.uint8)),
    ):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        opener = gzip.open if path.suffix == ".gz" else open
        with opener(path, "wb") as fh:
            fh.write(np.array((magic, *dims), dtype=">u4").tobytes())
            fh.write(payload.tobytes())


# ---------------------------------------------------------------------------
# Shifts
# ---------------------------------------------------------------------------

def shift_images(images: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate by (dy, dx) pixels; uncovered pixels become 0 (white)."""
    images = np.asarray(images, dtype=float)
    out = np.zeros_like(images)
    rows, cols = images.shape[-2:]
    if abs(dy) >= rows or abs(dx) >= cols:
        return out
    dst_r = slice(max(dy, 0), rows + min(dy, 0))
    src_r = slice(max(-dy, 0), rows + min(-dy, 0))
    dst_c = slice(max(dx, 0), cols + min(dx, 0))
    src_c = slice(max(-dx, 0), cols + min(-dx, 0))
    out[..., dst_r, dst_c] = images[..., src_r, src_c]
    return out


def shift_group(radius: int) -> list[tuple[int, int]]:
    """The (2r+1)^2 translations with |dy|, |dx| <= r, identity first."""
    if radius < 0:
        raise InvalidArgumentError("Shift radius must be non-negative", field="radius")
    shifts = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    shifts.remove((0, 0))
    return [(0, 0)] + shifts


def _source_table(shifts: list[tuple[int, int]], shape: tuple[int, int]) -> np.ndarray:
    """(G, P) flat source pixel of every shifted pixel; P (one past the end) marks padding."""
    rows, cols = shape
    r, c = np.divmod(np.arange(rows * cols), cols)
    table = np.empty((len(shifts), rows * cols), dtype=np.int64)
    for g, (dy, dx) in enumerate(shifts):
        sr, sc = r - dy, c - dx
        inside = (sr >= 0) & (sr < rows) & (sc >= 0) & (sc < cols)
        table[g] = np.where(inside, sr * cols + sc, rows * cols)
    return table


def _padded(flat: np.ndarray) -> np.ndarray:
    """(N, P) flattened images with a trailing white pixel, indexed by the source table."""
    return np.concatenate([flat, np.zeros((len(flat), 1))], axis=1)


def _image_chunk(n_shifts: int, n_pixels: int, n_supports: int) -> int:
    return max(1, FACTOR_BUDGET // max(1, n_shifts * n_pixels * n_supports))


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

class PixelClassModel:
    def __init__(self, eps0: np.ndarray, eps1: np.ndarray, shift_radius: int = 2, image_shape: tuple[int, int] = IMAGE_SHAPE):
        eps0 = np.asarray(eps0, dtype=float)
        eps1 = np.asarray(eps1, dtype=float)
        n_pixels = image_shape[0] * image_shape[1]
        if eps0.shape != eps1.shape or eps0.ndim != 3 or eps0.shape[:2] != (N_CLASSES, n_pixels):
            raise InvalidArgumentError(f"Tensors must have shape ({N_CLASSES}, {n_pixels}, M)", field="eps0")
        if not (np.all(np.isfinite(eps0)) and np.all(np.isfinite(eps1))):
            raise InvalidArgumentError("Model parameters must be finite", field="eps0")
        self.eps0 = eps0
        self.eps1 = eps1
        self.shift_radius = int(shift_radius)
        self.image_shape = tuple(image_shape)
        self.shifts = shift_group(self.shift_radius)
        self._table = _source_table(self.shifts, self.image_shape)

    @property
    def n_supports(self) -> int:
        return self.eps0.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.eps0.shape[1]

    @classmethod
    def random(cls, n_supports: int, scale: float = 0.01, seed: Optional[int] = None, shift_radius: int = 2,
               image_shape: tuple[int, int] = IMAGE_SHAPE) -> "PixelClassModel":
        """Factors near 1 off pixel 0 and near 0 on pixel 0."""
        rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
        shape = (N_CLASSES, image_shape[0] * image_shape[1], n_supports)
        eps0 = 1.0 + scale * rng.standard_normal(shape)
        eps0[:, 0, :] -= 1.0
        eps1 = scale * rng.standard_normal(shape)
        return cls(eps0, eps1, shift_radius, image_shape)

    def _flatten(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=float)
        if images.shape[-2:] != self.image_shape:
            raise InvalidArgumentError(f"Images must be {self.image_shape}", field="images")
        return images.reshape(-1, self.n_pixels)

    def _products_padded(self, padded: np.ndarray, label: int) -> np.ndarray:
        n_shifts = len(self.shifts)
        out = np.empty((len(padded), n_shifts, self.n_supports))
        chunk = _image_chunk(n_shifts, self.n_pixels, self.n_supports)
        eps0, eps1 = self.eps0[label][None, None], self.eps1[label][None, None]
        for start in range(0, len(padded), chunk):
            shifted = padded[start:start + chunk][:, self._table]  # (n, G, P)
            out[start:start + chunk] = np.prod(eps0 + eps1 * shifted[..., None], axis=2)
        return out

    def products(self, images: np.ndarray, label: int) -> np.ndarray:
        """(N, G, M) per-shift, per-support products of class `label`."""
        return self._products_padded(_padded(self._flatten(images)), label)

    def scores(self, images: np.ndarray) -> np.ndarray:
        padded = _padded(self._flatten(images))
        out = np.zeros((len(padded), N_CLASSES))
        for d in range(N_CLASSES):
            out[:, d] = self._products_padded(padded, d).sum(axis=(1, 2))
        return out

    def to_dict(self) -> dict:
        return {
            "format": QGPS_FORMAT,
            "version": QGPS_VERSION,
            "kind": "pixel_classifier",
            "real_only": True,
            "n_classes": N_CLASSES,
            "image_shape": list(self.image_shape),
            "n_supports": self.n_supports,
            "shift_radius": self.shift_radius,
            "eps0": self.eps0.ravel(),
            "eps1": self.eps1.ravel(),
        }

    @classmethod
    def from_dict(cls, document: dict) -> "PixelClassModel":
        check_container(document, QGPS_FORMAT, QGPS_VERSION)
        if document.get("kind") != "pixel_classifier" or not document.get("real_only"):
            raise FormatError("Container does not hold a real-only pixel classifier")
        image_shape = tuple(document["image_shape"])
        shape = (N_CLASSES, image_shape[0] * image_shape[1], int(document["n_supports"]))
        return cls(
            np.asarray(document["eps0"], dtype=float).reshape(shape),
            np.asarray(document["eps1"], dtype=float).reshape(shape),
            int(document["shift_radius"]),
            image_shape,
        )

    def save(self, path: str | Path) -> Path:
        return write_yaml(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "PixelClassModel":
        return cls.from_dict(read_yaml(path))


def class_score(model: PixelClassModel, label: int, image: np.ndarray) -> float:
    return float(model.products(np.asarray(image)[None], label).sum())


def predict(model: PixelClassModel, images: np.ndarray) -> np.ndarray:
    """Largest class score; argmax resolves ties to the smallest label."""
    images = np.asarray(images, dtype=float)
    single = images.ndim == 2
    labels = np.argmax(model.scores(images[None] if single else images), axis=1)
    return labels[0] if single else labels


def error_rate(model: PixelClassModel, images: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        return 0.0
    return float(np.mean(predict(model, images) != labels))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class ClassifierResult:
    model: PixelClassModel
    metrics: list = field(default_factory=list)
    sigma2: float = 0.1


def train_one_vs_rest(
    train: ImageSet,
    n_supports: int,
    sweeps: int,
    sigma2: float = 0.1,
    eta: float = 1e-3,
    seed: Optional[int] = None,
    test: Optional[ImageSet] = None,
    shift_radius: int = 2,
    model: Optional[PixelClassModel] = None,
    alpha_iters: int = 100,
    alpha_tol: float = 1e-3,
) -> ClassifierResult:
    """Pixel sweeps with in-class targets 0 and out-of-class targets ln sigma2.

    Targets are refreshed from the current sigma2 at the start of every
    sweep only. Pixel 0 is fitted directly, every other pixel around
    eps0 = 1, eps1 = 0.
    """
    if len(train) == 0:
        raise InvalidArgumentError("Training set is empty", field="train")
    if sigma2 <= 0 or eta <= 0:
        raise InvalidArgumentError("sigma2 and eta must be positive", field="sigma2")
    image_shape = train.images.shape[1:]
    model = model or PixelClassModel.random(n_supports, seed=seed, shift_radius=shift_radius, image_shape=image_shape)
    m = model.n_supports
    eps0, eps1 = model.eps0.copy(), model.eps1.copy()
    flat = model._flatten(train.images)
    padded = _padded(flat)  # (N, P + 1)
    products = np.stack([model._products_padded(padded, d) for d in range(N_CLASSES)])  # (C, N, G, M)
    alphas = np.ones((N_CLASSES, model.n_pixels))
    sigma2_init = sigma2
    metrics: list[dict] = []

    for sweep in range(sweeps):
        targets = np.where(train.labels[None, :] == np.arange(N_CLASSES)[:, None], 0.0, math.log(sigma2))
        schedule = zigzag_schedule(image_shape)
        for pixel in tqdm(schedule, desc=f"sweep {sweep}", disable=not settings.SHOW_PROGRESS, leave=False):
            x_pixel = padded[:, model._table[:, pixel]]  # (N, G)
            gradients = []
            for d in range(N_CLASSES):
                f_old = eps0[d, pixel][None, None, :] + eps1[d, pixel][None, None, :] * x_pixel[..., None]
                small = np.abs(f_old) < settings.SMALL_FACTOR
                with np.errstate(divide="ignore", invalid="ignore"):
                    rest = products[d] / f_old
                if np.any(small):
                    n_idx, g_idx, m_idx = np.nonzero(small)
                    keep = np.ones(model.n_pixels, dtype=bool)
                    keep[pixel] = False
                    source = padded[n_idx[:, None], model._table[g_idx]][:, keep]  # (K, P - 1)
                    others = eps0[d][keep][:, m_idx].T + eps1[d][keep][:, m_idx].T * source
                    rest[n_idx, g_idx, m_idx] = np.prod(others, axis=1)

                phi = np.concatenate([rest.sum(axis=1), (x_pixel[..., None] * rest).sum(axis=1)], axis=1)
                shift = np.concatenate([np.ones(m), np.zeros(m)]) if pixel != 0 else np.zeros(2 * m)
                y = targets[d] - phi @ shift
                try:
                    data = RegressionData(phi, y, log_space_precisions(sigma2, targets[d]))
                    fit, alphas[d, pixel] = solve_shared_alpha(data, alphas[d, pixel], alpha_iters, alpha_tol)
                except IllConditionedError as exc:
                    logger.warning(f"Skipping class {d} at pixel {pixel}: {exc.message}", extra={"sweep": sweep, "site": pixel})
                    continue
                gradients.append(noise_derivative(fit, data, sigma2, targets[d]))

                weights = fit.weights().real + shift
                eps0[d, pixel], eps1[d, pixel] = weights[:m], weights[m:]
                f_new = eps0[d, pixel][None, None, :] + eps1[d, pixel][None, None, :] * x_pixel[..., None]
                products[d] = rest * f_new

            if gradients:
                step = eta * float(np.mean(gradients)) * sigma2
                sigma2 = float(min(sigma2_init, math.exp(math.log(sigma2) + step)))

        model = PixelClassModel(eps0.copy(), eps1.copy(), model.shift_radius, model.image_shape)
        record = {
            "sweep": sweep,
            "train_err": float(np.mean(np.argmax(products.sum(axis=(2, 3)), axis=0) != train.labels)),
            "test_err": error_rate(model, test.images, test.labels) if test is not None else float("nan"),
            "sigma2": sigma2,
        }
        metrics.append(record)
        logger.info(
            f"Sweep {sweep}: train error {record['train_err']:.4f}, test error {record['test_err']:.4f}, sigma2={sigma2:.3e}",
            extra={"sweep": sweep},
        )
    return ClassifierResult(model, metrics, sigma2)
