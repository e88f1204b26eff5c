"""IDX ingestion (MNIST / FashionMNIST), subsetting and synthetic blobs."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, IdxCountMismatchError, IdxMagicError, IdxTruncatedError, SubsetSizeError
from .tools import get_logger, log_operation

logger = get_logger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # [n x dim], values in [0, 1]
    labels: np.ndarray  # [n], int64
    name: str
    num_classes: int = field(default=10)
    image_shape: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise ContractViolation(
                "inputs and labels disagree", operation="dataset", inputs=self.inputs.shape, labels=self.labels.shape
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractViolation("label outside [0, num_classes)", operation="dataset", name=self.name)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])

    def take(self, indices: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(self.inputs[indices], self.labels[indices], name or self.name, self.num_classes, self.image_shape)


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as handle:
            return handle.read()
    return path.read_bytes()


def _parse_header(payload: bytes, magic: int, dims: int, path: Path) -> tuple[int, ...]:
    header_size = 4 + 4 * dims
    if len(payload) < 4:
        raise IdxTruncatedError("File too short for magic number", str(path))
    (found,) = struct.unpack(">I", payload[:4])
    if found != magic:
        raise IdxMagicError(f"Bad magic 0x{found:08x}, expected 0x{magic:08x}", str(path))
    if len(payload) < header_size:
        raise IdxTruncatedError("Header truncated", str(path))
    return struct.unpack(f">{dims}I", payload[4:header_size])


def _parse_payload(payload: bytes, offset: int, shape: tuple[int, ...], path: Path) -> np.ndarray:
    expected = int(np.prod(shape))
    body = payload[offset:]
    if len(body) < expected:
        raise IdxTruncatedError(f"Payload has {len(body)} bytes, expected {expected}", str(path))
    return np.frombuffer(body, dtype=np.uint8, count=expected).reshape(shape)


@log_operation("load_idx")
def load_idx(images_path: str | Path, labels_path: str | Path, name: str | None = None) -> Dataset:
    """Read an IDX image/label pair; pixels are divided by 255.0."""

    images_path, labels_path = Path(images_path), Path(labels_path)
    image_bytes = _read_bytes(images_path)
    count, rows, cols = _parse_header(image_bytes, IDX_IMAGES_MAGIC, 3, images_path)
    pixels = _parse_payload(image_bytes, 16, (count, rows * cols), images_path)

    label_bytes = _read_bytes(labels_path)
    (label_count,) = _parse_header(label_bytes, IDX_LABELS_MAGIC, 1, labels_path)
    labels = _parse_payload(label_bytes, 8, (label_count,), labels_path)
    if label_count != count:
        raise IdxCountMismatchError(f"{count} images but {label_count} labels", str(labels_path))

    num_classes = max(10, int(labels.max()) + 1) if count else 10
    dataset = Dataset(
        inputs=pixels.astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        name=name or images_path.name,
        num_classes=num_classes,
        image_shape=(rows, cols),
    )
    logger.info("Loaded IDX dataset", file_path=str(images_path), records=count)
    return dataset


def subset(ds: Dataset, n: int, rng_seed: int) -> Dataset:
    """Uniform sample of ``n`` records without replacement."""

    if n > len(ds) or n < 0:
        raise SubsetSizeError(f"Cannot draw {n} records from {len(ds)}", operation="subset", name=ds.name)
    rng = np.random.default_rng(rng_seed)
    indices = rng.choice(len(ds), size=n, replace=False)
    return ds.take(indices, name=f"{ds.name}[{n}]")


def _blob_centers(num_classes: int, dim: int) -> np.ndarray:
    # Classes sit evenly on the diagonal of [0.3, 0.7]^dim.
    steps = np.linspace(0.3, 0.7, num_classes) if num_classes > 1 else np.array([0.5])
    return np.repeat(steps[:, None], dim, axis=1)


def synth_blobs(
    num_classes: int,
    dim: int,
    n_per_class: int,
    separation: float,
    rng_seed: int,
    shifted: bool = False,
) -> Dataset:
    """Gaussian blobs clipped to [0,1]^dim.

    ``separation`` is the ratio of neighbouring-center distance to the blob
    standard deviation. ``shifted=True`` yields the out-of-distribution
    companion: every center moved by 3 * separation standard deviations
    across the class axis.
    """

    if separation <= 0:
        raise ContractViolation("separation must be positive", operation="synth_blobs")
    centers = _blob_centers(num_classes, dim)
    spacing = 0.4 / (num_classes - 1) * np.sqrt(dim) if num_classes > 1 else 0.4 * np.sqrt(dim)
    sigma = spacing / separation
    if shifted:
        direction = np.where(np.arange(dim) % 2 == 0, 1.0, -1.0)
        direction = direction / np.linalg.norm(direction)
        centers = centers + 3.0 * separation * sigma * direction
    rng = np.random.default_rng([rng_seed, int(shifted)])
    inputs = np.zeros((0, dim))
    if n_per_class:
        inputs = np.concatenate([rng.normal(center, sigma, size=(n_per_class, dim)) for center in centers])
    labels = np.repeat(np.arange(num_classes), n_per_class)
    return Dataset(
        inputs=np.clip(inputs, 0.0, 1.0),
        labels=labels.astype(np.int64),
        name="blobs-shifted" if shifted else "blobs",
        num_classes=num_classes,
    )


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: str | Path, labels_path: str | Path) -> None:
    """Write uint8 images [n x rows x cols] and labels [n] as an IDX pair."""

    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, count, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())
