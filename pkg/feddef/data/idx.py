"""Reader for the IDX container used by MNIST and FashionMNIST."""

import gzip
import logging
import os
import struct
import typing

import numpy as np
import numpy.typing as npt

from . import DataError, LabeledDataset

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}
DATASETS = ('mnist', 'fashionmnist')
IMAGE_SIZE = (28, 28)


class IDXParseError(DataError):
    def __init__(self, filename: str, problem: str) -> None:
        super().__init__(f"{filename}: {problem}")
        self.filename = filename


def _read_bytes(path: str) -> bytes:
    if path.endswith('.gz'):
        with gzip.open(path, 'rb') as f:
            return f.read()
    with open(path, 'rb') as f:
        return f.read()


def _parse(path: str, data: bytes, magic: int, ndims: int) -> npt.NDArray[np.uint8]:
    # Data format (big endian):
    # u32 | Magic (0x0000080X: unsigned bytes, X dimensions)
    # u32 | Size of each dimension
    # u8[] | Values, last dimension varying fastest
    header_size = 4 * (1 + ndims)
    if len(data) < header_size:
        raise IDXParseError(path, f"truncated header ({len(data)} bytes)")
    found, *dims = struct.unpack(f">{1 + ndims}I", data[:header_size])
    if found != magic:
        raise IDXParseError(path, f"bad magic 0x{found:08x}, expected 0x{magic:08x}")
    expected = int(np.prod(dims, dtype=np.int64))
    body = len(data) - header_size
    if body < expected:
        raise IDXParseError(path, f"truncated file: {body} bytes of data, expected {expected}")
    if body > expected:
        raise IDXParseError(path, f"{body - expected} unexpected trailing bytes")
    return np.frombuffer(data, dtype=np.uint8, offset=header_size).reshape(dims)


def read_idx_images(path: str) -> npt.NDArray[np.uint8]:
    return _parse(path, _read_bytes(path), IMAGE_MAGIC, 3)


def read_idx_labels(path: str) -> npt.NDArray[np.uint8]:
    return _parse(path, _read_bytes(path), LABEL_MAGIC, 1)


def load_idx(images_file: str, labels_file: str, num_classes: int = 10,
             image_size: typing.Tuple[int, int] = IMAGE_SIZE) -> LabeledDataset:
    raw_images = read_idx_images(images_file)
    if raw_images.shape[1:] != image_size:
        h, w = raw_images.shape[1:]
        raise IDXParseError(images_file, f"images are {h}x{w}, expected {image_size[0]}x{image_size[1]}")
    raw_labels = read_idx_labels(labels_file)
    if len(raw_images) != len(raw_labels):
        raise IDXParseError(labels_file, f"{len(raw_labels)} labels for {len(raw_images)} images in {images_file}")
    if raw_labels.size and raw_labels.max() >= num_classes:
        raise IDXParseError(labels_file, f"label {raw_labels.max()} outside [0, {num_classes})")

    images = (raw_images.astype(np.float32) / 255.0)[:, None, :, :]
    logger.info("loaded %d examples from %s", len(images), images_file)
    return LabeledDataset(images, raw_labels.astype(np.int64), num_classes)


def _find(directories: typing.Sequence[str], name: str) -> typing.Optional[str]:
    for d in directories:
        for candidate in (name, name + '.gz'):
            path = os.path.join(d, candidate)
            if os.path.exists(path):
                return path
    return None


def load_dataset(name: str, data_dir: str, split: str = 'train') -> LabeledDataset:
    """Load the ``split`` half of MNIST or FashionMNIST from
       ``data_dir/<name>/`` or from ``data_dir`` itself."""
    if name not in DATASETS:
        raise DataError(f"unknown dataset {name} (supported datasets: {', '.join(DATASETS)})")
    directories = [os.path.join(data_dir, name), data_dir]
    paths = []
    for fn in FILES[split]:
        path = _find(directories, fn)
        if path is None:
            raise DataError(f"could not find {fn} in {' or '.join(directories)}")
        paths.append(path)
    return load_idx(paths[0], paths[1])
