import gzip
import os
import pytest
import struct
import typing

import numpy as np

from feddef.data import DataError
from feddef.data.idx import (
    IMAGE_MAGIC, LABEL_MAGIC, IDXParseError, load_dataset, load_idx, read_idx_images, read_idx_labels
)


def idx_bytes(magic: int, array: np.ndarray) -> bytes:
    return struct.pack(f">{1 + array.ndim}I", magic, *array.shape) + array.astype(np.uint8).tobytes()


@pytest.fixture
def pair(tmp_path: typing.Any) -> typing.Tuple[str, str]:
    images = np.arange(5 * 28 * 28).reshape(5, 28, 28) % 256
    labels = np.array([0, 1, 2, 9, 4])
    images_file = str(tmp_path / "train-images-idx3-ubyte")
    labels_file = str(tmp_path / "train-labels-idx1-ubyte")
    with open(images_file, "wb") as f:
        f.write(idx_bytes(IMAGE_MAGIC, images))
    with open(labels_file, "wb") as f:
        f.write(idx_bytes(LABEL_MAGIC, labels))
    return images_file, labels_file


class TestIDX:
    def test_load(self, pair: typing.Tuple[str, str]) -> None:
        """Check that pixels are scaled to [0, 1] and labels kept."""
        data = load_idx(*pair)
        assert len(data) == 5
        assert data.image_shape == (1, 28, 28)
        assert data.labels.tolist() == [0, 1, 2, 9, 4]
        assert data.images[0, 0, 0, 1] == pytest.approx(1 / 255)
        assert data.images.max() == 1.0

    def test_gzip(self, pair: typing.Tuple[str, str]) -> None:
        images_file, labels_file = pair
        with open(images_file, "rb") as f, gzip.open(images_file + ".gz", "wb") as g:
            g.write(f.read())
        data = load_idx(images_file + ".gz", labels_file)
        assert (data.images == load_idx(*pair).images).all()

    def test_bad_magic(self, pair: typing.Tuple[str, str]) -> None:
        images_file, _ = pair
        with pytest.raises(IDXParseError, match="magic"):
            read_idx_labels(images_file)

    def test_truncated(self, pair: typing.Tuple[str, str]) -> None:
        images_file, _ = pair
        with open(images_file, "rb") as f:
            data = f.read()
        with open(images_file, "wb") as f:
            f.write(data[:-1])
        with pytest.raises(IDXParseError, match="truncated file"):
            read_idx_images(images_file)
        with open(images_file, "wb") as f:
            f.write(data[:10])
        with pytest.raises(IDXParseError, match="truncated header"):
            read_idx_images(images_file)

    def test_trailing_bytes(self, pair: typing.Tuple[str, str]) -> None:
        _, labels_file = pair
        with open(labels_file, "ab") as f:
            f.write(b"\0")
        with pytest.raises(IDXParseError, match="trailing"):
            read_idx_labels(labels_file)

    def test_count_mismatch(self, pair: typing.Tuple[str, str], tmp_path: typing.Any) -> None:
        images_file, _ = pair
        short = str(tmp_path / "short")
        with open(short, "wb") as f:
            f.write(idx_bytes(LABEL_MAGIC, np.array([1, 2])))
        with pytest.raises(IDXParseError):
            load_idx(images_file, short)

    def test_image_size(self, pair: typing.Tuple[str, str], tmp_path: typing.Any) -> None:
        _, labels_file = pair
        small = str(tmp_path / "small")
        with open(small, "wb") as f:
            f.write(idx_bytes(IMAGE_MAGIC, np.zeros((5, 8, 8))))
        assert read_idx_images(small).shape == (5, 8, 8)
        with pytest.raises(IDXParseError, match="8x8, expected 28x28"):
            load_idx(small, labels_file)
        assert load_idx(small, labels_file, image_size=(8, 8)).image_shape == (1, 8, 8)

    def test_label_range(self, pair: typing.Tuple[str, str]) -> None:
        with pytest.raises(IDXParseError, match="label 9"):
            load_idx(*pair, num_classes=5)

    def test_load_dataset(self, pair: typing.Tuple[str, str], tmp_path: typing.Any) -> None:
        """Check the lookup of the standard file names."""
        images_file, labels_file = pair
        os.mkdir(tmp_path / "mnist")
        os.rename(images_file, tmp_path / "mnist" / "train-images-idx3-ubyte")
        os.rename(labels_file, tmp_path / "train-labels-idx1-ubyte")
        assert len(load_dataset('mnist', str(tmp_path))) == 5
        with pytest.raises(DataError):
            load_dataset('mnist', str(tmp_path), 'test')
        with pytest.raises(DataError):
            load_dataset('cifar', str(tmp_path))

    def test_mnist(self, mnist_dir: str) -> None:
        """Check the real MNIST training set."""
        data = load_dataset('mnist', mnist_dir)
        assert len(data) == 60000
        assert data.image_shape == (1, 28, 28)
        assert data.labels.min() == 0 and data.labels.max() == 9
