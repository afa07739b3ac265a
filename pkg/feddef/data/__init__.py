"""Labeled image datasets, client partitioning and backdoor poisoning."""

import dataclasses
import logging
import math
import typing

import numpy as np
import numpy.typing as npt

from ..util import FedDefError, dataclass_args

logger = logging.getLogger(__name__)

ImageArray = npt.NDArray[np.float32]
LabelArray = npt.NDArray[np.int64]


class DataError(FedDefError):
    pass


class TriggerError(DataError):
    pass


@dataclasses.dataclass(frozen=True, eq=False, **dataclass_args)
class LabeledDataset:
    images: ImageArray
    labels: LabelArray
    num_classes: int = 10
    # the n_k announced to the aggregator; defaults to the stored length
    reported_example_count: typing.Optional[int] = None

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise DataError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise DataError("pixel values outside [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels outside [0, {self.num_classes})")
        if self.reported_example_count is None:
            object.__setattr__(self, 'reported_example_count', len(self.labels))
        elif self.reported_example_count < 0:
            raise DataError(f"negative example count {self.reported_example_count}")
        self.images.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> typing.Tuple[int, ...]:
        return typing.cast(typing.Tuple[int, ...], self.images.shape[1:])

    @property
    def announced(self) -> int:
        assert self.reported_example_count is not None
        return self.reported_example_count

    def subset(self, indices: npt.ArrayLike) -> 'LabeledDataset':
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx], self.num_classes)

    def take(self, n: int) -> 'LabeledDataset':
        return self.subset(np.arange(min(n, len(self))))


@dataclasses.dataclass(frozen=True, **dataclass_args)
class PoisonSpec:
    trigger_size: int = 4
    trigger_origin: typing.Tuple[int, int] = (0, 0)
    trigger_value: float = 1.0
    target_label: int = 0
    scale_factor: int = 1
    poison_fraction: float = 1.0
    replicate_data: bool = False

    def __post_init__(self) -> None:
        if self.trigger_size < 1:
            raise TriggerError(f"trigger size must be positive: {self.trigger_size}")
        if not 0 <= self.trigger_value <= 1:
            raise TriggerError(f"trigger value outside [0, 1]: {self.trigger_value}")
        if self.scale_factor < 1:
            raise TriggerError(f"scale factor must be at least 1: {self.scale_factor}")
        if not 0 < self.poison_fraction <= 1:
            raise TriggerError(f"poison fraction outside (0, 1]: {self.poison_fraction}")
        if self.target_label < 0:
            raise TriggerError(f"negative target label: {self.target_label}")

    def check_fits(self, image_shape: typing.Sequence[int]) -> None:
        _, h, w = image_shape
        row, col = self.trigger_origin
        if row < 0 or col < 0 or row + self.trigger_size > h or col + self.trigger_size > w:
            raise TriggerError(f"{self.trigger_size}x{self.trigger_size} trigger at {self.trigger_origin} "
                               f"does not fit a {h}x{w} image")


@dataclasses.dataclass(frozen=True, eq=False, **dataclass_args)
class PartitionPlan:
    client_count: int
    assignment: npt.NDArray[np.int64]
    order: npt.NDArray[np.int64]
    seed: int

    def indices(self, client: int) -> npt.NDArray[np.int64]:
        """Examples of ``client``, in the order of the seeded permutation."""
        return self.order[self.assignment[self.order] == client]


def plan_partition(n: int, K: int, seed: int) -> PartitionPlan:
    if K < 1:
        raise DataError(f"need at least one client, got {K}")
    if K > n:
        raise DataError(f"cannot split {n} examples across {K} clients")
    order = np.random.default_rng(seed).permutation(n).astype(np.int64)
    assignment = np.empty(n, dtype=np.int64)
    for client, chunk in enumerate(np.array_split(order, K)):
        assignment[chunk] = client
    return PartitionPlan(K, assignment, order, seed)


def partition_random(data: LabeledDataset, K: int, seed: int) -> typing.List[LabeledDataset]:
    plan = plan_partition(len(data), K, seed)
    parts = [data.subset(plan.indices(k)) for k in range(K)]
    logger.debug("partitioned %d examples across %d clients (sizes %d..%d)",
                 len(data), K, min(map(len, parts)), max(map(len, parts)))
    return parts


def apply_trigger_batch(images: ImageArray, spec: PoisonSpec) -> ImageArray:
    spec.check_fits(images.shape[1:])
    row, col = spec.trigger_origin
    s = spec.trigger_size
    out = images.copy()
    out[:, :, row:row + s, col:col + s] = spec.trigger_value
    return out


def apply_trigger(image: ImageArray, spec: PoisonSpec) -> ImageArray:
    if image.ndim != 3:
        raise TriggerError(f"expected a (C, H, W) image, got shape {image.shape}")
    return apply_trigger_batch(image[None], spec)[0]


def poison_client(data: LabeledDataset, spec: PoisonSpec) -> LabeledDataset:
    """Stamp the trigger and flip the labels of (a fraction of) ``data``,
       then inflate the announced example count by the scale factor."""
    n = len(data)
    if n == 0:
        raise DataError("cannot poison an empty dataset")
    if spec.target_label >= data.num_classes:
        raise TriggerError(f"target label {spec.target_label} outside [0, {data.num_classes})")

    count = max(1, math.ceil(spec.poison_fraction * n))
    images = data.images.copy()
    labels = data.labels.copy()
    images[:count] = apply_trigger_batch(images[:count], spec)
    labels[:count] = spec.target_label

    if spec.replicate_data and spec.scale_factor > 1:
        images = np.tile(images, (spec.scale_factor, 1, 1, 1))
        labels = np.tile(labels, spec.scale_factor)
    return LabeledDataset(images, labels, data.num_classes,
                          reported_example_count=n * spec.scale_factor)


def make_synthetic(num: int, shape: typing.Tuple[int, int, int] = (1, 28, 28),
                   num_classes: int = 10, seed: int = 0) -> LabeledDataset:
    """Class-conditional Gaussian blobs: class c is a bright spot centered
       on the c-th of ``num_classes`` points spread on a circle."""
    rng = np.random.default_rng(seed)
    c, h, w = shape
    labels = np.arange(num, dtype=np.int64) % num_classes
    rng.shuffle(labels)

    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    radius = 0.3 * min(h, w)
    centers = np.stack([(h - 1) / 2 + radius * np.sin(angles),
                        (w - 1) / 2 + radius * np.cos(angles)], axis=1)
    sigma = max(1.0, min(h, w) / 10)

    jitter = rng.normal(0, 0.5, size=(num, 2))
    cy = (centers[labels, 0] + jitter[:, 0])[:, None, None]
    cx = (centers[labels, 1] + jitter[:, 1])[:, None, None]
    yy, xx = np.mgrid[0:h, 0:w]
    blobs = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
    blobs = blobs + rng.normal(0, 0.05, size=blobs.shape)
    images = np.clip(blobs, 0, 1).astype(np.float32)
    images = np.repeat(images[:, None], c, axis=1)
    return LabeledDataset(images, labels, num_classes)
