import pytest

import numpy as np

from feddef.data import (
    DataError, LabeledDataset, PoisonSpec, TriggerError,
    apply_trigger, apply_trigger_batch, make_synthetic, partition_random, plan_partition, poison_client
)
from feddef.nn import TrainingHyperparams, init_params, predict_batch, train_local
from feddef.nn.profiles import fast_mlp


@pytest.fixture
def mnist_like() -> LabeledDataset:
    return make_synthetic(100, (1, 28, 28), 10, seed=0)


class TestTrigger:
    def test_block(self) -> None:
        """Check that the default trigger is a 4x4 white square in the corner."""
        image = np.zeros((1, 28, 28), dtype=np.float32)
        stamped = apply_trigger(image, PoisonSpec())
        assert int((stamped == 1.0).sum()) == 16
        assert (stamped[0, :4, :4] == 1.0).all()
        assert not image.any()

    def test_idempotent(self, mnist_like: LabeledDataset) -> None:
        spec = PoisonSpec(trigger_origin=(10, 3), trigger_value=0.5)
        once = apply_trigger_batch(mnist_like.images, spec)
        assert (apply_trigger_batch(once, spec) == once).all()
        outside = np.ones((28, 28), dtype=bool)
        outside[10:14, 3:7] = False
        assert (once[:, :, outside] == mnist_like.images[:, :, outside]).all()

    def test_every_channel(self) -> None:
        image = np.zeros((3, 6, 6), dtype=np.float32)
        stamped = apply_trigger(image, PoisonSpec(trigger_size=2, trigger_origin=(4, 4)))
        assert int(stamped.sum()) == 12

    def test_does_not_fit(self) -> None:
        image = np.zeros((1, 28, 28), dtype=np.float32)
        with pytest.raises(TriggerError):
            apply_trigger(image, PoisonSpec(trigger_origin=(25, 0)))
        with pytest.raises(TriggerError):
            apply_trigger(image, PoisonSpec(trigger_size=29))
        with pytest.raises(TriggerError):
            apply_trigger(image[0], PoisonSpec())

    def test_invalid_spec(self) -> None:
        with pytest.raises(TriggerError):
            PoisonSpec(scale_factor=0)
        with pytest.raises(TriggerError):
            PoisonSpec(trigger_value=2.0)
        with pytest.raises(TriggerError):
            PoisonSpec(poison_fraction=0.0)


class TestPoison:
    def test_labels_and_count(self, mnist_like: LabeledDataset) -> None:
        """Check label flipping and the inflated example count."""
        poisoned = poison_client(mnist_like, PoisonSpec(target_label=7, scale_factor=20))
        assert (poisoned.labels == 7).all()
        assert len(poisoned) == len(mnist_like)
        assert poisoned.announced == 20 * len(mnist_like)
        assert (poisoned.images[:, 0, :4, :4] == 1.0).all()
        assert mnist_like.announced == len(mnist_like)

    def test_scale_one(self, mnist_like: LabeledDataset) -> None:
        assert poison_client(mnist_like, PoisonSpec()).announced == len(mnist_like)

    def test_fraction(self, mnist_like: LabeledDataset) -> None:
        poisoned = poison_client(mnist_like, PoisonSpec(poison_fraction=0.25, target_label=3))
        assert (poisoned.labels[:25] == 3).all()
        assert (poisoned.labels[25:] == mnist_like.labels[25:]).all()
        assert (poisoned.images[25:] == mnist_like.images[25:]).all()

    def test_replicate(self, mnist_like: LabeledDataset) -> None:
        poisoned = poison_client(mnist_like, PoisonSpec(scale_factor=3, replicate_data=True))
        assert len(poisoned) == 3 * len(mnist_like)
        assert poisoned.announced == 3 * len(mnist_like)

    def test_errors(self, mnist_like: LabeledDataset) -> None:
        with pytest.raises(TriggerError):
            poison_client(mnist_like, PoisonSpec(target_label=10))
        with pytest.raises(DataError):
            poison_client(mnist_like.take(0), PoisonSpec())


class TestPartition:
    def test_cover(self) -> None:
        """Check that the shards are disjoint, cover every example and differ
           in size by at most one."""
        plan = plan_partition(103, 10, 42)
        shards = [plan.indices(k) for k in range(10)]
        joined = np.concatenate(shards)
        assert sorted(joined.tolist()) == list(range(103))
        sizes = [len(s) for s in shards]
        assert max(sizes) - min(sizes) <= 1

    def test_deterministic(self) -> None:
        a = plan_partition(50, 5, 1)
        b = plan_partition(50, 5, 1)
        assert (a.assignment == b.assignment).all()
        assert not (a.assignment == plan_partition(50, 5, 2).assignment).all()

    def test_datasets(self, mnist_like: LabeledDataset) -> None:
        parts = partition_random(mnist_like, 4, 0)
        assert [len(p) for p in parts] == [25, 25, 25, 25]
        assert sum(int(p.labels.sum()) for p in parts) == int(mnist_like.labels.sum())

    def test_single_client(self, mnist_like: LabeledDataset) -> None:
        (part,) = partition_random(mnist_like, 1, 0)
        assert sorted(part.labels.tolist()) == sorted(mnist_like.labels.tolist())

    def test_errors(self) -> None:
        with pytest.raises(DataError):
            plan_partition(5, 6, 0)
        with pytest.raises(DataError):
            plan_partition(5, 0, 0)


class TestDataset:
    def test_validation(self) -> None:
        images = np.zeros((2, 1, 4, 4), dtype=np.float32)
        with pytest.raises(DataError):
            LabeledDataset(images, np.zeros(3, dtype=np.int64))
        with pytest.raises(DataError):
            LabeledDataset(images + 2, np.zeros(2, dtype=np.int64))
        with pytest.raises(DataError):
            LabeledDataset(images, np.array([0, 10]))
        with pytest.raises(DataError):
            LabeledDataset(images[0], np.zeros(1, dtype=np.int64))

    def test_subset(self, mnist_like: LabeledDataset) -> None:
        sub = mnist_like.subset([3, 1])
        assert sub.labels.tolist() == [mnist_like.labels[3], mnist_like.labels[1]]
        assert len(mnist_like.take(10)) == 10
        assert len(mnist_like.take(1000)) == 100

    def test_synthetic(self) -> None:
        """Check that synthetic data is balanced, in range and reproducible."""
        data = make_synthetic(200, (1, 28, 28), 10, seed=5)
        assert np.bincount(data.labels).tolist() == [20] * 10
        assert data.images.min() >= 0 and data.images.max() <= 1
        assert data.image_shape == (1, 28, 28)
        again = make_synthetic(200, (1, 28, 28), 10, seed=5)
        assert (again.images == data.images).all()

    def test_synthetic_separable(self) -> None:
        """Check that the blob classes are easy to tell apart."""
        data = make_synthetic(400, (1, 28, 28), 10, seed=2)
        arch = fast_mlp(data.image_shape, 10)
        hp = TrainingHyperparams(learning_rate=0.05, epochs=20, batch_size=16, seed=0)
        trained = train_local(arch, init_params(arch, 0), data, hp)
        accuracy = (predict_batch(arch, trained, data.images) == data.labels).mean()
        assert accuracy >= 0.9
