"""Small neural-network engine: architectures, parameters, forward and
   backward passes, and mini-batch SGD."""

import dataclasses
import logging
import math
import typing

import numpy as np
import numpy.typing as npt

from ..util import FedDefError, dataclass_args, rng_for
if typing.TYPE_CHECKING:
    from ..data import LabeledDataset
from .layers import Convolution, Dense, FloatArray, Flatten, Layer, MaxPool, ReLU, Shape

__all__ = [
    'ActivationTrace', 'Convolution', 'Dense', 'Flatten', 'Layer', 'MaxPool', 'ModelArchitecture',
    'ParameterSet', 'ReLU', 'ShapeError', 'TrainingError', 'TrainingHyperparams',
    'cross_entropy_grad', 'forward', 'forward_batch', 'init_params', 'loss_and_gradients',
    'predict', 'predict_batch', 'train_local',
]

logger = logging.getLogger(__name__)


class ShapeError(FedDefError):
    pass


class TrainingError(FedDefError):
    pass


@dataclasses.dataclass(frozen=True, **dataclass_args)
class ModelArchitecture:
    layers: typing.Tuple[Layer, ...]
    input_shape: Shape
    num_classes: int
    layer_shapes: typing.Tuple[Shape, ...] = dataclasses.field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, 'input_shape', tuple(self.input_shape))
        shapes = [self.input_shape]
        for n, layer in enumerate(self.layers):
            try:
                shapes.append(layer.output_shape(shapes[-1]))
            except ValueError as e:
                raise ShapeError(f"layer {n} ({type(layer).__name__}): {e}")
        if shapes[-1] != (self.num_classes,):
            raise ShapeError(f"final layer produces {shapes[-1]}, expected ({self.num_classes},)")
        if not any(isinstance(layer, ReLU) for layer in self.layers):
            raise ShapeError("architecture has no ReLU layer to fingerprint")
        object.__setattr__(self, 'layer_shapes', tuple(shapes))

    def parametric_layers(self) -> typing.Iterator[typing.Tuple[int, Layer]]:
        return ((n, layer) for n, layer in enumerate(self.layers) if layer.has_params)

    @property
    def neuron_count(self) -> int:
        return sum(math.prod(self.layer_shapes[n + 1])
                   for n, layer in enumerate(self.layers) if isinstance(layer, ReLU))


@dataclasses.dataclass(frozen=True, eq=False, **dataclass_args)
class ParameterSet:
    """Weights and biases of every parametric layer, in architecture order."""
    weights: typing.Tuple[FloatArray, ...]
    biases: typing.Tuple[FloatArray, ...]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ShapeError("weights and biases differ in length")
        for a in self.arrays():
            a.flags.writeable = False

    def arrays(self) -> typing.Iterator[FloatArray]:
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    @property
    def total_parameter_count(self) -> int:
        return sum(a.size for a in self.arrays())

    @property
    def dtype(self) -> np.dtype[typing.Any]:
        return self.weights[0].dtype

    def shapes(self) -> typing.List[Shape]:
        return [a.shape for a in self.arrays()]

    def flatten(self, dtype: typing.Optional[npt.DTypeLike] = None) -> FloatArray:
        return np.concatenate([a.ravel() for a in self.arrays()]).astype(
            self.dtype if dtype is None else dtype, copy=False)

    @classmethod
    def from_arrays(cls, arrays: typing.Sequence[FloatArray]) -> 'ParameterSet':
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]))

    @classmethod
    def from_flat(cls, template: 'ParameterSet', flat: FloatArray) -> 'ParameterSet':
        if flat.size != template.total_parameter_count:
            raise ShapeError(f"expected {template.total_parameter_count} values, got {flat.size}")
        out = []
        start = 0
        for a in template.arrays():
            out.append(flat[start:start + a.size].reshape(a.shape).astype(template.dtype))
            start += a.size
        return cls.from_arrays(out)

    def is_finite(self) -> bool:
        return all(bool(np.isfinite(a).all()) for a in self.arrays())

    def same_shape(self, other: 'ParameterSet') -> bool:
        return self.shapes() == other.shapes()

    def equals(self, other: 'ParameterSet') -> bool:
        """Bitwise equality."""
        return self.same_shape(other) and all(
            a.dtype == b.dtype and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays(), other.arrays()))

    def check_compatible(self, arch: ModelArchitecture) -> None:
        expected: typing.List[Shape] = []
        for _, layer in arch.parametric_layers():
            shapes = layer.param_shapes()
            assert shapes is not None
            expected += shapes
        if self.shapes() != expected:
            raise ShapeError(f"parameter shapes {self.shapes()} do not match architecture {expected}")


@dataclasses.dataclass(frozen=True, eq=False, **dataclass_args)
class ActivationTrace:
    layers: typing.Tuple[FloatArray, ...]

    @property
    def neuron_count(self) -> int:
        return sum(a.size for a in self.layers)

    def flat(self) -> FloatArray:
        return np.concatenate([a.ravel() for a in self.layers])


@dataclasses.dataclass(frozen=True, **dataclass_args)
class TrainingHyperparams:
    learning_rate: float
    epochs: int
    batch_size: int
    seed: int
    momentum: float = 0.0

    def __post_init__(self) -> None:
        # a zero learning rate is accepted so that training can be a no-op
        if not self.learning_rate >= 0:
            raise TrainingError(f"learning rate must not be negative: {self.learning_rate}")
        if self.epochs < 1:
            raise TrainingError(f"epochs must be at least 1: {self.epochs}")
        if self.batch_size < 1:
            raise TrainingError(f"batch size must be at least 1: {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise TrainingError(f"momentum must be in [0, 1): {self.momentum}")

    def with_seed(self, seed: int) -> 'TrainingHyperparams':
        return dataclasses.replace(self, seed=seed)


def init_params(arch: ModelArchitecture, seed: int, dtype: npt.DTypeLike = np.float32) -> ParameterSet:
    rng = np.random.default_rng(seed)
    arrays = []
    for _, layer in arch.parametric_layers():
        shapes = layer.param_shapes()
        assert shapes is not None
        fan_in, fan_out = layer.fans()
        bound = math.sqrt(6 / (fan_in + fan_out))
        arrays.append(rng.uniform(-bound, bound, size=shapes[0]).astype(dtype))
        arrays.append(np.zeros(shapes[1], dtype=dtype))
    return ParameterSet.from_arrays(arrays)


def _run_layers(arch: ModelArchitecture, weights: typing.Sequence[FloatArray],
                biases: typing.Sequence[FloatArray], x: FloatArray
                ) -> typing.Tuple[FloatArray, typing.List[typing.Any], typing.List[FloatArray]]:
    caches = []
    traces = []
    p = 0
    for layer in arch.layers:
        if layer.has_params:
            x, cache = layer.forward(x, weights[p], biases[p])
            p += 1
        else:
            x, cache = layer.forward(x, None, None)
        caches.append(cache)
        if isinstance(layer, ReLU):
            traces.append(x)
    return x, caches, traces


def _check_batch(arch: ModelArchitecture, inputs: FloatArray) -> None:
    if inputs.shape[1:] != tuple(arch.input_shape):
        raise ShapeError(f"input shape {inputs.shape[1:]} does not match architecture input {arch.input_shape}")


def forward_batch(arch: ModelArchitecture, params: ParameterSet, inputs: FloatArray
                  ) -> typing.Tuple[FloatArray, typing.List[FloatArray]]:
    """Return the logits of each input and, for each ReLU layer, the
       post-activation values of each input."""
    _check_batch(arch, inputs)
    logits, _, traces = _run_layers(arch, params.weights, params.biases, inputs)
    return logits, traces


def forward(arch: ModelArchitecture, params: ParameterSet, input: FloatArray
            ) -> typing.Tuple[FloatArray, ActivationTrace]:
    if input.shape != tuple(arch.input_shape):
        raise ShapeError(f"input shape {input.shape} does not match architecture input {arch.input_shape}")
    logits, traces = forward_batch(arch, params, input[None])
    return logits[0], ActivationTrace(tuple(t[0] for t in traces))


def predict_batch(arch: ModelArchitecture, params: ParameterSet, inputs: FloatArray,
                  batch_size: int = 256) -> npt.NDArray[np.int64]:
    _check_batch(arch, inputs)
    out = np.empty(len(inputs), dtype=np.int64)
    for start in range(0, len(inputs), batch_size):
        logits, _ = forward_batch(arch, params, inputs[start:start + batch_size])
        # argmax returns the first maximum: ties go to the smallest class
        out[start:start + batch_size] = logits.argmax(axis=1)
    return out


def predict(arch: ModelArchitecture, params: ParameterSet, input: FloatArray) -> int:
    logits, _ = forward(arch, params, input)
    return int(logits.argmax())


def _softmax(logits: FloatArray) -> FloatArray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return typing.cast(FloatArray, e / e.sum(axis=-1, keepdims=True))


def cross_entropy_grad(logits: FloatArray, label: int) -> typing.Tuple[float, FloatArray]:
    if not 0 <= label < len(logits):
        raise ShapeError(f"label {label} out of range for {len(logits)} classes")
    shifted = logits - logits.max()
    lse = np.log(np.exp(shifted).sum())
    loss = float(lse - shifted[label])
    dlogits = _softmax(logits)
    dlogits[label] -= 1
    return loss, dlogits


def _loss_and_gradients(arch: ModelArchitecture, weights: typing.Sequence[FloatArray],
                        biases: typing.Sequence[FloatArray], images: FloatArray,
                        labels: npt.NDArray[np.integer[typing.Any]]
                        ) -> typing.Tuple[float, typing.List[FloatArray], typing.List[FloatArray]]:
    n = len(images)
    logits, caches, _ = _run_layers(arch, weights, biases, images)
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float((lse - shifted[np.arange(n), labels]).mean())

    dy = _softmax(logits)
    dy[np.arange(n), labels] -= 1
    dy /= n

    dweights: typing.List[FloatArray] = []
    dbiases: typing.List[FloatArray] = []
    p = len(weights)
    for layer, cache in zip(reversed(arch.layers), reversed(caches)):
        if layer.has_params:
            p -= 1
            dy, dw, db = layer.backward(dy, cache, weights[p])
            assert dw is not None and db is not None
            dweights.append(dw.astype(weights[p].dtype, copy=False))
            dbiases.append(db.astype(biases[p].dtype, copy=False))
        else:
            dy, _, _ = layer.backward(dy, cache, None)
    dweights.reverse()
    dbiases.reverse()
    return loss, dweights, dbiases


def loss_and_gradients(arch: ModelArchitecture, params: ParameterSet, images: FloatArray,
                       labels: npt.NDArray[np.integer[typing.Any]]) -> typing.Tuple[float, ParameterSet]:
    """Return the mean cross-entropy loss over the batch and its gradient
       with respect to every parameter."""
    _check_batch(arch, images)
    loss, dw, db = _loss_and_gradients(arch, params.weights, params.biases, images, labels)
    return loss, ParameterSet(tuple(dw), tuple(db))


def train_local(arch: ModelArchitecture, params: ParameterSet, data: 'LabeledDataset',
                hp: TrainingHyperparams) -> ParameterSet:
    """Run ``hp.epochs`` passes of mini-batch SGD over ``data`` starting
       from ``params``, which is left untouched."""
    n = len(data)
    if n == 0:
        raise TrainingError("cannot train on an empty dataset")
    _check_batch(arch, data.images)
    params.check_compatible(arch)
    if hp.learning_rate == 0:
        return params

    weights = [w.copy() for w in params.weights]
    biases = [b.copy() for b in params.biases]
    velocity = [np.zeros_like(a) for a in params.arrays()] if hp.momentum else []

    for epoch in range(hp.epochs):
        order = rng_for(hp.seed, epoch).permutation(n)
        total = 0.0
        for batch, start in enumerate(range(0, n, hp.batch_size)):
            idx = order[start:start + hp.batch_size]
            loss, dw, db = _loss_and_gradients(arch, weights, biases, data.images[idx], data.labels[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch + 1}, batch {batch + 1}")
            total += loss * len(idx)

            for k, (param, grad) in enumerate(zip(_interleave(weights, biases), _interleave(dw, db))):
                if velocity:
                    velocity[k] *= hp.momentum
                    velocity[k] += grad
                    grad = velocity[k]
                param -= hp.learning_rate * grad
        logger.debug("epoch %d: mean loss %.4f", epoch + 1, total / n)

    result = ParameterSet(tuple(weights), tuple(biases))
    if not result.is_finite():
        raise TrainingError(f"non-finite parameters after {hp.epochs} epochs")
    return result


def _interleave(a: typing.Sequence[FloatArray], b: typing.Sequence[FloatArray]) -> typing.Iterator[FloatArray]:
    for x, y in zip(a, b):
        yield x
        yield y
