"""Layer specifications and their forward/backward kernels."""

import abc
import dataclasses
import math
import typing

import numpy as np
import numpy.typing as npt
import typing_extensions
from numpy.lib.stride_tricks import sliding_window_view

from ..util import dataclass_args

FloatArray: typing_extensions.TypeAlias = npt.NDArray[np.floating[typing.Any]]
Shape: typing_extensions.TypeAlias = typing.Tuple[int, ...]


class Layer(metaclass=abc.ABCMeta):
    @abc.abstractmethod
    def output_shape(self, input_shape: Shape) -> Shape:
        """Return the shape of one output example, or raise ValueError if
           ``input_shape`` cannot be fed to the layer."""
        pass

    def param_shapes(self) -> typing.Optional[typing.Tuple[Shape, Shape]]:
        """Return the shapes of the weight and bias arrays, or None for
           layers without parameters."""
        return None

    def fans(self) -> typing.Tuple[int, int]:
        return 0, 0

    @abc.abstractmethod
    def forward(self, x: FloatArray, w: typing.Optional[FloatArray],
                b: typing.Optional[FloatArray]) -> typing.Tuple[FloatArray, typing.Any]:
        """Process a batch; the second element is passed back to ``backward``."""
        pass

    @abc.abstractmethod
    def backward(self, dy: FloatArray, cache: typing.Any, w: typing.Optional[FloatArray]
                 ) -> typing.Tuple[FloatArray, typing.Optional[FloatArray], typing.Optional[FloatArray]]:
        """Return the gradients with respect to the input, weight and bias."""
        pass

    @property
    def has_params(self) -> bool:
        return self.param_shapes() is not None


@dataclasses.dataclass(frozen=True, **dataclass_args)
class Convolution(Layer):
    in_channels: int
    out_channels: int
    kernel: typing.Tuple[int, int]
    stride: int = 1

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 3 or input_shape[0] != self.in_channels:
            raise ValueError(f"convolution expects ({self.in_channels}, H, W), got {input_shape}")
        kh, kw = self.kernel
        _, h, w = input_shape
        if h < kh or w < kw:
            raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{w}")
        return (self.out_channels, (h - kh) // self.stride + 1, (w - kw) // self.stride + 1)

    def param_shapes(self) -> typing.Optional[typing.Tuple[Shape, Shape]]:
        return (self.out_channels, self.in_channels, *self.kernel), (self.out_channels,)

    def fans(self) -> typing.Tuple[int, int]:
        area = self.kernel[0] * self.kernel[1]
        return self.in_channels * area, self.out_channels * area

    def _windows(self, x: FloatArray) -> FloatArray:
        s = self.stride
        return sliding_window_view(x, self.kernel, axis=(2, 3))[:, :, ::s, ::s]

    def forward(self, x: FloatArray, w: typing.Optional[FloatArray],
                b: typing.Optional[FloatArray]) -> typing.Tuple[FloatArray, typing.Any]:
        assert w is not None and b is not None
        windows = self._windows(x)
        # (n, c, oh, ow, kh, kw) x (o, c, kh, kw) -> (n, oh, ow, o)
        y = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
        y = np.ascontiguousarray(y.transpose(0, 3, 1, 2)) + b[None, :, None, None]
        return y, (x.shape, windows)

    def backward(self, dy: FloatArray, cache: typing.Any, w: typing.Optional[FloatArray]
                 ) -> typing.Tuple[FloatArray, typing.Optional[FloatArray], typing.Optional[FloatArray]]:
        assert w is not None
        x_shape, windows = cache
        s = self.stride
        kh, kw = self.kernel
        _, _, oh, ow = dy.shape
        db = dy.sum(axis=(0, 2, 3))
        dw = np.tensordot(dy, windows, axes=([0, 2, 3], [0, 2, 3]))
        dx = np.zeros(x_shape, dtype=np.result_type(dy, w))
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(dy, w[:, :, i, j], axes=([1], [0]))
                dx[:, :, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s] += contrib.transpose(0, 3, 1, 2)
        return dx, dw, db


@dataclasses.dataclass(frozen=True, **dataclass_args)
class MaxPool(Layer):
    window: int
    stride: int

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 3:
            raise ValueError(f"max pooling expects (C, H, W), got {input_shape}")
        c, h, w = input_shape
        if h < self.window or w < self.window:
            raise ValueError(f"pooling window {self.window} larger than input {h}x{w}")
        return (c, (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1)

    def forward(self, x: FloatArray, w: typing.Optional[FloatArray],
                b: typing.Optional[FloatArray]) -> typing.Tuple[FloatArray, typing.Any]:
        k, s = self.window, self.stride
        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        flat = windows.reshape(*windows.shape[:4], k * k)
        # argmax picks the first maximum, so ties route the gradient deterministically
        idx = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, dy: FloatArray, cache: typing.Any, w: typing.Optional[FloatArray]
                 ) -> typing.Tuple[FloatArray, typing.Optional[FloatArray], typing.Optional[FloatArray]]:
        x_shape, idx = cache
        k, s = self.window, self.stride
        _, _, oh, ow = dy.shape
        dx = np.zeros(x_shape, dtype=dy.dtype)
        for p in range(k * k):
            i, j = divmod(p, k)
            dx[:, :, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s] += np.where(idx == p, dy, 0)
        return dx, None, None


@dataclasses.dataclass(frozen=True, **dataclass_args)
class Dense(Layer):
    in_dim: int
    out_dim: int

    def output_shape(self, input_shape: Shape) -> Shape:
        if math.prod(input_shape) != self.in_dim:
            raise ValueError(f"dense layer expects {self.in_dim} inputs, got shape {input_shape}")
        return (self.out_dim,)

    def param_shapes(self) -> typing.Optional[typing.Tuple[Shape, Shape]]:
        return (self.out_dim, self.in_dim), (self.out_dim,)

    def fans(self) -> typing.Tuple[int, int]:
        return self.in_dim, self.out_dim

    def forward(self, x: FloatArray, w: typing.Optional[FloatArray],
                b: typing.Optional[FloatArray]) -> typing.Tuple[FloatArray, typing.Any]:
        assert w is not None and b is not None
        flat = x.reshape(x.shape[0], -1)
        return flat @ w.T + b, (x.shape, flat)

    def backward(self, dy: FloatArray, cache: typing.Any, w: typing.Optional[FloatArray]
                 ) -> typing.Tuple[FloatArray, typing.Optional[FloatArray], typing.Optional[FloatArray]]:
        assert w is not None
        x_shape, flat = cache
        return (dy @ w).reshape(x_shape), dy.T @ flat, dy.sum(axis=0)


@dataclasses.dataclass(frozen=True, **dataclass_args)
class ReLU(Layer):
    def output_shape(self, input_shape: Shape) -> Shape:
        return input_shape

    def forward(self, x: FloatArray, w: typing.Optional[FloatArray],
                b: typing.Optional[FloatArray]) -> typing.Tuple[FloatArray, typing.Any]:
        mask = x > 0
        return np.where(mask, x, 0).astype(x.dtype, copy=False), mask

    def backward(self, dy: FloatArray, cache: typing.Any, w: typing.Optional[FloatArray]
                 ) -> typing.Tuple[FloatArray, typing.Optional[FloatArray], typing.Optional[FloatArray]]:
        return np.where(cache, dy, 0).astype(dy.dtype, copy=False), None, None


@dataclasses.dataclass(frozen=True, **dataclass_args)
class Flatten(Layer):
    def output_shape(self, input_shape: Shape) -> Shape:
        return (math.prod(input_shape),)

    def forward(self, x: FloatArray, w: typing.Optional[FloatArray],
                b: typing.Optional[FloatArray]) -> typing.Tuple[FloatArray, typing.Any]:
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy: FloatArray, cache: typing.Any, w: typing.Optional[FloatArray]
                 ) -> typing.Tuple[FloatArray, typing.Optional[FloatArray], typing.Optional[FloatArray]]:
        return dy.reshape(cache), None, None
