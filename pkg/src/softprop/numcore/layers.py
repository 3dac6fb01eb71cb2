"""Parameter containers: dense MLP and conv stack with seeded fan-in init."""

from __future__ import annotations

import numpy as np

from softprop.numcore import ops
from softprop.numcore.tensor import DEFAULT_DTYPE, Tensor


def fan_in_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Anything that owns named parameters."""

    def named_parameters(self, prefix: str = "") -> list:
        raise NotImplementedError

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


class MLP(Module):
    """Share-weight perceptron: ReLU on hidden layers, linear output layer.

    ``widths`` lists the input width followed by each layer's output width, so
    ``MLP([3, 256, 512])`` has two weight layers.
    """

    def __init__(self, widths, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        widths = [int(w) for w in widths]
        if len(widths) < 2:
            raise ValueError("an MLP needs an input width and at least one layer")
        self.widths = widths
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            self.weights.append(Tensor(fan_in_uniform(rng, (fan_in, fan_out), fan_in, dtype), requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True))

    def named_parameters(self, prefix: str = "") -> list:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out += [(f"{prefix}{i}.weight", w), (f"{prefix}{i}.bias", b)]
        return out

    def __call__(self, x: Tensor, start: int = 0) -> Tensor:
        """Apply layers ``start..end``; the caller handles layers before ``start``."""
        last = len(self.weights) - 1
        for i in range(start, last + 1):
            x = ops.linear(x, self.weights[i], self.biases[i])
            if i < last:
                x = ops.relu(x)
        return x


class ConvStack(Module):
    """``conv3x3 -> ReLU -> maxpool2x2`` stages on NHWC input."""

    def __init__(self, in_channels: int, channels, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        self.kernels, self.biases = [], []
        c = in_channels
        for o in channels:
            fan_in = c * 9
            self.kernels.append(Tensor(fan_in_uniform(rng, (o, c, 3, 3), fan_in, dtype), requires_grad=True))
            self.biases.append(Tensor(np.zeros(o, dtype=dtype), requires_grad=True))
            c = o

    def named_parameters(self, prefix: str = "") -> list:
        out = []
        for i, (k, b) in enumerate(zip(self.kernels, self.biases)):
            out += [(f"{prefix}{i}.kernel", k), (f"{prefix}{i}.bias", b)]
        return out

    def __call__(self, x: Tensor) -> Tensor:
        for k, b in zip(self.kernels, self.biases):
            x = ops.max_pool2x2(ops.relu(ops.conv2d(x, k, b, stride=1, padding=1, channels_last=True)), channels_last=True)
        return x
