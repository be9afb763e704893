from __future__ import annotations
from typing import Dict, Iterator, List, Tuple
import numpy as np
from dvae import errors as err, const as k
from dvae.autodiff import ops
from dvae.autodiff.tensor import Tensor, default_dtype

NamedParams = List[Tuple[str, Tensor]]


def parameter(data: np.ndarray) -> Tensor:
    """trainable leaf in the current precision"""

    return Tensor(data, requires_grad=True, dtype=default_dtype())


def kaiming(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> Tensor:
    """kaiming normal, gain for leaky relu"""

    gain = np.sqrt(2.0 / (1.0 + k.LEAKY_SLOPE ** 2))
    return parameter(rng.standard_normal(shape) * gain / np.sqrt(fan_in))


class Module:
    """parameter container. attributes holding tensors or modules are discovered"""

    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self) -> Iterator[Tuple[str, Module]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> NamedParams:
        """stable, attribute-ordered (name, tensor) pairs"""

        out: NamedParams = []

        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((f"{prefix}{name}", value))

        for name, child in self.children():
            out.extend(child.named_parameters(prefix=f"{prefix}{name}."))

        return out

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> Module:
        self.training = mode

        for _, child in self.children():
            child.train(mode)

        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self):
        for param in self.parameters():
            param.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        """copy values in place; names and shapes must match exactly"""

        params = dict(self.named_parameters())
        missing = set(params) ^ set(state)

        if missing:
            raise err.ContractViolation(f"state mismatch on {sorted(missing)[:5]}")

        for name, param in params.items():
            value = np.asarray(state[name])

            if value.shape != param.shape:
                raise err.ContractViolation(f"{name}: shape {value.shape} != {param.shape}")

            param.data[...] = value


class Conv2d(Module):
    """odd-kernel conv, same padding"""

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        padding: str = "reflect",
    ):
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = kaiming(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        self.bias = parameter(np.zeros(out_channels))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, in_features: int, out_features: int):
        self.weight = kaiming(rng, (in_features, out_features), in_features)
        self.bias = parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    """normalises along one axis (channels for feature maps)"""

    def __init__(self, features: int, axis: int = -1):
        self.gain = parameter(np.ones(features))
        self.bias = parameter(np.zeros(features))
        self.axis = axis

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, axis=self.axis)


class Embedding(Module):
    def __init__(self, rng: np.random.Generator, count: int, dim: int):
        self.table = parameter(rng.standard_normal((count, dim)) * 0.02)

    def forward(self, indices: np.ndarray) -> Tensor:
        return ops.embedding(self.table, indices)
