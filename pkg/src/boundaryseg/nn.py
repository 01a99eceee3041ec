"""Small layer/module system over the autodiff tensor ops.

Parameters are Tensors with ``requires_grad=True``; buffers (batch
norm running stats) are plain ndarrays saved in checkpoints but never
differentiated.  Initialization draws from an explicit
``numpy.random.Generator`` so model construction is deterministic.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, batchnorm2d, conv2d, relu


class Module:
    """Base class with parameter/buffer registration and train mode."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def state_arrays(self):
        """name -> ndarray for every parameter and buffer (checkpointing)."""
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_arrays(self, state):
        """Copy arrays into parameters/buffers; report every mismatch."""
        own = {name: p.data for name, p in self.named_parameters()}
        own.update(dict(self.named_buffers()))
        problems = []
        for name, arr in own.items():
            if name not in state:
                problems.append(f"missing tensor {name}")
            elif state[name].shape != arr.shape:
                problems.append(
                    f"{name}: checkpoint shape {state[name].shape} != model {arr.shape}")
        for name in state:
            if name not in own:
                problems.append(f"unexpected tensor {name}")
        if problems:
            raise ShapeError("incompatible checkpoint: " + "; ".join(problems))
        for name, arr in own.items():
            arr[...] = state[name].astype(arr.dtype)

    def train(self, flag=True):
        object.__setattr__(self, "training", flag)
        for m in self._modules.values():
            m.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules):
        super().__init__()
        self._items = list(modules)
        for i, m in enumerate(self._items):
            setattr(self, f"m{i}", m)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


class Conv2d(Module):
    """3x3/1x1 convolution layer with He-normal init.

    ``pad=None`` picks the padding that preserves H,W for stride 1.
    ``zero_init`` zeroes weight and bias (final prediction layers, so
    a fresh head emits uniform class probabilities).
    """

    def __init__(self, c_in, c_out, k, rng, stride=1, dilation=1, pad=None,
                 zero_init=False):
        super().__init__()
        self.stride = stride
        self.dilation = dilation
        self.pad = dilation * (k - 1) // 2 if pad is None else pad
        if zero_init:
            w = np.zeros((c_out, c_in, k, k), dtype=np.float32)
        else:
            std = np.sqrt(2.0 / (c_in * k * k))
            w = rng.normal(0.0, std, size=(c_out, c_in, k, k)).astype(np.float32)
        self.weight = Tensor(w, requires_grad=True, name="weight")
        self.bias = Tensor(np.zeros(c_out, dtype=np.float32),
                           requires_grad=True, name="bias")

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride,
                      dilation=self.dilation, pad=self.pad)


class BatchNorm2d(Module):
    def __init__(self, c, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(c, dtype=np.float32), requires_grad=True,
                            name="gamma")
        self.beta = Tensor(np.zeros(c, dtype=np.float32), requires_grad=True,
                           name="beta")
        self.register_buffer("running_mean", np.zeros(c, dtype=np.float32))
        self.register_buffer("running_var", np.ones(c, dtype=np.float32))

    def forward(self, x):
        return batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                           self.running_var, self.training,
                           momentum=self.momentum, eps=self.eps)


class ConvBnRelu(Module):
    def __init__(self, c_in, c_out, rng, stride=1, dilation=1):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, 3, rng, stride=stride, dilation=dilation)
        self.bn = BatchNorm2d(c_out)

    def forward(self, x):
        return relu(self.bn(self.conv(x)))
