"""Encoder, decoder and discriminator networks.

Encoder: 7x7/s2 conv then three 3x3/s2 convs, 64 channels each, every conv
followed by ReLU and batch norm. For a 32x32 input the last feature map is
64x2x2, flattened to 256 values (optionally projected to ``k``).
Decoder mirrors it with transposed convs, LeakyReLU(0.2) and batch norm,
ending in a sigmoid. The discriminator is a 256-64-1 perceptron.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

IMAGE_SIZE = 32
WIDTH = 64
FEATURE_SIZE = WIDTH * 2 * 2  # flattened encoder output for a 32x32 input
LEAKY_SLOPE = 0.2


def _normal(rng, shape, fan_in, dtype):
    return Tensor((rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Module:
    training = True

    def _children(self):
        return {k: v for k, v in vars(self).items() if isinstance(v, Module)}

    def parameters(self):
        """Trainable tensors keyed by dotted name, in construction order."""
        out = {}
        for k, v in vars(self).items():
            if isinstance(v, Tensor) and v.requires_grad:
                out[k] = v
            elif isinstance(v, Module):
                out.update({f"{k}.{n}": p for n, p in v.parameters().items()})
        return out

    def buffers(self):
        """Non-trainable state (batch norm running statistics)."""
        out = {}
        for k, v in vars(self).items():
            if isinstance(v, np.ndarray):
                out[k] = v
            elif isinstance(v, Module):
                out.update({f"{k}.{n}": b for n, b in v.buffers().items()})
        return out

    def state_dict(self):
        state = {n: p.data for n, p in self.parameters().items()}
        state.update(self.buffers())
        return state

    def load_state_dict(self, state):
        own = self.parameters()
        bufs = self.buffers()
        missing = (set(own) | set(bufs)) - set(state)
        if missing:
            raise KeyError(f"missing entries in state: {sorted(missing)}")
        for n, p in own.items():
            if state[n].shape != p.shape:
                raise DimensionError(f"{n}: expected {p.shape}, got {state[n].shape}")
            p.data = np.array(state[n], dtype=p.dtype)
        for n, b in bufs.items():
            b[...] = state[n]

    def train(self, mode=True):
        self.training = mode
        for child in self._children().values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride, padding, rng, dtype=np.float32):
        self.weight = _normal(rng, (cout, cin, k, k), cin * k * k, dtype)
        self.bias = _zeros(cout, dtype)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, k, stride, padding, output_padding, rng, dtype=np.float32):
        self.weight = _normal(rng, (cin, cout, k, k), cin * k * k, dtype)
        self.bias = _zeros(cout, dtype)
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding

    def __call__(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding, self.output_padding)


class Linear(Module):
    def __init__(self, din, dout, rng, dtype=np.float32):
        self.weight = _normal(rng, (din, dout), din, dtype)
        self.bias = _zeros(dout, dtype)

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = _zeros(channels, dtype)
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x):
        return T.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)


def conv_out(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def deconv_out(size, k, stride, padding, output_padding):
    return (size - 1) * stride - 2 * padding + k + output_padding


# (kernel, padding) per stage; every stage has stride 2
_STAGES = [(7, 3), (3, 1), (3, 1), (3, 1)]


class Encoder(Module):
    def __init__(self, channels=1, k=FEATURE_SIZE, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.k = k
        size, cin = IMAGE_SIZE, channels
        sizes = []
        for i, (ks, pad) in enumerate(_STAGES):
            setattr(self, f"conv{i}", Conv2d(cin, WIDTH, ks, 2, pad, rng, dtype))
            setattr(self, f"bn{i}", BatchNorm2d(WIDTH, dtype))
            size = conv_out(size, ks, 2, pad)
            sizes.append(size)
            cin = WIDTH
        if sizes != [16, 8, 4, 2]:
            raise AssertionError(f"encoder shape chain broken: {sizes}")
        self.proj = Linear(FEATURE_SIZE, k, rng, dtype) if k != FEATURE_SIZE else None

    def __call__(self, x):
        if x.data.ndim != 4 or x.shape[1:] != (self.channels, IMAGE_SIZE, IMAGE_SIZE):
            raise DimensionError(f"encoder expects [N,{self.channels},32,32], got {x.shape}")
        h = x
        for i in range(len(_STAGES)):
            h = getattr(self, f"bn{i}")(T.relu(getattr(self, f"conv{i}")(h)))
        z = T.reshape(h, (x.shape[0], FEATURE_SIZE))
        if self.proj is not None:
            z = self.proj(z)
        return z


class Decoder(Module):
    def __init__(self, channels=1, k=FEATURE_SIZE, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(1)
        self.channels = channels
        self.k = k
        self.proj = Linear(k, FEATURE_SIZE, rng, dtype) if k != FEATURE_SIZE else None
        size = 2
        sizes = []
        stages = list(reversed(_STAGES))
        for i, (ks, pad) in enumerate(stages):
            cout = WIDTH if i < len(stages) - 1 else channels
            setattr(self, f"deconv{i}", ConvTranspose2d(WIDTH, cout, ks, 2, pad, 1, rng, dtype))
            if i < len(stages) - 1:
                setattr(self, f"bn{i}", BatchNorm2d(WIDTH, dtype))
            size = deconv_out(size, ks, 2, pad, 1)
            sizes.append(size)
        if sizes != [4, 8, 16, 32]:
            raise AssertionError(f"decoder shape chain broken: {sizes}")

    def __call__(self, z):
        if z.data.ndim != 2 or z.shape[1] != self.k:
            raise DimensionError(f"decoder expects [N,{self.k}], got {z.shape}")
        h = self.proj(z) if self.proj is not None else z
        h = T.reshape(h, (z.shape[0], WIDTH, 2, 2))
        for i in range(3):
            h = getattr(self, f"bn{i}")(T.leaky_relu(getattr(self, f"deconv{i}")(h), LEAKY_SLOPE))
        return T.sigmoid(self.deconv3(h))


class Discriminator(Module):
    def __init__(self, dim, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(2)
        self.dim = dim
        self.fc0 = Linear(dim, 256, rng, dtype)
        self.fc1 = Linear(256, 64, rng, dtype)
        self.fc2 = Linear(64, 1, rng, dtype)

    def __call__(self, v):
        if v.data.ndim != 2 or v.shape[1] != self.dim:
            raise DimensionError(f"discriminator expects [N,{self.dim}], got {v.shape}")
        h = T.leaky_relu(self.fc0(v), LEAKY_SLOPE)
        h = T.leaky_relu(self.fc1(h), LEAKY_SLOPE)
        return T.sigmoid(self.fc2(h))


def encode(enc, x):
    return enc(x)


def decode(dec, z):
    return dec(z)


def discriminate(disc, v):
    return disc(v)


class Adam:
    """Adaptive-moment optimiser over a dict of parameters."""

    def __init__(self, params, lr, betas=(0.5, 0.999), eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[n], self.v[n]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            upd = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= upd.astype(p.dtype, copy=False)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
