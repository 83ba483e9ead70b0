"""Small parameter-owning building blocks on top of the tensor engine."""

from __future__ import annotations

import numpy as np

from . import tensor as T


class Module:
    """Anything that owns parameters. Tensors found on attributes (or in list
    attributes of Modules) are collected by named_parameters in definition
    order."""

    def named_parameters(self, prefix=""):
        out = {}
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, T.Tensor):
                out[key] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(f"{key}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
                    elif isinstance(item, T.Tensor):
                        out[f"{key}.{i}"] = item
        return out

    def freeze(self):
        for p in self.named_parameters().values():
            p.requires_grad = False


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = T.parameter(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, d_out)))
        self.bias = T.parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gamma = T.parameter(np.ones(dim))
        self.beta = T.parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, groups=1, bias=True):
        fan_in = (c_in // groups) * kernel
        self.weight = T.parameter(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(c_out, c_in // groups, kernel)))
        self.bias = T.parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding, groups=self.groups)
