"""Shared test oracles: finite-difference gradients and a linear toy classifier."""

import numpy as np
import torch
import torch.nn as nn

from sparsetone.models import Classifier


def central_difference(fn, x, h):
    """Gradient of a scalar function at x via central differences.

    Independent of autograd: evaluates fn at x +- h*e_i coordinate by
    coordinate in float64.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        grad.flat[i] = (float(fn(xp)) - float(fn(xm))) / (2.0 * h)
    return grad


def relative_error(approx, exact):
    approx = np.asarray(approx, dtype=np.float64).ravel()
    exact = np.asarray(exact, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(exact)), 1e-12)
    return float(np.linalg.norm(approx - exact)) / denom


class LinearNet(nn.Module):
    """logits = x @ W.T + b, in float64 for exact-oracle comparisons."""

    def __init__(self, weight, bias):
        super().__init__()
        self.linear = nn.Linear(weight.shape[1], weight.shape[0], dtype=torch.float64)
        with torch.no_grad():
            self.linear.weight.copy_(torch.as_tensor(weight, dtype=torch.float64))
            self.linear.bias.copy_(torch.as_tensor(bias, dtype=torch.float64))

    def forward(self, x):
        return self.linear(x)


def linear_classifier(weight, bias) -> Classifier:
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    return Classifier("linear_toy", weight.shape[0], weight.shape[1],
                      LinearNet(weight, bias))
