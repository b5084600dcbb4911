"""Small fully-connected networks with handwritten forward/backward.

Three linear layers with ReLU between them; the output layer is linear.
Hidden layers use He initialization, the final layer starts at zero so a
fresh model predicts all-zero SH coefficients (mid-gray after sigmoid).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MlpActivations:
    """Inputs and hidden activations retained for the backward pass."""

    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray


class Mlp:
    """3-layer perceptron mapping (B, in_dim) -> (B, out_dim)."""

    PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.in_dim = in_dim
        self.hidden = hidden
        self.out_dim = out_dim
        scale1 = np.sqrt(2.0 / in_dim)
        scale2 = np.sqrt(2.0 / hidden)
        self.w1 = rng.normal(0.0, scale1, size=(in_dim, hidden)).astype(dtype)
        self.b1 = np.zeros(hidden, dtype=dtype)
        self.w2 = rng.normal(0.0, scale2, size=(hidden, hidden)).astype(dtype)
        self.b2 = np.zeros(hidden, dtype=dtype)
        self.w3 = np.zeros((hidden, out_dim), dtype=dtype)
        self.b3 = np.zeros(out_dim, dtype=dtype)

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        for name in self.PARAM_NAMES:
            arr = np.asarray(params[name])
            if arr.shape != getattr(self, name).shape:
                raise ValueError(
                    f"{name} has shape {arr.shape}, expected {getattr(self, name).shape}"
                )
            setattr(self, name, arr.copy())

    def astype(self, dtype) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.in_dim, clone.hidden, clone.out_dim = self.in_dim, self.hidden, self.out_dim
        for name in self.PARAM_NAMES:
            setattr(clone, name, getattr(self, name).astype(dtype))
        return clone

    def forward(self, x: np.ndarray, keep: bool = False):
        """Forward pass; with keep=True also returns retained activations."""
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"input has shape {x.shape}, expected (B, {self.in_dim})")
        dtype = x.dtype
        h1 = np.maximum(x @ self.w1.astype(dtype) + self.b1.astype(dtype), 0.0)
        h2 = np.maximum(h1 @ self.w2.astype(dtype) + self.b2.astype(dtype), 0.0)
        out = h2 @ self.w3.astype(dtype) + self.b3.astype(dtype)
        if keep:
            return out, MlpActivations(x=x, h1=h1, h2=h2)
        return out

    def backward(self, acts: MlpActivations, d_out: np.ndarray):
        """Gradients for all weights plus the input, given d(loss)/d(output)."""
        d_out = np.asarray(d_out)
        dtype = d_out.dtype
        d_w3 = acts.h2.T @ d_out
        d_b3 = d_out.sum(axis=0)
        d_h2 = (d_out @ self.w3.astype(dtype).T) * (acts.h2 > 0)
        d_w2 = acts.h1.T @ d_h2
        d_b2 = d_h2.sum(axis=0)
        d_h1 = (d_h2 @ self.w2.astype(dtype).T) * (acts.h1 > 0)
        d_w1 = acts.x.T @ d_h1
        d_b1 = d_h1.sum(axis=0)
        d_x = d_h1 @ self.w1.astype(dtype).T
        grads = {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2, "w3": d_w3, "b3": d_b3}
        return grads, d_x
