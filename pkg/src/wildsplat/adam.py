"""Adam optimizer over named parameter groups."""

from __future__ import annotations

import numpy as np


class Adam:
    """Classic Adam with bias correction, one learning rate per group.

    Parameters are updated in place. Moment buffers are exposed so they can
    be checkpointed and sliced when Gaussians are added or removed.
    """

    def __init__(self, learning_rates: dict[str, float], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-15):
        self.learning_rates = dict(learning_rates)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def ensure_state(self, name: str, param: np.ndarray) -> None:
        if name not in self.m or self.m[name].shape != param.shape:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr_overrides: dict[str, float] | None = None) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, param in params.items():
            grad = grads[name]
            if grad.shape != param.shape:
                raise ValueError(f"gradient for {name} has shape {grad.shape}, "
                                 f"expected {param.shape}")
            self.ensure_state(name, param)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            lr = (lr_overrides or {}).get(name, self.learning_rates[name])
            param -= (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def resize_group(self, name: str, keep: np.ndarray | None = None,
                     extra_rows: int = 0) -> None:
        """Slice moment buffers by a keep mask and append zero rows."""
        if name not in self.m:
            return
        for buffers in (self.m, self.v):
            buf = buffers[name]
            if keep is not None:
                buf = buf[keep]
            if extra_rows:
                pad = np.zeros((extra_rows,) + buf.shape[1:], dtype=buf.dtype)
                buf = np.concatenate([buf, pad], axis=0)
            buffers[name] = buf

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"adam_m_{name}"] = self.m[name]
            out[f"adam_v_{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        self.step_count = step_count
        self.m.clear()
        self.v.clear()
        for key, arr in arrays.items():
            if key.startswith("adam_m_"):
                self.m[key[len("adam_m_"):]] = arr.copy()
            elif key.startswith("adam_v_"):
                self.v[key[len("adam_v_"):]] = arr.copy()
