"""AdamW with decoupled weight decay and a warmup-cosine learning rate.

The learning rate ramps linearly over the first `warmup_frac` of training,
then follows a cosine decay from the base rate to `lr_floor`. With
`total_steps=0` the schedule is disabled and the base rate is used as-is.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


class NonFiniteGradError(RuntimeError):
    pass


def scheduled_lr(step: int, base_lr: float, total_steps: int, warmup_frac: float, lr_floor: float) -> float:
    """Learning rate for 1-based `step`."""
    if total_steps <= 0:
        return base_lr
    warm = warmup_frac * total_steps
    if warm > 0 and step < warm:
        return base_lr * step / warm
    if total_steps == warm:
        return base_lr
    frac = (step - warm) / (total_steps - warm)
    frac = min(max(frac, 0.0), 1.0)
    return lr_floor + (base_lr - lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac))


class AdamW:
    """Adaptive-moment optimizer over a name -> Tensor parameter dict."""

    def __init__(
        self,
        params: dict[str, Tensor],
        base_lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        total_steps: int = 0,
        warmup_frac: float = 0.10,
        lr_floor: float = 1e-5,
    ):
        self.params = params
        self.base_lr = base_lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.total_steps = total_steps
        self.warmup_frac = warmup_frac
        self.lr_floor = lr_floor
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._scratch = {k: np.empty_like(p.data) for k, p in params.items()}

    def add_param(self, name: str, tensor: Tensor) -> None:
        """Register an extra parameter after construction."""
        self.params[name] = tensor
        self.m[name] = np.zeros_like(tensor.data)
        self.v[name] = np.zeros_like(tensor.data)
        self._scratch[name] = np.empty_like(tensor.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def current_lr(self) -> float:
        return scheduled_lr(self.step_count + 1, self.base_lr, self.total_steps, self.warmup_frac, self.lr_floor)

    def step(self) -> float:
        """Apply one update from the gradients in place; returns the LR used."""
        if self.total_steps > 0 and self.step_count >= self.total_steps:
            raise RuntimeError(f"optimizer exhausted: {self.step_count} >= {self.total_steps} steps")
        self.step_count += 1
        t = self.step_count
        lr = scheduled_lr(t, self.base_lr, self.total_steps, self.warmup_frac, self.lr_floor)
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter '{name}' {p.data.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradError(f"non-finite gradient for parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            s = self._scratch[name]
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=s)
            m += s
            v *= self.beta2
            np.multiply(g, g, out=s)
            s *= 1.0 - self.beta2
            v += s
            # s <- mhat / (sqrt(vhat) + eps), all in place
            np.divide(v, bc2, out=s)
            np.sqrt(s, out=s)
            s += self.eps
            s *= bc1
            np.divide(m, s, out=s)
            if self.weight_decay:
                s += self.weight_decay * p.data
            s *= lr
            p.data -= s
        return lr

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Optimizer state flattened for checkpointing under '/opt/'."""
        out: dict[str, np.ndarray] = {"/opt/step": np.array([self.step_count], dtype=np.float32)}
        for k in self.params:
            out[f"/opt/m/{k}"] = self.m[k].astype(np.float32, copy=False)
            out[f"/opt/v/{k}"] = self.v[k].astype(np.float32, copy=False)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["/opt/step"][0])
        for k in self.params:
            self.m[k] = arrays[f"/opt/m/{k}"].astype(self.m[k].dtype).reshape(self.m[k].shape)
            self.v[k] = arrays[f"/opt/v/{k}"].astype(self.v[k].dtype).reshape(self.v[k].shape)
