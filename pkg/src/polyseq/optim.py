"""AdamW with decoupled weight decay and per-group learning rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from polyseq.errors import StateError
from polyseq.tensor import Tensor


@dataclass
class ParamGroup:
    name: str
    params: dict[str, Tensor]
    lr: float
    weight_decay: float = 0.0
    base_lr: float | None = None

    def __post_init__(self) -> None:
        if self.base_lr is None:
            self.base_lr = self.lr


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-6

    @classmethod
    def for_groups(cls, groups: list[ParamGroup], betas=(0.9, 0.999), eps: float = 1e-6) -> AdamWState:
        state = cls(betas=tuple(betas), eps=eps)
        for group in groups:
            for name, p in group.params.items():
                state.m[name] = np.zeros_like(p.data)
                state.v[name] = np.zeros_like(p.data)
        return state

    def snapshot(self) -> AdamWState:
        return AdamWState(
            self.step,
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.betas,
            self.eps,
        )


def adamw_step(groups: list[ParamGroup], state: AdamWState) -> None:
    """One AdamW update in place.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)

    Parameters whose ``grad`` is None are left untouched.
    """
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for group in groups:
        lr, wd = group.lr, group.weight_decay
        for name, p in group.params.items():
            if name not in state.m or name not in state.v:
                raise StateError(f"no optimizer moments for parameter '{name}'")
            if p.grad is None:
                continue
            g = p.grad
            m = state.m[name]
            v = state.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + state.eps)
            if wd:
                update = update + wd * p.data
            p.data -= (lr * update).astype(p.data.dtype)


class AdamW:
    """Convenience wrapper bundling groups and state."""

    def __init__(
        self,
        groups: list[ParamGroup],
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-6,
        max_grad_norm: float | None = None,
    ) -> None:
        self.groups = groups
        self.state = AdamWState.for_groups(groups, betas, eps)
        self.max_grad_norm = max_grad_norm

    def params(self):
        for group in self.groups:
            yield from group.params.values()

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params():
            if p.grad is not None:
                total += float((p.grad.astype(np.float64) ** 2).sum())
        return float(np.sqrt(total))

    def set_lr(self, scale_fn) -> None:
        """Set each group's lr to ``scale_fn(group.base_lr)``."""
        for group in self.groups:
            group.lr = scale_fn(group.base_lr)

    def step(self) -> None:
        if self.max_grad_norm is not None:
            norm = self.grad_norm()
            if norm > self.max_grad_norm:
                scale = self.max_grad_norm / (norm + 1e-12)
                for p in self.params():
                    if p.grad is not None:
                        p.grad = p.grad * scale
        adamw_step(self.groups, self.state)
