"""AdamW with decoupled weight decay and the step-decay learning schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrityError, NonFiniteError


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def validate(self) -> None:
        if self.lr <= 0:
            raise IntegrityError(f"learning rate must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise IntegrityError(f"betas outside [0, 1): {self.beta1}, {self.beta2}")
        if self.eps <= 0 or self.weight_decay < 0:
            raise IntegrityError(
                f"bad eps/weight_decay: {self.eps}, {self.weight_decay}"
            )


@dataclass
class AdamWState:
    """First/second moment estimates per tensor plus the shared step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def lr_for_epoch(base_lr: float, epoch: int, decay_every: int = 10, factor: float = 0.1) -> float:
    """Step decay: multiply by ``factor`` once per ``decay_every`` epochs
    (0-indexed: epochs 0-9 run at the base rate)."""
    if decay_every < 1:
        raise IntegrityError(f"decay interval must be >= 1, got {decay_every}")
    if epoch < 0:
        raise IntegrityError(f"negative epoch {epoch}")
    return base_lr * factor ** (epoch // decay_every)


def adamw_step(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    cfg: AdamWConfig,
    lr: float | None = None,
    keys: list[str] | None = None,
) -> None:
    """One decoupled-weight-decay update, in place.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta.
    Only ``keys`` (default: every gradient key) are touched, so frozen
    tensors simply stay out of the list.
    """
    cfg.validate()
    lr = cfg.lr if lr is None else lr
    state.step += 1
    bias1 = 1.0 - cfg.beta1**state.step
    bias2 = 1.0 - cfg.beta2**state.step
    for key in keys if keys is not None else sorted(grads):
        grad = grads[key]
        if not np.isfinite(grad).all():
            raise NonFiniteError(f"non-finite gradient for {key}")
        if key not in state.m:
            state.m[key] = np.zeros_like(grad)
            state.v[key] = np.zeros_like(grad)
        m, v = state.m[key], state.v[key]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        theta = tensors[key]
        # both the Adam term and the decoupled decay act on the incoming theta
        theta -= lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta)
