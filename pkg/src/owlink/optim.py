"""Adam optimizer with dense and sparse (row-wise) update modes.

Shared by the embedding trainer (sparse row updates on large tables) and
the transformation trainer (dense updates on small parameter blocks).
Sparse mode is the usual lazy variant: first/second moment rows are only
updated for rows that received a gradient; the bias-correction step counter
is global per optimizer step.
"""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(
        self,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def _state(self, name: str, shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        if name not in self._m:
            self._m[name] = np.zeros(shape)
            self._v[name] = np.zeros(shape)
        return self._m[name], self._v[name]

    def begin_step(self) -> None:
        """Advance the shared step counter; call once per optimization step."""
        self.t += 1

    def update(self, name: str, param: np.ndarray, grad: np.ndarray) -> None:
        """Dense in-place Adam update of ``param``."""
        m, v = self._state(name, param.shape)
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad * grad
        m_hat = m / (1 - self.beta1 ** self.t)
        v_hat = v / (1 - self.beta2 ** self.t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def update_rows(
        self, name: str, param: np.ndarray, rows: np.ndarray, grad_rows: np.ndarray
    ) -> None:
        """Sparse in-place update touching only ``rows`` of ``param``.

        ``rows`` must be unique; ``grad_rows`` holds one gradient row per
        entry of ``rows``.
        """
        m, v = self._state(name, param.shape)
        m_r = self.beta1 * m[rows] + (1 - self.beta1) * grad_rows
        v_r = self.beta2 * v[rows] + (1 - self.beta2) * grad_rows * grad_rows
        m[rows] = m_r
        v[rows] = v_r
        m_hat = m_r / (1 - self.beta1 ** self.t)
        v_hat = v_r / (1 - self.beta2 ** self.t)
        param[rows] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
