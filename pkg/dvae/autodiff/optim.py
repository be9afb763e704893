from typing import Dict, List
import numpy as np
from dvae import errors as err
from dvae.autodiff.module import NamedParams


class Adam:
    """adam over named parameters; moments are exportable for checkpoints"""

    def __init__(
        self,
        params: NamedParams,
        lr: float = 5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: List[np.ndarray] = [np.zeros_like(p.data) for _, p in self.params]
        self.v: List[np.ndarray] = [np.zeros_like(p.data) for _, p in self.params]
        self.t = 0

    def step(self):
        """one update; every parameter must stay finite"""

        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t

        for i, (name, p) in enumerate(self.params):
            if p.grad is None:
                continue

            grad = p.grad.astype(p.dtype, copy=False)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)

            if not np.all(np.isfinite(p.data)):
                raise err.NumericFault(f"adam.{name}")

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {"t": np.asarray([self.t], dtype=np.int64)}

        for (name, _), m, v in zip(self.params, self.m, self.v):
            state[f"m/{name}"] = m
            state[f"v/{name}"] = v

        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        self.t = int(np.asarray(state["t"]).reshape(-1)[0])

        for i, (name, p) in enumerate(self.params):
            self.m[i] = np.asarray(state[f"m/{name}"], dtype=p.dtype).reshape(p.shape).copy()
            self.v[i] = np.asarray(state[f"v/{name}"], dtype=p.dtype).reshape(p.shape).copy()
