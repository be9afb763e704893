from typing import Callable, List, Optional, Sequence, Union
from dataclasses import dataclass
import numpy as np
from dvae import errors as err
from dvae.autodiff.tensor import Tensor, Tape

Target = Union[Tensor, Sequence[Tensor]]


@dataclass
class GradCheckResult:
    """outcome of comparing analytic and central-difference gradients"""

    max_rel_error: float
    n_checked: int
    n_kinks: int

    def passed(self, tol: float) -> bool:
        """kink coordinates are reported but never fail a check"""

        return self.max_rel_error <= tol


def _value(f: Callable[..., Tensor], tensors: List[Tensor], where: str) -> float:
    """forward-only evaluation"""

    out = f(*tensors)
    value = float(out.data.reshape(-1)[0])

    if not np.isfinite(value):
        raise err.NumericFault(where, "non-finite at perturbed point")

    return value


def grad_check(
    f: Callable[..., Tensor],
    x: Target,
    eps: float = 1e-6,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    floor: float = 1e-12,
    kink_tol: float = 1e-3,
) -> GradCheckResult:
    """
    max over coordinates of |analytic - central| / max(|analytic|, |central|, floor).
    coordinates where the two one-sided differences disagree sit on a kink
    (L1 at 0, leaky-relu at 0) and are excluded from the max
    """

    if not 1e-6 <= eps <= 1e-2:
        raise err.ContractViolation(f"grad_check eps {eps} outside [1e-6, 1e-2]")

    tensors = [x] if isinstance(x, Tensor) else list(x)

    for tensor in tensors:
        tensor.grad = None

    with Tape() as tape:
        loss = f(*tensors)

        if loss.size != 1:
            raise err.ContractViolation("grad_check wants a scalar function")

        tape.backward(loss)

    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    coords = [(ti, ci) for ti, t in enumerate(tensors) for ci in range(t.size)]

    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    base = _value(f, tensors, "grad_check")
    worst = 0.0
    kinks = 0

    for ti, ci in coords:
        flat = tensors[ti].data.reshape(-1)
        orig = flat[ci]
        flat[ci] = orig + eps
        plus = _value(f, tensors, "grad_check")
        flat[ci] = orig - eps
        minus = _value(f, tensors, "grad_check")
        flat[ci] = orig

        central = (plus - minus) / (2.0 * eps)
        forward = (plus - base) / eps
        backward = (base - minus) / eps

        if abs(forward - backward) > kink_tol * max(1.0, abs(central)):
            kinks += 1
            continue

        exact = float(analytic[ti].reshape(-1)[ci])
        rel = abs(exact - central) / max(abs(exact), abs(central), floor)
        worst = max(worst, rel)

    return GradCheckResult(max_rel_error=worst, n_checked=len(coords) - kinks, n_kinks=kinks)
