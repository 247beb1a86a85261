"""Central-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .autograd import KINK_TOLERANCE, Tensor, backward, zero_grad
from .errors import ContractError, GradCheckError


class KinkError(ContractError):
    """The evaluation point lies too close to a relu or max kink."""


@dataclass
class TensorCheck:
    name: str
    checked: int
    max_rel_error: float
    worst_index: tuple[int, ...]
    autodiff: float
    numeric: float


@dataclass
class GradCheckReport:
    tol: float
    tensors: list[TensorCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((t.max_rel_error for t in self.tensors), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def worst(self) -> Optional[TensorCheck]:
        return max(self.tensors, key=lambda t: t.max_rel_error, default=None)

    def raise_on_failure(self) -> None:
        if not self.passed:
            w = self.worst()
            raise GradCheckError(
                f"gradient mismatch in {w.name}{list(w.worst_index)}: autodiff {w.autodiff:.6e} "
                f"vs numeric {w.numeric:.6e} (relative error {w.max_rel_error:.3e} >= {self.tol:g})"
            )


def relative_error(g_ad: float, g_fd: float) -> float:
    return abs(g_ad - g_fd) / max(abs(g_ad), abs(g_fd), 1e-8)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
    names: Optional[Sequence[str]] = None,
) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` against central differences.

    ``f`` must rebuild its graph from the current parameter values on every
    call.  When ``max_entries`` is set, tensors larger than that are checked
    on a random subsample of that many entries.  Raises :class:`KinkError`
    when the evaluation point sits within ``KINK_TOLERANCE`` of a relu or
    column-max kink; callers resample inputs in that case.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ContractError("finite_diff_check requires double precision")
    zero_grad(params)
    loss = f()
    if loss.kink < KINK_TOLERANCE:
        raise KinkError(f"evaluation point within {loss.kink:.2e} of a kink")
    backward(loss)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for k, p in enumerate(params):
        name = names[k] if names is not None else (p.name or f"param{k}")
        analytic = p.grad.copy()
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            entries = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            entries = np.arange(n)
        worst = TensorCheck(name, len(entries), 0.0, (), 0.0, 0.0)
        for j in entries:
            orig = flat[j]
            flat[j] = orig + h
            fp = f().item()
            flat[j] = orig - h
            fm = f().item()
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * h)
            g = float(analytic.reshape(-1)[j])
            err = relative_error(g, numeric)
            if err > worst.max_rel_error or not worst.worst_index:
                worst = TensorCheck(
                    name, len(entries), err, tuple(int(i) for i in np.unravel_index(j, p.shape)), g, numeric
                )
        report.tensors.append(worst)
    return report


def check_with_resampling(
    build: Callable[[np.random.Generator], tuple[Callable[[], Tensor], Sequence[Tensor], Sequence[str]]],
    seed: int,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    attempts: int = 20,
) -> GradCheckReport:
    """Run :func:`finite_diff_check` on instances drawn by ``build``, redrawing near kinks."""
    rng = np.random.default_rng(seed)
    last: Optional[KinkError] = None
    for _ in range(attempts):
        f, params, names = build(rng)
        try:
            return finite_diff_check(f, params, h=h, tol=tol, max_entries=max_entries, names=names)
        except KinkError as exc:
            last = exc
    raise ContractError(f"no kink-free instance found in {attempts} draws: {last}")


__all__ = [
    "GradCheckReport",
    "KinkError",
    "TensorCheck",
    "check_with_resampling",
    "finite_diff_check",
    "relative_error",
]
