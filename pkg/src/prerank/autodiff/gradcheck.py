"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class Probe:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    probes: list[Probe] = field(default_factory=list)
    # coordinates sitting on a kink (one-sided slopes disagree); excluded from max_rel_error
    flagged: list[tuple[str, int]] = field(default_factory=list)

    @property
    def n_checked(self) -> int:
        return len(self.probes)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def summary(self) -> str:
        return (f"grad_check: {self.n_checked} probes, {len(self.flagged)} flagged, "
                f"max rel err {self.max_rel_error:.3e} (tol {self.tol:.0e})")


def grad_check(loss_fn: Callable[[], Tensor],
               params: Mapping[str, Tensor] | Sequence[Tensor],
               probes: int = 100,
               eps: float = 1e-5,
               tol: float = 1e-4,
               seed: int = 0,
               floor: float = 1e-6,
               kink_tol: float = 1e-3) -> GradCheckReport:
    """Compare the backward pass of ``loss_fn`` with central differences.

    ``loss_fn`` must rebuild the graph from ``params`` on every call and be
    deterministic.  A probe picks a parameter uniformly, then a coordinate
    uniformly inside it.  The relative error is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps vanishing gradients
    from turning round-off into huge ratios.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    if not isinstance(params, Mapping):
        params = {f"p{i}": p for i, p in enumerate(params)}
    names = list(params)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {n: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for n, p in params.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_error=0.0, tol=tol)
    with no_grad():
        for _ in range(probes):
            name = names[rng.integers(len(names))]
            p = params[name]
            flat = p.data.reshape(-1)
            i = int(rng.integers(flat.size))
            orig = flat[i]
            f0 = loss_fn().item()
            flat[i] = orig + eps
            fp = loss_fn().item()
            flat[i] = orig - eps
            fm = loss_fn().item()
            flat[i] = orig
            fwd, bwd = (fp - f0) / eps, (f0 - fm) / eps
            if abs(fwd - bwd) > kink_tol * max(1.0, abs(fwd), abs(bwd)):
                report.flagged.append((name, i))
                continue
            num = (fp - fm) / (2.0 * eps)
            ana = float(analytic[name].reshape(-1)[i])
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            report.probes.append(Probe(name, i, ana, num, rel))
            report.max_rel_error = max(report.max_rel_error, rel)
    return report
