"""Analytic vs central finite-difference gradient comparison."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tensor, backward, clear_tape, kink_monitor, no_grad


@dataclass
class LeafReport:
    name: str
    checked: int
    skipped: int
    max_rel_error: float


@dataclass
class GradCheckReport:
    """Outcome of :func:`grad_check`.

    The error of a leaf is ``max|analytic - numeric| / max(max|analytic|, max|numeric|, floor)``,
    i.e. the worst element error measured against that leaf's gradient scale
    (see :func:`grad_check` for how ``floor`` is chosen).
    ``skipped`` counts elements whose every trial step crossed a kink.
    """

    tol: float
    leaves: list[LeafReport] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((lf.max_rel_error for lf in self.leaves), default=0.0)

    @property
    def checked(self) -> int:
        return sum(lf.checked for lf in self.leaves)

    @property
    def skipped(self) -> int:
        return sum(lf.skipped for lf in self.leaves)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error < self.tol

    def summary(self) -> str:
        return (f"max_rel_error={self.max_rel_error:.3e} tol={self.tol:.0e} "
                f"checked={self.checked} skipped={self.skipped} "
                f"{'PASS' if self.passed else 'FAIL'}")


def _same_pattern(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


# offsets (in steps) and weights (per step) of the central difference stencils
_STENCILS = {
    2: ((1, -1), (0.5, -0.5)),
    4: ((2, 1, -1, -2), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)),
}


def _default_eps(dtype) -> float:
    return 1e-3 if np.dtype(dtype) == np.float64 else 1e-2


def grad_check(
    fn: Callable[[], Tensor],
    leaves: Mapping[str, Tensor] | Sequence[Tensor],
    eps: float | None = None,
    tol: float = 1e-3,
    *,
    max_per_leaf: int | None = None,
    rng: np.random.Generator | None = None,
    oracle_dtype="auto",
    retries: int = 3,
    floor: float = 1e-10,
    rel_floor: float = 1e-3,
    order: int = 4,
) -> GradCheckReport:
    """Compare backprop gradients of the scalar ``fn()`` against central differences.

    ``fn`` must rebuild its graph from ``leaves`` on every call. Leaves with
    ``requires_grad=False`` are left out of the report. With ``max_per_leaf`` a
    random subset of each leaf's elements is perturbed instead of all of them.
    ``oracle_dtype`` evaluates the finite differences at another precision.
    The default ``"auto"`` uses float64, so float32 backprop is judged against
    differences that are not themselves dominated by float32 roundoff; pass
    ``None`` to difference at the leaves' own precision.

    A leaf's error is scaled by at least ``rel_floor`` times the largest
    analytic gradient in the whole check (and never less than ``floor``), so
    structurally zero gradients, such as the off-centre taps of a 3x3 kernel
    on a 1x1 map, are measured against the graph's gradient scale instead of
    against roundoff.

    ``order`` selects the central stencil: 2 uses f(x +- h), 4 also uses
    f(x +- 2h) and cancels the h**2 truncation term, which lets the step stay
    large enough that roundoff does not swamp small gradients.

    A step that flips the sign of any leaky_relu input or L1 residual is
    retried with a 10x smaller step, up to ``retries`` times, then skipped.
    """
    if order not in _STENCILS:
        raise ValueError(f"order must be one of {sorted(_STENCILS)}, got {order}")
    offsets, weights = _STENCILS[order]
    if not isinstance(leaves, Mapping):
        leaves = {f"leaf{i}": t for i, t in enumerate(leaves)}
    active = {k: t for k, t in leaves.items() if t.requires_grad}
    rng = rng if rng is not None else np.random.default_rng(0)

    for t in active.values():
        t.zero_grad()
    clear_tape()
    loss = fn()
    backward(loss)
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).astype(np.float64)
                for k, t in active.items()}

    global_scale = max((float(np.abs(g).max()) for g in analytic.values() if g.size), default=0.0)
    floor = max(floor, rel_floor * global_scale)

    originals = {k: t.data for k, t in active.items()}
    if isinstance(oracle_dtype, str):
        if oracle_dtype != "auto":
            raise ValueError(f"unknown oracle_dtype {oracle_dtype!r}")
        oracle_dtype = np.float64
    if oracle_dtype is not None:
        for t in active.values():
            t.data = t.data.astype(oracle_dtype)
    diff_dtype = next(iter(active.values())).dtype if active else np.float32
    step0 = eps if eps is not None else _default_eps(diff_dtype)

    def evaluate() -> tuple[float, list[np.ndarray]]:
        with no_grad(), kink_monitor() as log:
            val = fn().item()
        return val, log

    report = GradCheckReport(tol=tol)
    try:
        _, base_pattern = evaluate()
        for name, t in active.items():
            flat = t.data.reshape(-1)
            idxs = np.arange(flat.size)
            if max_per_leaf is not None and flat.size > max_per_leaf:
                idxs = np.sort(rng.choice(flat.size, size=max_per_leaf, replace=False))
            num = np.full(idxs.size, np.nan)
            skipped = 0
            for j, i in enumerate(idxs):
                orig = flat[i]
                h = step0
                for _ in range(retries + 1):
                    total, smooth = 0.0, True
                    for off, wt in zip(offsets, weights):
                        flat[i] = orig + off * h
                        f, pat = evaluate()
                        smooth = smooth and _same_pattern(pat, base_pattern)
                        total += wt * f
                    flat[i] = orig
                    if smooth:
                        num[j] = total / h
                        break
                    h /= 10
                else:
                    skipped += 1
            ok = ~np.isnan(num)
            a = analytic[name].reshape(-1)[idxs][ok]
            n = num[ok]
            if a.size:
                denom = max(np.abs(a).max(), np.abs(n).max(), floor)
                err = float(np.abs(a - n).max() / denom)
            else:
                err = 0.0
            report.leaves.append(LeafReport(name, int(ok.sum()), skipped, err))
    finally:
        for k, t in active.items():
            t.data = originals[k]
    return report
