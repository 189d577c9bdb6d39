"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .tensor import Tensor, record_kinks


@dataclass
class ParamCheck:
    name: str
    max_error: float
    worst_index: tuple
    analytic: float
    numeric: float
    checked: int
    skipped: int = 0
    refined: int = 0



@dataclass
class GradCheckReport:
    tolerance: float
    eps: float
    entries: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self._ok(e) for e in self.entries)

    def _ok(self, e: ParamCheck) -> bool:
        return e.checked > 0 and e.max_error <= self.tolerance

    @property
    def failures(self) -> list[str]:
        return [e.name for e in self.entries if not self._ok(e)]

    @property
    def max_error(self) -> float:
        return max((e.max_error for e in self.entries), default=0.0)

    def format(self) -> str:
        width = max([len(e.name) for e in self.entries] + [9])
        lines = [f"{'parameter':<{width}}  {'max_rel_err':>11}  {'checked':>7}  {'refined':>7}  {'skipped':>7}  status"]
        for e in self.entries:
            status = "ok" if self._ok(e) else "FAIL"
            lines.append(f"{e.name:<{width}}  {e.max_error:11.3e}  {e.checked:7d}  {e.refined:7d}  {e.skipped:7d}  {status}")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(1, |a|, |n|): relative for large gradients, absolute for small ones."""
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def grad_check(
    closure: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-3,
    tolerance: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    min_step_ratio: float = 1e-4,
) -> GradCheckReport:
    """Compare backprop gradients of the scalar ``closure()`` with central differences.

    ``closure`` must be deterministic. Parameters should hold float64 data;
    the difference quotient is always accumulated in float64. With
    ``max_entries`` only a random subset of each parameter is probed.

    An entry whose +-eps probe changes the sign pattern of any relu or abs
    input straddles a kink, where the central difference does not estimate
    the derivative. Such an entry is re-probed with steps eps/10, eps/100,
    ... down to eps * ``min_step_ratio`` (counted as ``refined``); if every
    step still straddles a kink the entry is ``skipped``. A parameter with
    no comparable entry fails.
    """
    steps = [eps * 10.0**-k for k in range(int(round(-np.log10(min_step_ratio))) + 1)]

    def probe() -> tuple[float, list]:
        with record_kinks() as signs:
            value = float(closure().data)
        return value, signs

    for p in params:
        p.grad = np.zeros_like(p.data)
    with record_kinks() as base_signs:
        loss = closure()
    if loss.data.size != 1:
        raise NumericError("grad_check closure must return a scalar")
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite loss {float(loss.data)}")
    loss.backward()

    report = GradCheckReport(tolerance, eps)
    for i, p in enumerate(params):
        analytic = np.asarray(p.grad, dtype=np.float64).copy()
        flat = p.data.reshape(-1)
        positions = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            positions = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False))
        numeric = np.empty(len(positions))
        smooth = np.ones(len(positions), dtype=bool)
        refined = 0
        for j, pos in enumerate(positions):
            orig = flat[pos]
            for step in steps:
                flat[pos] = orig + step
                up, up_signs = probe()
                flat[pos] = orig - step
                down, down_signs = probe()
                flat[pos] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NumericError(f"non-finite loss while probing {p.name or i}")
                if up_signs == base_signs and down_signs == base_signs:
                    numeric[j] = (up - down) / (2 * step)
                    refined += step != eps
                    break
            else:
                smooth[j] = False
        skipped = int((~smooth).sum())
        positions, numeric = positions[smooth], numeric[smooth]
        a = analytic.reshape(-1)[positions]
        err = relative_error(a, numeric)
        worst = int(np.argmax(err)) if len(err) else 0
        report.entries.append(
            ParamCheck(
                p.name or f"param{i}",
                float(err[worst]) if len(err) else 0.0,
                np.unravel_index(positions[worst], p.shape) if len(err) else (),
                float(a[worst]) if len(err) else 0.0,
                float(numeric[worst]) if len(err) else 0.0,
                len(positions),
                skipped,
                refined,
            )
        )
    return report
