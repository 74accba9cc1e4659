"""Error norms between predicted and exact solution samples."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = ["ErrorReport", "compute_errors"]


@dataclass
class ErrorReport:
    l1: float
    l2: float
    linf: float
    relative_l2: float | None
    mae: float
    count: int
    sample_points: list[tuple[float, float, float]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def to_dict(self, *, samples: bool = False) -> dict:
        out = asdict(self)
        if not samples:
            out.pop("sample_points")
        return out


def compute_errors(
    predicted: np.ndarray,
    exact: np.ndarray,
    x: np.ndarray | None = None,
) -> ErrorReport:
    """L1, L2, Linf, relative L2 and mean absolute error of ``predicted - exact``.

    The relative L2 error is omitted (``None``, with a flag) when the exact
    samples are all zero.
    """
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1)
    exact = np.asarray(exact, dtype=np.float64).reshape(-1)
    if predicted.shape != exact.shape:
        raise ValueError(f"length mismatch: {predicted.size} predicted vs {exact.size} exact")
    if predicted.size == 0:
        raise ValueError("need at least one sample")

    err = np.abs(predicted - exact)
    l1 = float(np.sum(err))
    l2 = float(np.sqrt(np.sum(err * err)))

    flags = []
    norm = float(np.linalg.norm(exact))
    if norm > 0.0:
        rel = l2 / norm
    else:
        rel = None
        flags.append("relative_l2 omitted: exact solution has zero norm")

    samples = []
    if x is not None:
        samples = [(float(a), float(p), float(e)) for a, p, e in zip(x, predicted, exact)]

    return ErrorReport(
        l1=l1,
        l2=l2,
        linf=float(np.max(err)),
        relative_l2=rel,
        mae=l1 / err.size,
        count=int(err.size),
        sample_points=samples,
        flags=flags,
    )
