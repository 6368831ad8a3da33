"""Relative utility decay as a function of batch size."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field


PIECEWISE_LINEAR = "piecewise_linear"
POWER_LAW = "power_law"
CONSTANT = "constant"
KINDS = (PIECEWISE_LINEAR, POWER_LAW, CONSTANT)


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class ScalingFn:
    """Maps a batch size b >= 1 to the fraction of unbatched utility kept.

    ``knots`` holds ``(batch_size, ratio)`` pairs for the piecewise-linear
    kind; ``alpha`` and ``beta`` parametrise ``1 - alpha * (b - 1) ** beta``.
    """

    kind: str = CONSTANT
    knots: tuple[tuple[int, float], ...] = field(default=())
    alpha: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scaling kind {self.kind!r}")
        if self.kind == PIECEWISE_LINEAR:
            if not self.knots or self.knots[0][0] != 1:
                raise ValueError("piecewise scaling needs a knot at b=1")
            bs = [b for b, _ in self.knots]
            if any(b2 <= b1 for b1, b2 in zip(bs, bs[1:])):
                raise ValueError("knot batch sizes must be strictly increasing")

    def __call__(self, b: int) -> float:
        if b < 1:
            raise ValueError(f"batch size must be >= 1, got {b}")
        if b == 1:
            return 1.0
        if self.kind == CONSTANT:
            return 1.0
        if self.kind == POWER_LAW:
            return _clamp(1.0 - self.alpha * (b - 1) ** self.beta)
        bs = [k for k, _ in self.knots]
        j = bisect.bisect_left(bs, b)
        if j < len(bs) and bs[j] == b:
            return _clamp(self.knots[j][1])
        if j == len(bs):
            return _clamp(self.knots[-1][1])
        (b0, r0), (b1, r1) = self.knots[j - 1], self.knots[j]
        return _clamp(r0 + (b - b0) * (r1 - r0) / (b1 - b0))

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == PIECEWISE_LINEAR:
            d["knots"] = [[b, r] for b, r in self.knots]
        elif self.kind == POWER_LAW:
            d["alpha"] = self.alpha
            d["beta"] = self.beta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingFn":
        kind = d.get("kind", CONSTANT)
        if kind == PIECEWISE_LINEAR:
            return cls(kind, knots=tuple((int(b), float(r)) for b, r in d["knots"]))
        if kind == POWER_LAW:
            return cls(kind, alpha=float(d["alpha"]), beta=float(d["beta"]))
        return cls(kind)


CONSTANT_ONE = ScalingFn()
