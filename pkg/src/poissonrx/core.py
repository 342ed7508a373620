"""Shared domain types: degree distributions, channel models, loads and receivers."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

NORMALIZATION_SLACK = 1e-9


class ValidationError(ValueError):
    """Bad input to a constructor or operation.

    ``path`` names the offending config location when the error comes from a
    parsed scenario; it is empty for programmatic misuse.
    """

    category = "validation"

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class CapacityError(RuntimeError):
    """A requested computation exceeds a configured size cap."""

    category = "capacity"

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _check_probability(x, what: str) -> None:
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValidationError(f"{what} must lie in [0, 1], got {x!r}")


@dataclass(frozen=True)
class DegreeDistribution:
    """Finite-support distribution of the number of transmitted copies.

    ``coeffs[l]`` is the probability of sending ``l`` copies. The generating
    function is the polynomial ``sum_l coeffs[l] * x**l``.
    """

    coeffs: tuple[float, ...]

    def __post_init__(self):
        if len(self.coeffs) == 0:
            raise ValidationError("degree distribution needs at least one coefficient")

    @classmethod
    def from_coeffs(cls, coeffs: Iterable[float]) -> "DegreeDistribution":
        values = [float(c) for c in coeffs]
        if not values:
            raise ValidationError("empty coefficient sequence")
        if any(not math.isfinite(c) or c < 0.0 for c in values):
            raise ValidationError(f"coefficients must be finite and nonnegative: {values}")
        total = math.fsum(values)
        if total <= 0.0:
            raise ValidationError("coefficients are all zero")
        if abs(total - 1.0) > NORMALIZATION_SLACK:
            raise ValidationError(f"coefficients sum to {total!r}, not 1")
        values = [c / total for c in values]
        while len(values) > 1 and values[-1] == 0.0:
            values.pop()
        return cls(tuple(values))

    @classmethod
    def monomial(cls, n: int) -> "DegreeDistribution":
        """All mass on degree ``n``, i.e. the generating function ``x**n``."""
        if n < 0:
            raise ValidationError(f"degree must be nonnegative, got {n}")
        return cls(tuple([0.0] * n + [1.0]))

    @property
    def n_max(self) -> int:
        return len(self.coeffs) - 1

    @property
    def min_degree(self) -> int:
        return next(l for l, c in enumerate(self.coeffs) if c > 0.0)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coeffs, dtype=float)

    def mean(self) -> float:
        return math.fsum(l * c for l, c in enumerate(self.coeffs))

    def excess(self) -> "DegreeDistribution":
        """Degree distribution seen from the user end of a random edge.

        Coefficient ``l`` is ``coeffs[l+1] * (l+1) / mean``; equivalently the
        derivative of the generating function normalized to one at ``x = 1``.
        """
        m = self.mean()
        if m <= 0.0:
            raise ValidationError("excess distribution undefined: all mass at degree 0")
        weighted = [c * l / m for l, c in enumerate(self.coeffs)][1:]
        return DegreeDistribution.from_coeffs(weighted)

    def derivative(self, j: int, x):
        """j-th derivative of the generating function evaluated at ``x`` in [0, 1].

        Accepts a scalar or an array for ``x``. ``j = 0`` is plain evaluation.
        """
        if j < 0:
            raise ValidationError(f"derivative order must be nonnegative, got {j}")
        _check_probability(x, "evaluation point")
        if j > self.n_max:
            return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
        # falling factorial l (l-1) ... (l-j+1) scales coefficient l
        scaled = [
            c * math.perm(l, j) for l, c in enumerate(self.coeffs) if l >= j
        ]
        acc = 0.0 * np.asarray(x, dtype=float) if np.ndim(x) else 0.0
        for c in reversed(scaled):
            acc = acc * x + c
        return acc

    def __call__(self, x):
        return self.derivative(0, x)


@dataclass(frozen=True)
class ChannelModel:
    """Joint on-off reach distribution over ``J`` receivers.

    States are bit tuples ``c = (c_1, ..., c_J)``; ``c_j = 1`` means a
    transmission reaches receiver ``j``. Internally state ``c`` is stored at
    the integer whose binary digits read ``c_1 c_2 ... c_J`` (so ``"10"`` is
    index 2).
    """

    J: int
    probs: tuple[float, ...]

    def __post_init__(self):
        if self.J < 1:
            raise ValidationError(f"J must be positive, got {self.J}")
        if len(self.probs) != 2**self.J:
            raise ValidationError(f"expected {2**self.J} state probabilities, got {len(self.probs)}")
        _check_probability(self.probs, "state probability")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"state probabilities sum to {total!r}, not 1")

    @classmethod
    def from_states(cls, J: int, states: Mapping) -> "ChannelModel":
        """Build from a mapping of states to probabilities; missing states are 0.

        Keys may be bit strings (``"10"``) or bit tuples (``(1, 0)``).
        """
        probs = [0.0] * (2**J)
        for key, p in states.items():
            bits = _parse_state(key, J)
            probs[_state_index(bits)] += float(p)
        total = math.fsum(probs)
        if total > 0 and abs(total - 1.0) <= NORMALIZATION_SLACK:
            probs = [p / total for p in probs]
        return cls(J, tuple(probs))

    @classmethod
    def two_receiver(cls, P11: float, P10: float, P01: float) -> "ChannelModel":
        P00 = 1.0 - P11 - P10 - P01
        if P00 < -NORMALIZATION_SLACK:
            raise ValidationError(f"P11 + P10 + P01 = {P11 + P10 + P01} exceeds 1")
        return cls.from_states(2, {"00": max(P00, 0.0), "01": P01, "10": P10, "11": P11})

    @classmethod
    def symmetric(cls, P11: float) -> "ChannelModel":
        """Two receivers with ``P10 = P01 = (1 - P11) / 2`` and ``P00 = 0``."""
        _check_probability(P11, "P11")
        half = (1.0 - P11) / 2.0
        return cls.two_receiver(P11, half, half)

    @classmethod
    def single(cls) -> "ChannelModel":
        return cls(1, (0.0, 1.0))

    @classmethod
    def fixed(cls, J: int, receivers: Iterable[int]) -> "ChannelModel":
        """Deterministic footprint: always reach exactly ``receivers`` (1-based)."""
        bits = [0] * J
        for r in receivers:
            if not 1 <= r <= J:
                raise ValidationError(f"receiver index {r} outside 1..{J}")
            bits[r - 1] = 1
        probs = [0.0] * (2**J)
        probs[_state_index(bits)] = 1.0
        return cls(J, tuple(probs))

    def prob(self, state) -> float:
        return self.probs[_state_index(_parse_state(state, self.J))]

    def states(self) -> Iterator[tuple[tuple[int, ...], float]]:
        for bits in itertools.product((0, 1), repeat=self.J):
            yield bits, self.probs[_state_index(bits)]

    def state_bits(self) -> np.ndarray:
        """Bool array of shape (2**J, J) aligned with ``probs``."""
        idx = np.arange(2**self.J)[:, None]
        shifts = np.arange(self.J - 1, -1, -1)[None, :]
        return ((idx >> shifts) & 1).astype(bool)

    def _named(self, key: str) -> float:
        if self.J != 2:
            raise ValidationError(f"P{key} is defined for J = 2 only (J = {self.J})")
        return self.prob(key)

    P00 = property(lambda self: self._named("00"))
    P01 = property(lambda self: self._named("01"))
    P10 = property(lambda self: self._named("10"))
    P11 = property(lambda self: self._named("11"))


def _parse_state(key, J: int) -> tuple[int, ...]:
    if isinstance(key, str):
        bits = tuple(int(ch) for ch in key.strip())
    else:
        bits = tuple(int(b) for b in key)
    if len(bits) != J or any(b not in (0, 1) for b in bits):
        raise ValidationError(f"state {key!r} is not a {J}-bit vector")
    return bits


def _state_index(bits: Sequence[int]) -> int:
    idx = 0
    for b in bits:
        idx = (idx << 1) | int(b)
    return idx


def as_load(values, K: int | None = None, what: str = "offered load") -> np.ndarray:
    """Validate a per-class load vector (mean packets per receiver per class)."""
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{what} must be a nonempty vector, got shape {arr.shape}")
    if K is not None and arr.size != K:
        raise ValidationError(f"{what} has {arr.size} classes, expected {K}")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0):
        raise ValidationError(f"{what} entries must be finite and nonnegative: {arr}")
    return arr


@dataclass(frozen=True)
class PoissonReceiver:
    """A K-class success-probability map ``rho -> (P_suc,1(rho), ..., P_suc,K(rho))``.

    Receivers are used only through evaluation, so combinators can wrap any
    receiver without knowing how it computes its output.
    """

    num_classes: int
    success_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    normal: bool = True
    name: str = "receiver"

    def __call__(self, rho) -> np.ndarray:
        rho = as_load(rho, self.num_classes)
        out = np.asarray(self.success_fn(rho), dtype=float).reshape(self.num_classes)
        return np.clip(out, 0.0, 1.0)

    def throughput(self, rho) -> np.ndarray:
        """Per-class throughput ``rho_k * P_suc,k(rho)``."""
        rho = as_load(rho, self.num_classes)
        return rho * self(rho)


def normality_violations(
    receiver: PoissonReceiver,
    step: float = 0.1,
    max_load: float = 5.0,
    base_points: int = 3,
    slack: float = 1e-12,
) -> list[tuple[np.ndarray, int, int]]:
    """Scan for places where some P_suc,k increases along a load axis.

    Every coordinate axis is swept on ``0, step, ..., max_load`` with the
    remaining coordinates fixed at each point of a coarse ``base_points``
    grid. Returns ``(load, axis, class)`` triples where the next grid step
    raised the success probability by more than ``slack``.
    """
    K = receiver.num_classes
    line = np.arange(0.0, max_load + step / 2, step)
    coarse = np.linspace(0.0, max_load, base_points)
    found = []
    for axis in range(K):
        others = [coarse] * (K - 1)
        for base in itertools.product(*others):
            base = list(base)
            prev = None
            for x in line:
                rho = np.array(base[:axis] + [x] + base[axis:])
                cur = receiver(rho)
                if prev is not None:
                    for k in np.nonzero(cur > prev + slack)[0]:
                        found.append((rho, axis, int(k)))
                prev = cur
    return found
