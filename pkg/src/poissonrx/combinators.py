"""Routing and coding closures: build new Poisson receivers from existing ones."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DegreeDistribution, PoissonReceiver, ValidationError, as_load

log = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class RoutingMatrix:
    """Row-stochastic K1 x K2 matrix; row k1 spreads external class k1 over inner classes."""

    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        R = np.array(self.entries, dtype=float)
        if R.ndim != 2 or R.size == 0:
            raise ValidationError(f"routing matrix must be a nonempty 2-D array, got shape {R.shape}")
        if np.any(~np.isfinite(R)) or np.any(R < 0.0) or np.any(R > 1.0):
            raise ValidationError("routing probabilities must lie in [0, 1]")
        sums = R.sum(axis=1)
        bad = np.nonzero(np.abs(sums - 1.0) > 1e-12)[0]
        if bad.size:
            raise ValidationError(f"routing rows {list(bad + 1)} do not sum to 1: {sums[bad]}")
        R.setflags(write=False)
        object.__setattr__(self, "entries", R)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


def route(inner: PoissonReceiver, R) -> PoissonReceiver:
    """Feed external classes into ``inner`` through routing matrix ``R``.

    Inner loads are ``G @ R``; an external class succeeds with the
    routing-weighted mix of the inner success probabilities.
    """
    if not isinstance(R, RoutingMatrix):
        R = RoutingMatrix(R)
    K1, K2 = R.shape
    if K2 != inner.num_classes:
        raise ValidationError(f"routing matrix has {K2} columns, inner receiver has {inner.num_classes} classes")
    M = R.entries

    def success(G):
        return M @ inner(G @ M)

    return PoissonReceiver(K1, success, normal=inner.normal, name=f"route({inner.name})")


@dataclass(frozen=True)
class CodeSpec:
    """Per-class transmission code: copy-count distribution plus ideal-FEC threshold.

    ``n0`` is the number of received blocks needed to decode; ``n0 = 1`` is
    plain repetition.
    """

    dd: DegreeDistribution
    n0: int = 1
    label: str = ""

    def __post_init__(self):
        if int(self.n0) != self.n0 or self.n0 < 1:
            raise ValidationError(f"n0 must be a positive integer, got {self.n0}")
        if self.dd.n_max < 1:
            raise ValidationError("degree distribution with all mass at 0 cannot be used as a code")
        if self.n0 > self.dd.min_degree:
            raise ValidationError(
                f"n0 = {self.n0} exceeds the smallest transmitted degree {self.dd.min_degree}"
            )

    @classmethod
    def repetition(cls, n: int, label: str = "") -> "CodeSpec":
        return cls(DegreeDistribution.monomial(n), 1, label)

    @classmethod
    def fec(cls, n: int, n0: int, label: str = "") -> "CodeSpec":
        return cls(DegreeDistribution.monomial(n), n0, label)


def fec_tail(dd: DegreeDistribution, n0: int, p):
    """``sum_{j < n0} dd^(j)(p) (1 - p)^j / j!``.

    With ``p`` the per-block failure probability this is the chance that
    fewer than ``n0`` blocks get through. For ``n0 = 1`` it is ``dd(p)``.
    """
    if n0 == 1:
        return dd(p)
    total = 0.0
    for j in range(n0):
        total += dd.derivative(j, p) * (1.0 - p) ** j / math.factorial(j)
    return total


def _excess(specs: Sequence[CodeSpec]) -> list[DegreeDistribution]:
    return [s.dd.excess() for s in specs]


def _check_specs(inner: PoissonReceiver, specs: Sequence[CodeSpec]) -> None:
    if len(specs) != inner.num_classes:
        raise ValidationError(f"{len(specs)} code specs for a {inner.num_classes}-class receiver")


def de_step(inner: PoissonReceiver, specs: Sequence[CodeSpec], q, rho,
            _excess_dds: Sequence[DegreeDistribution] | None = None):
    """One synchronous density-evolution update for all classes.

    Returns ``(p, q_next)`` where ``p`` is the receiver-end failure
    probability under the thinned load ``q * rho``.
    """
    _check_specs(inner, specs)
    K = inner.num_classes
    q = np.asarray(q, dtype=float)
    if q.shape != (K,) or np.any(q < 0.0) or np.any(q > 1.0):
        raise ValidationError(f"q must be a length-{K} vector in [0, 1], got {q}")
    rho = as_load(rho, K)
    lam = _excess_dds if _excess_dds is not None else _excess(specs)
    p = 1.0 - inner(q * rho)
    p = np.clip(p, 0.0, 1.0)
    q_next = np.array([fec_tail(lam[k], specs[k].n0, p[k]) for k in range(K)])
    return p, np.clip(q_next, 0.0, 1.0)


@dataclass
class DensityEvolutionTrace:
    """Full DE history.

    ``q[i]`` is the user-end failure probability after iteration ``i``
    (``q[0]`` is all ones); ``p[i]`` (for ``i >= 1``) is the receiver-end
    failure probability of iteration ``i``, and ``p[0]`` is unused (NaN).
    ``success`` is the terminal per-class success probability computed from
    the last ``p``.
    """

    G: np.ndarray
    rho: np.ndarray
    p: np.ndarray
    q: np.ndarray
    success: np.ndarray
    converged: bool
    iterations_used: int

    @property
    def q_limit(self) -> np.ndarray:
        return self.q[-1]

    def is_monotone(self, slack: float = 1e-12) -> bool:
        return bool(np.all(np.diff(self.q, axis=0) <= slack))


def terminal_success(specs: Sequence[CodeSpec], p) -> np.ndarray:
    """Per-class decoding probability given receiver-end failure ``p``."""
    return np.array([1.0 - fec_tail(s.dd, s.n0, pk) for s, pk in zip(specs, p)])


def de_trace(inner: PoissonReceiver, specs: Sequence[CodeSpec], G,
             max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL) -> DensityEvolutionTrace:
    """Iterate DE from ``q = 1`` at normalized load ``G``.

    Stops after ``max_iters`` updates or once no class moves by ``tol`` or
    more. The per-receiver load is ``rho_k = G_k * mean degree of class k``.
    """
    _check_specs(inner, specs)
    if max_iters < 1:
        raise ValidationError(f"max_iters must be at least 1, got {max_iters}")
    K = inner.num_classes
    G = as_load(G, K, "normalized load")
    rho = G * np.array([s.dd.mean() for s in specs])
    lam = _excess(specs)
    q = np.ones(K)
    ps = [np.full(K, np.nan)]
    qs = [q]
    converged = False
    for _ in range(max_iters):
        p, q_next = de_step(inner, specs, q, rho, lam)
        ps.append(p)
        qs.append(q_next)
        done = np.max(np.abs(q_next - q)) < tol
        q = q_next
        if done:
            converged = True
            break
    trace = DensityEvolutionTrace(
        G=G, rho=rho, p=np.array(ps), q=np.array(qs),
        success=np.clip(terminal_success(specs, ps[-1]), 0.0, 1.0),
        converged=converged, iterations_used=len(ps) - 1,
    )
    if inner.normal and not trace.is_monotone():
        log.warning("non-monotone DE trace for normal receiver %s at G=%s", inner.name, G)
    return trace


def code(inner: PoissonReceiver, specs: Sequence[CodeSpec],
         max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL) -> PoissonReceiver:
    """Coded Poisson receiver over ``inner``; evaluated at normalized loads ``G``."""
    _check_specs(inner, specs)
    specs = tuple(specs)

    def success(G):
        return de_trace(inner, specs, G, max_iters, tol).success

    labels = ",".join(s.label or f"n0={s.n0}" for s in specs)
    return PoissonReceiver(inner.num_classes, success, normal=inner.normal,
                           name=f"code({inner.name};{labels})")
