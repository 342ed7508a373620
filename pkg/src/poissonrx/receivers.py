"""Concrete Poisson receivers for slotted ALOHA over on-off fading channels."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import CapacityError, ChannelModel, PoissonReceiver, ValidationError, as_load

DEFAULT_ENUMERATION_CAP = 14


def _subset(channel: ChannelModel, A: Iterable[int]) -> frozenset[int]:
    A = frozenset(int(j) for j in A)
    for j in A:
        if not 1 <= j <= channel.J:
            raise ValidationError(f"receiver index {j} outside 1..{channel.J}")
    return A


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not math.isfinite(rho) or rho < 0.0:
        raise ValidationError(f"offered load must be finite and nonnegative, got {rho}")
    return rho


def reach_probability(channel: ChannelModel, A: Iterable[int]) -> float:
    """Probability that a transmission reaches at least one receiver of ``A`` (1-based)."""
    A = _subset(channel, A)
    if not A:
        return 0.0
    return math.fsum(
        p for bits, p in channel.states() if any(bits[j - 1] for j in A)
    )


def psuc_all(channel: ChannelModel, rho: float, A: Iterable[int]) -> float:
    """Probability a tagged packet is the sole arrival at every receiver of ``A``."""
    rho = _check_rho(rho)
    return math.exp(-rho * reach_probability(channel, A))


def psuc_any(channel: ChannelModel, rho: float, A: Iterable[int]) -> float:
    """Probability a tagged packet is alone at one or more receivers of ``A``.

    Inclusion-exclusion over the nonempty subsets of ``A``.
    """
    rho = _check_rho(rho)
    A = sorted(_subset(channel, A))
    total = 0.0
    for size in range(1, len(A) + 1):
        sign = 1.0 if size % 2 else -1.0
        for sub in itertools.combinations(A, size):
            total += sign * psuc_all(channel, rho, sub)
    return min(max(total, 0.0), 1.0)


def make_collision_sa() -> PoissonReceiver:
    return PoissonReceiver(1, lambda rho: np.exp(-rho), normal=True, name="collision-sa")


def make_tfold(Tf: int) -> PoissonReceiver:
    """T-fold ALOHA: a slot with at most ``Tf`` packets decodes all of them."""
    if int(Tf) != Tf or Tf < 1:
        raise ValidationError(f"Tf must be a positive integer, got {Tf}")
    Tf = int(Tf)

    def success(rho):
        r = float(rho[0])
        term, total = math.exp(-r), 0.0
        for t in range(Tf):
            total += term
            term *= r / (t + 1)
        return np.array([total])

    return PoissonReceiver(1, success, normal=True, name=f"{Tf}-fold-aloha")


def make_onoff_receiver(channel: ChannelModel) -> PoissonReceiver:
    """Non-cooperative SA over ``channel``: average of ``psuc_any(A(c))`` over states."""

    def success(rho):
        r = float(rho[0])
        acc = math.fsum(
            p * psuc_any(channel, r, [j + 1 for j, b in enumerate(bits) if b])
            for bits, p in channel.states()
            if p > 0.0
        )
        return np.array([acc])

    return PoissonReceiver(1, success, normal=True, name=f"onoff-J{channel.J}")


def make_two_receiver(channel: ChannelModel, cooperative: bool) -> PoissonReceiver:
    if channel.J != 2:
        raise ValidationError(f"two-receiver model needs J = 2, got J = {channel.J}")
    P11, P10, P01, P00 = channel.P11, channel.P10, channel.P01, channel.P00
    a, b, c = P11 + P10, P11 + P01, 1.0 - P00

    def success(rho):
        r = rho[0]
        out = a * np.exp(-r * a) + b * np.exp(-r * b) - P11 * np.exp(-r * c)
        if cooperative:
            # a lone both-receiver packet cancelled at the other receiver
            out = out + (P01 + P10) * r * P11 * np.exp(-r * c)
        return np.atleast_1d(out)

    kind = "coop" if cooperative else "noncoop"
    return PoissonReceiver(1, success, normal=True, name=f"two-receiver-{kind}")


def make_two_receiver_three_class(cooperative: bool) -> PoissonReceiver:
    """Two receivers; class 1 reaches receiver 1, class 2 receiver 2, class 3 both."""

    def success(rho):
        r1, r2, r3 = rho
        e13 = math.exp(-(r1 + r3))
        e23 = math.exp(-(r2 + r3))
        eall = math.exp(-(r1 + r2 + r3))
        p3 = e13 + e23 - eall
        if cooperative:
            return np.array([e13 + r3 * eall, e23 + r3 * eall, p3])
        return np.array([e13, e23, p3])

    kind = "coop" if cooperative else "noncoop"
    return PoissonReceiver(3, success, normal=True, name=f"three-class-{kind}")


@dataclass(frozen=True)
class AssociationGraph:
    """Class-to-receiver footprints ``B_k`` (1-based receiver indices)."""

    T_recv: int
    B: tuple[frozenset[int], ...]
    cap: int = DEFAULT_ENUMERATION_CAP

    @classmethod
    def from_sets(cls, B: Sequence[Iterable[int]], T_recv: int | None = None,
                  cap: int = DEFAULT_ENUMERATION_CAP) -> "AssociationGraph":
        sets = tuple(frozenset(int(r) for r in b) for b in B)
        if T_recv is None:
            T_recv = max((max(b) for b in sets if b), default=0)
        return cls(int(T_recv), sets, cap)

    def __post_init__(self):
        if not self.B:
            raise ValidationError("association graph needs at least one class")
        for k, b in enumerate(self.B, 1):
            if not b:
                raise ValidationError(f"class {k} has an empty receiver set")
            bad = [r for r in b if not 1 <= r <= self.T_recv]
            if bad:
                raise ValidationError(f"class {k} uses receivers {bad} outside 1..{self.T_recv}")

    @property
    def K(self) -> int:
        return len(self.B)


@dataclass(frozen=True)
class ConfigurationOutcome:
    m: tuple[int, ...]
    w: tuple[int, ...]


def decode_configuration(
    assoc: AssociationGraph, m: Sequence[int], order: Sequence[int] | None = None
) -> ConfigurationOutcome:
    """Peel one slot's configuration graph with spatial SIC.

    ``m[k]`` is the truncated class-k arrival count in {0, 1, 2}. Receivers in
    the footprint of any class with ``m_k = 2`` are jammed for good. A class
    with ``m_k = 1`` decodes once some unjammed receiver of its footprint hears
    no other undecoded class; decoding cancels it everywhere. ``order`` fixes
    the scan order of classes; the outcome does not depend on it.
    """
    m = tuple(int(x) for x in m)
    if len(m) != assoc.K:
        raise ValidationError(f"configuration has {len(m)} entries, graph has {assoc.K} classes")
    if any(x not in (0, 1, 2) for x in m):
        raise ValidationError(f"configuration entries must be 0, 1 or 2: {m}")
    jammed = set()
    for k, mk in enumerate(m):
        if mk == 2:
            jammed |= assoc.B[k]
    pending = [k for k in (order if order is not None else range(assoc.K)) if m[k] == 1]
    load: dict[int, int] = {}
    for k in pending:
        for r in assoc.B[k]:
            load[r] = load.get(r, 0) + 1
    w = [0] * assoc.K
    progress = True
    while progress:
        progress = False
        for k in list(pending):
            if any(load[r] == 1 and r not in jammed for r in assoc.B[k]):
                w[k] = 1
                pending.remove(k)
                for r in assoc.B[k]:
                    load[r] -= 1
                progress = True
    return ConfigurationOutcome(m, tuple(w))


class MultiReceiverTable:
    """Decoded-count table ``w_k(m)`` over all ``3**K`` configurations.

    Rows follow ``itertools.product(range(3), repeat=K)`` order, i.e. class 1
    is the most significant base-3 digit.
    """

    def __init__(self, assoc: AssociationGraph):
        if assoc.K > assoc.cap:
            raise CapacityError(
                f"K = {assoc.K} exceeds the enumeration cap {assoc.cap}: "
                f"3**{assoc.K} = {3**assoc.K} configurations per evaluation"
            )
        self.assoc = assoc
        K = assoc.K
        try:
            w = np.zeros((3**K, K), dtype=np.uint8)
        except (ValueError, MemoryError):
            raise CapacityError(f"cannot allocate the 3**{K} configuration table") from None
        for i, m in enumerate(itertools.product(range(3), repeat=K)):
            if 1 in m:
                w[i] = decode_configuration(assoc, m).w
        self.w = w


def h_factors(rho_k: float) -> np.ndarray:
    """Probabilities of 0, 1 and at-least-2 Poisson(rho_k) arrivals."""
    e = math.exp(-rho_k)
    return np.array([e, rho_k * e, max(1.0 - e - rho_k * e, 0.0)])


def configuration_weights(rho) -> np.ndarray:
    """p(m) for every configuration in table order."""
    rho = as_load(rho)
    p = np.ones(1)
    for r in rho:
        p = np.multiply.outer(p, h_factors(r)).ravel()
    return p


def make_multi_receiver(assoc: AssociationGraph) -> PoissonReceiver:
    """Cooperative SA receivers with class footprints ``assoc.B``.

    The class-k success probability is the expected decoded count over the
    ``3**K`` configurations divided by ``rho_k``. Dividing the one-arrival
    factor ``rho_k e^{-rho_k}`` by ``rho_k`` leaves ``e^{-rho_k}``, which is
    used directly so the formula stays exact at ``rho_k = 0``.
    """
    table = MultiReceiverTable(assoc)
    K = assoc.K
    shape = (3,) * K
    slices = [table.w[:, k].reshape(shape).take(1, axis=k).astype(float) for k in range(K)]

    def success(rho):
        factors = [h_factors(r) for r in rho]
        out = np.empty(K)
        for k in range(K):
            t = slices[k]
            for j in range(K):
                if j != k:
                    t = np.tensordot(factors[j], t, axes=([0], [0]))
            out[k] = math.exp(-rho[k]) * float(t)
        return out

    return PoissonReceiver(K, success, normal=True, name=f"multi-receiver-K{K}")


def correlation_coefficient(P11: float) -> float:
    """Correlation of the two reach indicators when ``P10 = P01 = (1 - P11)/2``."""
    P11 = float(P11)
    if not 0.0 <= P11 <= 1.0:
        raise ValidationError(f"P11 must lie in [0, 1], got {P11}")
    return -(1.0 - P11) / (1.0 + P11)
