"""Brute-force ground truth for small systems."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .core import CapacityError, ChannelModel, DegreeDistribution, ValidationError
from .simulator import Instance, Scenario, SimClass, run_trials, sic_decode

ENUMERATION_LIMIT = 10**7


class SmallSystem(Scenario):
    """A scenario small enough to enumerate: T_slots <= 3, <= 4 users, J <= 2, degree <= 3."""

    def __post_init__(self):
        super().__post_init__()
        if self.T_slots > 3:
            raise CapacityError(f"T_slots = {self.T_slots} > 3")
        if self.J > 2:
            raise CapacityError(f"J = {self.J} > 2")
        if self.poisson_population:
            raise ValidationError("small systems use fixed populations")
        if sum(self.populations()) > 4:
            raise CapacityError(f"{sum(self.populations())} users > 4")
        if any(c.dd.n_max > 3 for c in self.classes):
            raise CapacityError("degree support above 3")


def _user_options(sys: Scenario, k: int) -> list[tuple[float, list[tuple[int, tuple[bool, ...]]]]]:
    """All (log-probability, copies) outcomes for one class-k user."""
    cls = sys.classes[k]
    law = cls.reach or sys.channel
    states = [(tuple(bool(b) for b in bits), math.log(p)) for bits, p in law.states() if p > 0.0]
    log_slot = -math.log(sys.T_slots)
    out = []
    for ell, lam in enumerate(cls.dd.coeffs):
        if lam <= 0.0:
            continue
        base = math.log(lam) + ell * log_slot
        for slots in itertools.product(range(sys.T_slots), repeat=ell):
            for picks in itertools.product(states, repeat=ell):
                lp = base + sum(s[1] for s in picks)
                out.append((lp, [(slot, s[0]) for slot, s in zip(slots, picks)]))
    return out


def exact_success(sys: Scenario) -> np.ndarray:
    """Exact per-class success probability by enumerating every frame outcome.

    Every combination of copy counts, slot choices and channel states is
    weighted by its probability (accumulated as a log and exponentiated once)
    and decoded with the simulator's own decoder.
    """
    if not isinstance(sys, SmallSystem):
        sys = SmallSystem(**{f: getattr(sys, f) for f in Scenario.__dataclass_fields__})
    pops = sys.populations()
    users = [k for k, n in enumerate(pops) for _ in range(n)]
    options = {k: _user_options(sys, k) for k in set(users)}
    size = math.prod(len(options[k]) for k in users) if users else 1
    if size > ENUMERATION_LIMIT:
        raise CapacityError(f"{size} outcomes exceed the enumeration limit {ENUMERATION_LIMIT}")
    K = sys.num_classes
    if not users:
        return np.ones(K)
    user_class = np.array(users, dtype=np.int64)
    user_n0 = np.array([sys.classes[k].n0 for k in users], dtype=np.int64)
    acc = np.zeros(K)
    for combo in itertools.product(*(options[k] for k in users)):
        logw = 0.0
        cu, cs, cr = [], [], []
        for u, (lp, copies) in enumerate(combo):
            logw += lp
            for slot, bits in copies:
                cu.append(u)
                cs.append(slot)
                cr.append(bits)
        inst = Instance(
            T_slots=sys.T_slots, J=sys.J, num_classes=K,
            user_class=user_class, user_n0=user_n0,
            copy_user=np.array(cu, dtype=np.int64), copy_slot=np.array(cs, dtype=np.int64),
            copy_reach=np.array(cr, dtype=bool).reshape(len(cr), sys.J),
        )
        res = sic_decode(inst, sys.mode, sys.max_sic_iters)
        acc += math.exp(logw) * res.decoded
    pops = np.array(pops, dtype=float)
    return np.where(pops > 0, acc / np.maximum(pops, 1), 1.0)


def fixpoint_root(fn: Callable[[float], float], tol: float = 1e-12, grid: int = 2000) -> float:
    """Largest fixpoint of ``fn`` on [0, 1] by grid scan plus bisection.

    Returns 1.0 when ``fn(1) = 1`` and 0.0 when ``fn(q) < q`` on all of (0, 1].
    """
    g = lambda q: fn(q) - q
    if abs(g(1.0)) <= tol:
        return 1.0
    # walk down from 1 to the first grid point where fn is on or above the diagonal
    pts = np.linspace(1.0, 0.0, grid + 1)
    hi = 1.0
    for q in pts[1:]:
        q = float(q)
        if g(q) >= 0.0:
            lo = q
            break
        hi = q
    else:
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    return 0.0 if root < tol else root


def _advance(dist: np.ndarray, step) -> np.ndarray:
    """Union-of-reach-sets distribution after one more independent arrival."""
    nxt = np.zeros_like(dist)
    for mask, pm in enumerate(dist):
        if pm == 0.0:
            continue
        for s, ps in step:
            nxt[mask | s] += pm * ps
    return nxt


def _hit_set_distribution(J: int, step, n: int) -> np.ndarray:
    dist = np.zeros(2**J)
    dist[0] = 1.0
    for _ in range(n):
        dist = _advance(dist, step)
    return dist


def _mask(channel: ChannelModel, A: Iterable[int]) -> int:
    m = 0
    for j in A:
        m |= 1 << (channel.J - j)
    return m


def psuc_any_enumerated(channel: ChannelModel, rho: float, A: Iterable[int], tail: float = 1e-18) -> float:
    """Probability a tagged packet is alone at some receiver of ``A``.

    Sums over the Poisson number of other arrivals and the exact
    distribution of the receivers they cover, without inclusion-exclusion.
    """
    target = _mask(channel, A)
    if target == 0:
        return 0.0
    step = [(s, p) for s, p in enumerate(channel.probs) if p > 0.0]
    total, n, weight = 0.0, 0, math.exp(-rho)
    dist = np.zeros(2**channel.J)
    dist[0] = 1.0
    while True:
        ok = sum(p for mask, p in enumerate(dist) if (mask & target) != target)
        total += weight * ok
        if n > rho and weight < tail:
            break
        n += 1
        weight *= rho / n
        dist = _advance(dist, step)
    return total


def plain_success_finite(channel: ChannelModel, N: int, T: int) -> float:
    """Exact plain-mode success of one of ``N`` single-copy users in ``T`` slots.

    Each of the ``N - 1`` other users lands in the tagged slot with
    probability ``1/T`` and then reaches receivers per ``channel``.
    """
    step = [(0, 1.0 - 1.0 / T)] + [(s, p / T) for s, p in enumerate(channel.probs) if p > 0.0]
    dist = _hit_set_distribution(channel.J, step, N - 1)
    total = 0.0
    for s, pc in enumerate(channel.probs):
        if pc == 0.0 or s == 0:
            continue
        total += pc * sum(p for mask, p in enumerate(dist) if (mask & s) != s)
    return total


def _corpus() -> dict[str, SmallSystem]:
    x = DegreeDistribution.monomial
    single, sym3, sym5 = ChannelModel.single(), ChannelModel.symmetric(0.3), ChannelModel.symmetric(0.5)
    mixed = DegreeDistribution.from_coeffs([0.0, 0.5, 0.5])
    return {
        "sa-two-users": SmallSystem(2, single, (SimClass(x(1), N=2),), "plain"),
        "spatial-one-slot": SmallSystem(1, sym5, (SimClass(x(1), N=2),), "spatial"),
        "crdsa-three-slots": SmallSystem(3, single, (SimClass(x(2), N=3),), "spatial_temporal"),
        "correlated-crdsa": SmallSystem(2, sym3, (SimClass(x(2), N=3),), "spatial_temporal"),
        "two-class-fec": SmallSystem(3, sym5, (SimClass(x(3), N=1, n0=2), SimClass(x(1), N=2)),
                                     "spatial_temporal"),
        "mixed-degree-plain": SmallSystem(2, sym5, (SimClass(mixed, N=3),), "plain"),
    }


CORPUS = _corpus()


@dataclass
class FrequencyCheck:
    exact: np.ndarray
    frequency: np.ndarray
    sigma: np.ndarray
    trials: int

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            d = self.frequency - self.exact
            return np.where(self.sigma > 0, d / np.where(self.sigma > 0, self.sigma, 1.0),
                            np.where(np.abs(d) <= 1e-12, 0.0, np.inf))

    def agrees(self, nsigma: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.z) <= nsigma))


def frequency_check(sys: Scenario, trials: int, seed: int, workers: int | None = None) -> FrequencyCheck:
    """Exact success versus simulated frequencies.

    The standard error uses the spread of per-trial success fractions, since
    users of one frame are not independent.
    """
    st = run_trials(sys, trials, seed, workers)
    pops = np.array(sys.populations(), dtype=float)
    frac = st.per_run_decoded / np.maximum(pops, 1.0)
    sigma = frac.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.full(len(pops), np.inf)
    return FrequencyCheck(exact_success(sys), st.success, sigma, trials)
