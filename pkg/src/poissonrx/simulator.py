"""Finite-frame Monte Carlo of coded slotted ALOHA with spatial and temporal SIC."""
from __future__ import annotations

import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .core import ChannelModel, DegreeDistribution, ValidationError

MODES = ("plain", "spatial", "spatial_temporal")
GENERATOR = "numpy.random.PCG64 seeded by SeedSequence(base_seed, spawn_key=(trial,))"
WORKERS_ENV = "POISSONRX_WORKERS"
Z95 = 1.959963984540054


@dataclass(frozen=True)
class SimClass:
    """One user class: population, copy-count law, FEC threshold and reach law.

    Give exactly one of ``N`` (users per frame) or ``G`` (users per slot).
    ``reach`` overrides the scenario channel for this class; a fixed
    footprint is ``ChannelModel.fixed(J, receivers)``.
    """

    dd: DegreeDistribution
    N: int | None = None
    G: float | None = None
    n0: int = 1
    reach: ChannelModel | None = None
    label: str = ""

    def __post_init__(self):
        if (self.N is None) == (self.G is None):
            raise ValidationError("give exactly one of N or G for a simulated class")
        if self.N is not None and (int(self.N) != self.N or self.N < 0):
            raise ValidationError(f"N must be a nonnegative integer, got {self.N}")
        if self.G is not None and not self.G >= 0:
            raise ValidationError(f"G must be nonnegative, got {self.G}")
        if self.n0 < 1 or self.n0 > max(self.dd.min_degree, 1):
            raise ValidationError(f"n0 = {self.n0} incompatible with degree support")


@dataclass(frozen=True)
class Scenario:
    T_slots: int
    channel: ChannelModel
    classes: tuple[SimClass, ...]
    mode: str = "spatial_temporal"
    max_sic_iters: int = 100
    poisson_population: bool = False

    def __post_init__(self):
        if self.T_slots < 1:
            raise ValidationError(f"T_slots must be at least 1, got {self.T_slots}")
        if self.mode not in MODES:
            raise ValidationError(f"unknown decode mode {self.mode!r}; expected one of {MODES}")
        if not self.classes:
            raise ValidationError("scenario needs at least one class")
        object.__setattr__(self, "classes", tuple(self.classes))
        for k, c in enumerate(self.classes):
            if c.reach is not None and c.reach.J != self.channel.J:
                raise ValidationError(f"class {k + 1} reach law has J = {c.reach.J}, channel has J = {self.channel.J}")

    @property
    def J(self) -> int:
        return self.channel.J

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def populations(self) -> list[int]:
        """Nominal users per class; ``round(G * T_slots)`` when given as G."""
        return [c.N if c.N is not None else int(round(c.G * self.T_slots)) for c in self.classes]

    def mean_populations(self) -> list[float]:
        return [float(c.N) if c.N is not None else c.G * self.T_slots for c in self.classes]

    @cached_property
    def _tables(self):
        out = []
        for c in self.classes:
            law = c.reach or self.channel
            out.append((c.dd.array, np.cumsum(law.probs), law.state_bits()))
        return out


@dataclass
class Instance:
    """One frame: users, their copies, slots and per-copy reach sets."""

    T_slots: int
    J: int
    num_classes: int
    user_class: np.ndarray
    user_n0: np.ndarray
    copy_user: np.ndarray
    copy_slot: np.ndarray
    copy_reach: np.ndarray

    @property
    def num_users(self) -> int:
        return len(self.user_class)

    @property
    def num_copies(self) -> int:
        return len(self.copy_user)


@dataclass
class DecodeResult:
    decoded: np.ndarray
    population: np.ndarray
    user_success: np.ndarray
    sic_iterations_used: int


def trial_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(base_seed, spawn_key=(index,))))


def build_instance(s: Scenario, seed) -> Instance:
    """Draw one frame. ``seed`` is an int (trial 0 of that base seed) or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else trial_rng(int(seed), 0)
    user_class, user_n0 = [], []
    copy_user, copy_slot, copy_reach = [], [], []
    offset = 0
    for k, (c, (dd, reach_cdf, bits)) in enumerate(zip(s.classes, s._tables)):
        if s.poisson_population:
            n = int(rng.poisson(s.mean_populations()[k]))
        else:
            n = s.populations()[k]
        if n == 0:
            continue
        if len(dd) == 2 and dd[0] == 0.0:
            degrees = np.ones(n, dtype=np.int64)
        else:
            degrees = np.searchsorted(np.cumsum(dd), rng.random(n), side="right")
            degrees = np.minimum(degrees, len(dd) - 1)
        total = int(degrees.sum())
        owners = np.repeat(np.arange(offset, offset + n), degrees)
        slots = rng.integers(s.T_slots, size=total)
        states = np.searchsorted(reach_cdf, rng.random(total), side="right")
        states = np.minimum(states, len(reach_cdf) - 1)
        user_class.append(np.full(n, k))
        user_n0.append(np.full(n, c.n0))
        copy_user.append(owners)
        copy_slot.append(slots)
        copy_reach.append(bits[states])
        offset += n

    def cat(parts, dtype, shape=(0,)):
        return np.concatenate(parts) if parts else np.zeros(shape, dtype=dtype)

    return Instance(
        T_slots=s.T_slots, J=s.J, num_classes=s.num_classes,
        user_class=cat(user_class, np.int64), user_n0=cat(user_n0, np.int64),
        copy_user=cat(copy_user, np.int64), copy_slot=cat(copy_slot, np.int64),
        copy_reach=cat(copy_reach, bool, (0, s.J)),
    )


def sic_decode(inst: Instance, mode: str, max_iters: int = 100,
               rng: np.random.Generator | None = None) -> DecodeResult:
    """Decode a frame.

    ``plain``: a copy is received when it is alone in some (slot, receiver)
    cell. ``spatial``: peel within each slot, cancelling a decoded packet at
    every receiver of that slot. ``spatial_temporal``: peel globally,
    cancelling every copy of a decoded packet; at most ``max_iters`` rounds.
    A user decodes once ``n0`` of its copies are received. Passing ``rng``
    processes ready cells in random order instead of round order.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown decode mode {mode!r}; expected one of {MODES}")
    J, ncopies, nusers = inst.J, inst.num_copies, inst.num_users
    population = np.bincount(inst.user_class, minlength=inst.num_classes)
    copy_idx, rx = np.nonzero(inst.copy_reach)
    cells = inst.copy_slot[copy_idx] * J + rx
    counts = np.bincount(cells, minlength=inst.T_slots * J)

    if mode == "plain":
        received = np.zeros(ncopies, dtype=bool)
        received[copy_idx[counts[cells] == 1]] = True
        got = np.bincount(inst.copy_user, weights=received, minlength=nusers)
        success = got >= inst.user_n0
        iters = 0
    else:
        success, iters = _peel(inst, mode, max_iters, rng, copy_idx, cells, counts)

    decoded = np.bincount(inst.user_class[success], minlength=inst.num_classes)
    return DecodeResult(decoded, population, success, iters)


def _peel(inst, mode, max_iters, rng, copy_idx, cells, counts):
    nusers = inst.num_users
    ncopies = inst.num_copies
    if mode == "spatial":
        max_iters = ncopies + 1
    count = counts.tolist()
    idsum = np.bincount(cells, weights=copy_idx, minlength=len(counts)).astype(np.int64).tolist()
    cells_of = [[] for _ in range(ncopies)]
    for c, cell in zip(copy_idx.tolist(), cells.tolist()):
        cells_of[c].append(cell)
    copy_user = inst.copy_user.tolist()
    copy_slot = inst.copy_slot.tolist()
    copies_of = [[] for _ in range(nusers)]
    for c, u in enumerate(copy_user):
        copies_of[u].append(c)
    n0 = inst.user_n0.tolist()

    removed = [False] * ncopies
    got = [0] * nusers
    done = [False] * nusers
    ready = [(cell, 1) for cell, n in enumerate(count) if n == 1]
    queue = deque(ready) if rng is None else ready
    rounds = 0

    while queue:
        if rng is None:
            cell, gen = queue.popleft()
        else:
            i = int(rng.integers(len(queue)))
            queue[i], queue[-1] = queue[-1], queue[i]
            cell, gen = queue.pop()
        if gen > max_iters or count[cell] != 1:
            continue
        c = idsum[cell]
        rounds = max(rounds, gen)
        u = copy_user[c]
        got[u] += 1
        if got[u] >= n0[u]:
            done[u] = True
        if done[u]:
            victims = [v for v in copies_of[u] if not removed[v]
                       and (mode == "spatial_temporal" or copy_slot[v] == copy_slot[c])]
        else:
            victims = [c]
        for v in victims:
            removed[v] = True
            for vc in cells_of[v]:
                count[vc] -= 1
                idsum[vc] -= v
                if count[vc] == 1:
                    queue.append((vc, gen + 1))
    return np.array(done, dtype=bool), rounds


@dataclass
class TrialStats:
    """Aggregate of independent trials.

    ``success`` pools all users of a class over all runs; ``half_width`` is
    the 95% normal-approximation binomial half-width of that proportion.
    Throughput is decoded users per slot, averaged over runs.
    """

    runs: int
    seed: int
    T_slots: int
    users: np.ndarray
    decoded: np.ndarray
    per_run_decoded: np.ndarray = field(repr=False)
    sic_iterations: np.ndarray = field(repr=False)

    @property
    def success(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.users > 0, self.decoded / np.maximum(self.users, 1), 1.0)

    @property
    def error(self) -> np.ndarray:
        return 1.0 - self.success

    @property
    def half_width(self) -> np.ndarray:
        p = self.success
        return Z95 * np.sqrt(p * (1.0 - p) / np.maximum(self.users, 1))

    @property
    def throughput(self) -> np.ndarray:
        return self.decoded / (self.runs * self.T_slots)

    @property
    def throughput_half_width(self) -> np.ndarray:
        return self.half_width * self.users / (self.runs * self.T_slots)

    @property
    def run_half_width(self) -> np.ndarray:
        """Half-width of mean throughput from run-to-run spread (t-free, 95%)."""
        if self.runs < 2:
            return np.full(self.decoded.shape, np.nan)
        per_run = self.per_run_decoded / self.T_slots
        return Z95 * per_run.std(axis=0, ddof=1) / np.sqrt(self.runs)

    def total_success(self) -> float:
        return float(self.decoded.sum() / max(self.users.sum(), 1))


def _run_chunk(args):
    s, base_seed, indices = args
    K = s.num_classes
    users = np.zeros((len(indices), K), dtype=np.int64)
    decoded = np.zeros((len(indices), K), dtype=np.int64)
    iters = np.zeros(len(indices), dtype=np.int64)
    for row, i in enumerate(indices):
        res = sic_decode(build_instance(s, trial_rng(base_seed, i)), s.mode, s.max_sic_iters)
        users[row] = res.population
        decoded[row] = res.decoded
        iters[row] = res.sic_iterations_used
    return users, decoded, iters


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_trials(s: Scenario, runs: int, base_seed: int, workers: int | None = None) -> TrialStats:
    """Run ``runs`` independent frames; trial ``i`` uses ``trial_rng(base_seed, i)``.

    Results do not depend on ``workers``: per-trial rows are reassembled in
    trial order and reduced by integer sums.
    """
    if runs < 1:
        raise ValidationError(f"runs must be at least 1, got {runs}")
    workers = workers or worker_count()
    indices = list(range(runs))
    if workers > 1 and runs > 1:
        chunks = [indices[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_chunk, [(s, base_seed, ch) for ch in chunks]))
        K = s.num_classes
        users = np.zeros((runs, K), dtype=np.int64)
        decoded = np.zeros((runs, K), dtype=np.int64)
        iters = np.zeros(runs, dtype=np.int64)
        for ch, (u, d, it) in zip(chunks, parts):
            users[ch], decoded[ch], iters[ch] = u, d, it
    else:
        users, decoded, iters = _run_chunk((s, base_seed, indices))
    return TrialStats(
        runs=runs, seed=base_seed, T_slots=s.T_slots,
        users=users.sum(axis=0), decoded=decoded.sum(axis=0),
        per_run_decoded=decoded, sic_iterations=iters,
    )
