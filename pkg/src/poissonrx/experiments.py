"""Table builders, admission search and the built-in figure registry."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import __version__
from .combinators import CodeSpec, code, route
from .config import AdmissionConfig, Pipeline, SimulationConfig, parse_config
from .core import ChannelModel, DegreeDistribution, ValidationError
from .receivers import correlation_coefficient, make_two_receiver, make_two_receiver_three_class
from .simulator import GENERATOR, Scenario, SimClass, run_trials


class AdmissionError(RuntimeError):
    """The admission search could not produce a threshold."""

    category = "admission"


class MonotonicityError(AdmissionError):
    category = "monotonicity"


@dataclass
class Table:
    name: str
    header: list[str]
    rows: list[list] = field(default_factory=list)
    footer: list[str] = field(default_factory=list)


def fmt(x) -> str:
    """Stable text form: integers as-is, floats with 12 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return ""
        return format(x, ".12g")
    return str(x)


def _class_cols(prefix: str, K: int) -> list[str]:
    return [f"{prefix}_{k + 1}" for k in range(K)]


def eval_table(p: Pipeline, grid: np.ndarray) -> Table:
    """Per-class success and throughput over the load grid."""
    K = p.K
    load = "G" if p.coded else "rho"
    t = Table("eval", _class_cols(load, K) + _class_cols("psuc", K) + _class_cols("S", K))
    for x in grid:
        ps = p.receiver(x)
        t.rows.append([*x, *ps, *(x * ps)])
    return t


def de_table(p: Pipeline, grid: np.ndarray) -> Table:
    """Full DE trace per grid point; the last row of each block is marked ``terminal``."""
    if not p.coded:
        raise ValidationError("density evolution needs a code block", "code")
    K = p.K
    t = Table("de", _class_cols("G", K) + ["row", "i"] + _class_cols("p", K)
              + _class_cols("q", K) + _class_cols("psuc", K) + ["converged"])
    for x in grid:
        tr = p.trace(x)
        blank = [float("nan")] * K
        for i in range(tr.q.shape[0]):
            t.rows.append([*x, "iter", i, *tr.p[i], *tr.q[i], *blank, ""])
        t.rows.append([*x, "terminal", tr.iterations_used, *tr.p[-1], *tr.q[-1],
                       *tr.success, tr.converged])
    return t


def simulate_table(sim: SimulationConfig, grid: np.ndarray, runs: int | None = None,
                   seed: int | None = None, workers: int | None = None) -> Table:
    runs = sim.runs if runs is None else runs
    seed = sim.seed if seed is None else seed
    K = len(sim.classes)
    header = (_class_cols("G", K) + _class_cols("success", K) + _class_cols("error", K)
              + _class_cols("half_width", K) + _class_cols("throughput", K)
              + _class_cols("throughput_half_width", K) + ["runs", "seed"])
    t = Table("simulate", header)
    for x in grid:
        st = run_trials(sim.scenario(x), runs, seed, workers)
        t.rows.append([*x, *st.success, *st.error, *st.half_width, *st.throughput,
                       *st.throughput_half_width, runs, seed])
    t.footer = [f"generator: {GENERATOR}", f"version: poissonrx {__version__}",
                f"mode: {sim.mode}", f"T_slots: {sim.T_slots}"]
    return t


# --- admission ------------------------------------------------------------

@dataclass
class AdmissionResult:
    N: int
    error_at: float
    error_next: float
    target: float
    evaluated: dict[int, float]
    capped: bool = False


def admission_search(error: Callable[[int], float], target: float, max_population: int = 100000,
                     slack: float | None = None) -> AdmissionResult:
    """Largest ``N`` with ``error(N) <= target``, assuming ``error`` is nondecreasing.

    Doubling then bisection. Every evaluated point is checked against
    monotonicity and a violation aborts with the offending pair.
    """
    slack = 1e-12 * target if slack is None else slack
    seen: dict[int, float] = {}

    def ev(n: int) -> float:
        if n in seen:
            return seen[n]
        seen[n] = float(error(n))
        pts = sorted(seen)
        i = pts.index(n)
        for a, b in zip(pts[max(i - 1, 0):i + 1], pts[i:i + 2]):
            if a != b and seen[a] > seen[b] + slack:
                raise MonotonicityError(
                    f"error not monotone in the searched population: "
                    f"error({a}) = {seen[a]:.6g} > error({b}) = {seen[b]:.6g}"
                )
        return seen[n]

    if ev(0) > target:
        raise AdmissionError(
            f"target {target:g} unattainable: error is {seen[0]:.6g} with no searched users"
        )
    lo, hi = 0, 1
    while ev(hi) <= target:
        lo = hi
        if hi >= max_population:
            return AdmissionResult(hi, seen[hi], float("nan"), target, seen, capped=True)
        hi = min(2 * hi, max_population)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ev(mid) <= target:
            lo = mid
        else:
            hi = mid
    ev(lo + 1)
    return AdmissionResult(lo, seen[lo], seen[lo + 1], target, seen)


def admission_loads(adm: AdmissionConfig, n: int) -> np.ndarray:
    pops = [n if v is None else v for v in adm.populations]
    return np.array(pops, dtype=float) / adm.T_slots


def de_admission(p: Pipeline, adm: AdmissionConfig) -> AdmissionResult:
    if not p.coded:
        raise ValidationError("admission search needs a code block", "code")

    def error(n):
        return 1.0 - p.receiver(admission_loads(adm, n))[adm.protected]

    return admission_search(error, adm.target, adm.max_population)


def mc_protected_error(sim: SimulationConfig, adm: AdmissionConfig, n: int, runs: int, seed: int,
                       workers: int | None = None):
    """Simulated protected-class error and its 95% half-width at searched population ``n``."""
    if sim.T_slots != adm.T_slots:
        raise ValidationError(f"simulation T_slots {sim.T_slots} differs from admission T_slots {adm.T_slots}",
                              "simulation.T_slots")
    pops = [n if v is None else v for v in adm.populations]
    st = run_trials(sim.scenario(N=pops), runs, seed, workers)
    return float(st.error[adm.protected]), float(st.half_width[adm.protected])


def admission_table(name: str, res: AdmissionResult, mc: dict[int, tuple[float, float]] | None = None) -> Table:
    header = ["scenario", "N", "error_at_N", "error_at_N_plus_1", "target", "capped"]
    row = [name, res.N, res.error_at, res.error_next, res.target, res.capped]
    if mc is not None:
        header += ["mc_error_at_N", "mc_half_width_at_N", "mc_error_at_N_plus_1", "mc_half_width_at_N_plus_1"]
        row += [*mc[res.N], *mc[res.N + 1]]
    return Table(name, header, [row])


# --- built-in scenario documents -----------------------------------------

URLLC_T = 256
URLLC_N = 100
URLLC_L = 5


def _admission_doc(channel, receiver: dict, reach: list | None) -> dict:
    doc = {
        "channel": channel,
        "receiver": receiver,
        "code": [{"dd": URLLC_L, "label": "urllc"}, {"dd": 1, "label": "embb"}],
        "de": {"max_iters": 100},
        "admission": {"T_slots": URLLC_T, "populations": [URLLC_N, None], "protected": 1, "target": 1e-5},
        "simulation": {"T_slots": URLLC_T, "runs": 100000, "seed": 1, "mode": "spatial_temporal",
                       "max_sic_iters": 100},
    }
    if reach is not None:
        doc["simulation"]["classes"] = [{"reach": r} for r in reach]
    return doc


ADMISSION_DOCS = {
    "admit-single": _admission_doc("single", {"base": "collision_sa", "route": [[1.0], [1.0]]}, None),
    "admit-coop": _admission_doc({"P11": 0.5, "P10": 0.25, "P01": 0.25},
                                 {"base": "two_receiver", "cooperative": True, "route": [[1.0], [1.0]]}, None),
    # URLLC copies reach both receivers; each eMBB packet goes to one receiver at random
    "admit-diff": _admission_doc(
        {"J": 2, "states": {"11": 1.0}},
        {"base": "three_class", "cooperative": True, "route": [[0.0, 0.0, 1.0], [0.5, 0.5, 0.0]]},
        [{"J": 2, "fixed": [1, 2]}, {"J": 2, "states": {"10": 0.5, "01": 0.5}}],
    ),
}


# --- figure registry ------------------------------------------------------

LOAD_CHANNELS = {"fig-load-a": 0.0, "fig-load-b": 0.3, "fig-load-c": 1.0}
FIG_T = 1000
FIG_RUNS = 100
FIG_ITERS = 100


def _grid(start: float, stop: float, step: float) -> np.ndarray:
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 12)


def three_systems(P11: float, max_iters: int = FIG_ITERS):
    """Non-cooperative, spatial and spatial-temporal receivers on the symmetric channel."""
    ch = ChannelModel.symmetric(P11)
    coop = make_two_receiver(ch, True)
    return ch, {
        "noncoop": make_two_receiver(ch, False),
        "spatial": coop,
        "spatial_temporal": code(coop, [CodeSpec.repetition(2)], max_iters),
    }


MODE_OF = {"noncoop": ("plain", 1), "spatial": ("spatial", 1), "spatial_temporal": ("spatial_temporal", 2)}


def load_theory(P11: float, grid=None) -> Table:
    grid = _grid(0.05, 2.5, 0.05) if grid is None else grid
    _, rx = three_systems(P11)
    t = Table("theory", ["G", "S_noncoop", "S_spatial", "S_spatial_temporal"])
    for G in grid:
        t.rows.append([G, *(G * rx[k]([G])[0] for k in ("noncoop", "spatial", "spatial_temporal"))])
    return t


def load_simulation(P11: float, runs: int = FIG_RUNS, seed: int = 1, grid=None, workers=None,
                    T_slots: int = FIG_T) -> Table:
    """Simulated throughput per system with the binomial and run-to-run half-widths."""
    grid = _grid(0.1, 2.0, 0.1) if grid is None else grid
    ch, rx = three_systems(P11)
    t = Table("simulation", ["G", "system", "mode", "theory", "throughput", "half_width",
                             "run_half_width", "runs", "seed"])
    for G in grid:
        for name, (mode, L) in MODE_OF.items():
            s = Scenario(T_slots, ch, (SimClass(DegreeDistribution.monomial(L), G=float(G)),), mode, FIG_ITERS)
            st = run_trials(s, runs, seed, workers)
            t.rows.append([G, name, mode, G * rx[name]([G])[0], st.throughput[0],
                           st.throughput_half_width[0], st.run_half_width[0], runs, seed])
    t.footer = [f"generator: {GENERATOR}", f"version: poissonrx {__version__}"]
    return t


def p11_theory(G: float = 1.2, grid=None) -> Table:
    grid = _grid(0.0, 1.0, 0.1) if grid is None else grid
    t = Table("theory", ["P11", "omega", "S_noncoop", "S_spatial", "S_spatial_temporal"])
    for P11 in grid:
        _, rx = three_systems(float(P11))
        t.rows.append([P11, correlation_coefficient(P11),
                       *(G * rx[k]([G])[0] for k in ("noncoop", "spatial", "spatial_temporal"))])
    return t


FEC_CODES = ((2, 1), (4, 2), (3, 1), (6, 2))


def fec_throughput(x: float, n: int, n0: int, P11: float = 0.3, max_iters: int = FIG_ITERS) -> float:
    """Throughput at ``N/T = x`` of an ``(n, n0)`` code over ``n0 T`` slots."""
    coop = make_two_receiver(ChannelModel.symmetric(P11), True)
    rx = code(coop, [CodeSpec.fec(n, n0)], max_iters)
    return x * rx([x / n0])[0]


def fec_theory(grid=None) -> Table:
    grid = _grid(0.05, 2.0, 0.05) if grid is None else grid
    t = Table("theory", ["x"] + [f"S_{n}_{n0}" for n, n0 in FEC_CODES])
    for x in grid:
        t.rows.append([x, *(fec_throughput(x, n, n0) for n, n0 in FEC_CODES)])
    return t


def fec_simulation(runs: int = FIG_RUNS, seed: int = 1, grid=None, workers=None) -> Table:
    grid = _grid(0.1, 2.0, 0.1) if grid is None else grid
    ch = ChannelModel.symmetric(0.3)
    t = Table("simulation", ["x", "code", "theory", "throughput", "half_width", "runs", "seed"])
    for x in grid:
        for n, n0 in FEC_CODES:
            N = int(round(x * FIG_T))
            s = Scenario(n0 * FIG_T, ch, (SimClass(DegreeDistribution.monomial(n), N=N, n0=n0),),
                         "spatial_temporal", FIG_ITERS)
            st = run_trials(s, runs, seed, workers)
            scale = N / FIG_T
            t.rows.append([x, f"({n},{n0})", fec_throughput(x, n, n0), scale * st.success[0],
                           scale * st.half_width[0], runs, seed])
    t.footer = [f"generator: {GENERATOR}", f"version: poissonrx {__version__}"]
    return t


def admit_p11(grid=None) -> Table:
    """Admissible eMBB users versus P11 for two cooperative receivers on a common channel."""
    grid = _grid(0.0, 1.0, 0.05) if grid is None else grid
    t = Table("theory", ["P11", "omega", "N", "error_at_N", "error_at_N_plus_1"])
    for P11 in grid:
        doc = dict(ADMISSION_DOCS["admit-coop"])
        half = (1.0 - P11) / 2.0
        doc["channel"] = {"P11": float(P11), "P10": half, "P01": half}
        cfg = parse_config(doc)
        res = de_admission(cfg.pipeline, cfg.admission)
        t.rows.append([P11, correlation_coefficient(P11), res.N, res.error_at, res.error_next])
    return t


def invmux(rho4: float = 8.0, grid=None) -> Table:
    """Class-4 traffic split (p, 1 - p) over the two single-receiver classes, no class-3 load."""
    grid = _grid(0.0, 1.0, 0.05) if grid is None else grid
    inner = make_two_receiver_three_class(True)
    t = Table("theory", ["p", "S", "S_closed_form"])
    for p in grid:
        rx = route(inner, [[0.0, 0.0, 1.0], [p, 1.0 - p, 0.0]])
        S = rho4 * rx([0.0, rho4])[1]
        closed = p * rho4 * math.exp(-p * rho4) + (1 - p) * rho4 * math.exp(-(1 - p) * rho4)
        t.rows.append([p, S, closed])
    return t


@dataclass
class Figure:
    name: str
    description: str
    theory: Callable[[], list[Table]]
    simulation: Callable[..., list[Table]] | None = None


def _admit_entry(name: str):
    def theory():
        cfg = parse_config(ADMISSION_DOCS[name])
        t = admission_table(name, de_admission(cfg.pipeline, cfg.admission))
        t.name = "theory"
        return [t]

    def simulation(runs=None, seed=1, workers=None):
        cfg = parse_config(ADMISSION_DOCS[name])
        res = de_admission(cfg.pipeline, cfg.admission)
        runs = runs or cfg.simulation.runs
        mc = {n: mc_protected_error(cfg.simulation, cfg.admission, n, runs, seed, workers)
              for n in (res.N, res.N + 1)}
        t = admission_table(name, res, mc)
        t.name = "montecarlo"
        return [t]

    return theory, simulation


def _registry() -> dict[str, Figure]:
    reg = {}
    for name, P11 in LOAD_CHANNELS.items():
        reg[name] = Figure(
            name, f"throughput vs G, P11={P11}, T={FIG_T}, two copies for spatial-temporal",
            lambda P11=P11: [load_theory(P11)],
            lambda runs=FIG_RUNS, seed=1, workers=None, P11=P11: [load_simulation(P11, runs, seed, workers=workers)],
        )
    reg["fig-p11"] = Figure("fig-p11", "throughput vs P11 at G=1.2", lambda: [p11_theory()])
    reg["fig-fec"] = Figure(
        "fig-fec", "(2,1), (4,2), (3,1), (6,2) codes vs N/T, P11=0.3",
        lambda: [fec_theory()],
        lambda runs=FIG_RUNS, seed=1, workers=None: [fec_simulation(runs, seed, workers=workers)],
    )
    reg["fig-admit-p11"] = Figure("fig-admit-p11", "admissible eMBB users vs P11, common channel",
                                  lambda: [admit_p11()])
    for name, desc in (("admit-single", "one CSA receiver"),
                       ("admit-coop", "two cooperative receivers, common channel P11=0.5"),
                       ("admit-diff", "two receivers, URLLC to both, eMBB split 50/50")):
        th, sim = _admit_entry(name)
        reg[name] = Figure(name, f"URLLC/eMBB admission: {desc}", th, sim)
    reg["invmux"] = Figure("invmux", "inverse multiplexer throughput vs split p at rho4=8", lambda: [invmux()])
    return reg


REGISTRY = _registry()


def run_figure(name: str, simulate: bool = False, runs: int | None = None, seed: int = 1,
               workers: int | None = None) -> list[Table]:
    if name not in REGISTRY:
        raise ValidationError(f"unknown figure {name!r}; registry: {', '.join(sorted(REGISTRY))}", "figure")
    fig = REGISTRY[name]
    tables = fig.theory()
    if simulate:
        if fig.simulation is None:
            raise ValidationError(f"figure {name!r} has no simulation overlay", "figure")
        kwargs = {"seed": seed, "workers": workers}
        if runs is not None:
            kwargs["runs"] = runs
        tables += fig.simulation(**kwargs)
    for t in tables:
        t.name = f"{name}-{t.name}"
    return tables
