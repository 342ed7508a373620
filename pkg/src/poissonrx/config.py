"""Declarative scenario documents (YAML or JSON) turned into receivers and scenarios.

Every parse error is a ``ValidationError`` whose ``path`` names the
offending location, e.g. ``code[2].n0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .combinators import DEFAULT_MAX_ITERS, DEFAULT_TOL, CodeSpec, code, de_trace, route
from .core import CapacityError, ChannelModel, DegreeDistribution, PoissonReceiver, ValidationError
from .receivers import (
    DEFAULT_ENUMERATION_CAP, AssociationGraph, make_collision_sa, make_multi_receiver,
    make_onoff_receiver, make_tfold, make_two_receiver, make_two_receiver_three_class,
)
from .simulator import MODES, Scenario, SimClass

BASE_RECEIVERS = ("collision_sa", "tfold", "onoff", "two_receiver", "three_class", "multi_receiver")


def _fail(path: str, msg: str):
    raise ValidationError(msg, path)


def _mapping(doc, path: str) -> Mapping:
    if not isinstance(doc, Mapping):
        _fail(path, f"expected a mapping, got {type(doc).__name__}")
    return doc


def _unknown(doc: Mapping, allowed, path: str) -> None:
    extra = sorted(set(doc) - set(allowed))
    if extra:
        _fail(path, f"unknown keys {extra}; allowed {sorted(allowed)}")


def _number(x, path: str, lo: float | None = None, integer: bool = False):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        _fail(path, f"expected a number, got {x!r}")
    if not math.isfinite(x):
        _fail(path, f"expected a finite number, got {x!r}")
    if integer and int(x) != x:
        _fail(path, f"expected an integer, got {x!r}")
    if lo is not None and x < lo:
        _fail(path, f"must be at least {lo}, got {x!r}")
    return int(x) if integer else float(x)


def _wrap(path: str, fn, *args, **kwargs):
    """Call a constructor, tagging its validation errors with ``path``."""
    try:
        return fn(*args, **kwargs)
    except ValidationError as e:
        if e.path:
            raise
        raise ValidationError(str(e), path) from None


def parse_channel(doc, path: str = "channel") -> ChannelModel:
    """``single`` | ``{symmetric: P11}`` | ``{P11, P10, P01}`` | ``{J, states}`` | ``{J, fixed}``."""
    if doc is None or doc == "single":
        return ChannelModel.single()
    doc = _mapping(doc, path)
    if "symmetric" in doc:
        _unknown(doc, {"symmetric"}, path)
        return _wrap(path, ChannelModel.symmetric, _number(doc["symmetric"], f"{path}.symmetric"))
    if "P11" in doc:
        _unknown(doc, {"P11", "P10", "P01"}, path)
        vals = [_number(doc.get(k, 0.0), f"{path}.{k}", 0.0) for k in ("P11", "P10", "P01")]
        return _wrap(path, ChannelModel.two_receiver, *vals)
    _unknown(doc, {"J", "states", "fixed"}, path)
    if "J" not in doc:
        _fail(path, "missing J")
    J = _number(doc["J"], f"{path}.J", 1, integer=True)
    if "fixed" in doc:
        return _wrap(f"{path}.fixed", ChannelModel.fixed, J, _int_list(doc["fixed"], f"{path}.fixed"))
    states = _mapping(doc.get("states"), f"{path}.states")
    probs = {}
    for key, p in states.items():
        probs[str(key)] = _number(p, f"{path}.states.{key}", 0.0)
    return _wrap(f"{path}.states", ChannelModel.from_states, J, probs)


def _int_list(x, path: str) -> list[int]:
    if not isinstance(x, (list, tuple)):
        _fail(path, f"expected a list of integers, got {x!r}")
    return [_number(v, f"{path}[{i + 1}]", integer=True) for i, v in enumerate(x)]


def parse_dd(x, path: str) -> DegreeDistribution:
    """A coefficient list ``[L0, L1, ...]`` or an integer ``n`` for ``x**n``."""
    if isinstance(x, (list, tuple)):
        coeffs = [_number(c, f"{path}[{i}]", 0.0) for i, c in enumerate(x)]
        return _wrap(path, DegreeDistribution.from_coeffs, coeffs)
    return DegreeDistribution.monomial(_number(x, path, 0, integer=True))


def parse_code(doc, K: int, path: str = "code") -> tuple[CodeSpec, ...]:
    if not isinstance(doc, list):
        _fail(path, "expected a list with one entry per class")
    if len(doc) != K:
        _fail(path, f"{len(doc)} code entries for {K} classes")
    specs = []
    for i, entry in enumerate(doc):
        p = f"{path}[{i + 1}]"
        entry = _mapping(entry, p)
        _unknown(entry, {"dd", "n0", "label"}, p)
        if "dd" not in entry:
            _fail(p, "missing dd")
        dd = parse_dd(entry["dd"], f"{p}.dd")
        n0 = _number(entry.get("n0", 1), f"{p}.n0", 1, integer=True)
        specs.append(_wrap(p, CodeSpec, dd, n0, str(entry.get("label", ""))))
    return tuple(specs)


def parse_base_receiver(doc, channel: ChannelModel, path: str = "receiver") -> PoissonReceiver:
    doc = _mapping(doc, path)
    base = doc.get("base")
    if base not in BASE_RECEIVERS:
        _fail(f"{path}.base", f"unknown receiver {base!r}; expected one of {list(BASE_RECEIVERS)}")
    coop = doc.get("cooperative", True)
    if not isinstance(coop, bool):
        _fail(f"{path}.cooperative", f"expected true or false, got {coop!r}")
    if base == "collision_sa":
        return make_collision_sa()
    if base == "tfold":
        return _wrap(f"{path}.Tf", make_tfold, _number(doc.get("Tf", 1), f"{path}.Tf", 1, integer=True))
    if base == "onoff":
        return make_onoff_receiver(channel)
    if base == "two_receiver":
        return _wrap("channel", make_two_receiver, channel, coop)
    if base == "three_class":
        return make_two_receiver_three_class(coop)
    B = doc.get("B")
    if not isinstance(B, list) or not B:
        _fail(f"{path}.B", "expected a nonempty list of receiver sets")
    sets = [_int_list(b, f"{path}.B[{i + 1}]") for i, b in enumerate(B)]
    cap = _number(doc.get("cap", DEFAULT_ENUMERATION_CAP), f"{path}.cap", 1, integer=True)
    T_recv = doc.get("T_recv")
    if T_recv is not None:
        T_recv = _number(T_recv, f"{path}.T_recv", 1, integer=True)
    assoc = _wrap(f"{path}.B", AssociationGraph.from_sets, sets, T_recv, cap)
    try:
        return make_multi_receiver(assoc)
    except CapacityError as e:
        raise CapacityError(str(e), f"{path}.B") from None


@dataclass
class Pipeline:
    """Analytic receiver built from a config: base, optional routing, optional code."""

    receiver: PoissonReceiver
    inner: PoissonReceiver
    specs: tuple[CodeSpec, ...] | None
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL

    @property
    def K(self) -> int:
        return self.receiver.num_classes

    @property
    def coded(self) -> bool:
        return self.specs is not None

    def trace(self, G):
        if self.specs is None:
            raise ValidationError("pipeline has no code block", "code")
        return de_trace(self.inner, self.specs, G, self.max_iters, self.tol)

    def with_iters(self, max_iters: int | None = None, tol: float | None = None) -> "Pipeline":
        m = self.max_iters if max_iters is None else max_iters
        t = self.tol if tol is None else tol
        rx = code(self.inner, self.specs, m, t) if self.specs is not None else self.receiver
        return Pipeline(rx, self.inner, self.specs, m, t)


def parse_pipeline(doc: Mapping, channel: ChannelModel) -> Pipeline:
    if "receiver" not in doc:
        _fail("receiver", "missing receiver block")
    rdoc = _mapping(doc["receiver"], "receiver")
    _unknown(rdoc, {"base", "cooperative", "Tf", "B", "T_recv", "cap", "route"}, "receiver")
    rx = parse_base_receiver(rdoc, channel)
    if rdoc.get("route") is not None:
        R = rdoc["route"]
        if not isinstance(R, list) or not all(isinstance(r, list) for r in R):
            _fail("receiver.route", "expected a list of rows")
        rows = [[_number(v, f"receiver.route[{i + 1}][{j + 1}]", 0.0) for j, v in enumerate(r)]
                for i, r in enumerate(R)]
        if len({len(r) for r in rows}) > 1:
            _fail("receiver.route", "rows have different lengths")
        rx = _wrap("receiver.route", route, rx, np.array(rows, dtype=float))
    de = _mapping(doc.get("de", {}) or {}, "de")
    _unknown(de, {"max_iters", "tol"}, "de")
    max_iters = _number(de.get("max_iters", DEFAULT_MAX_ITERS), "de.max_iters", 1, integer=True)
    tol = _number(de.get("tol", DEFAULT_TOL), "de.tol", 0.0)
    specs = None
    if doc.get("code") is not None:
        specs = parse_code(doc["code"], rx.num_classes)
    p = Pipeline(rx, rx, specs, max_iters, tol)
    return p.with_iters()


def parse_grid(doc, K: int, path: str = "grid") -> np.ndarray:
    """Load points as an (n, K) array.

    ``values: [...]`` (K = 1), ``points: [[...], ...]`` or
    ``range: {start, stop, step}`` scaled by an optional ``direction`` vector.
    """
    if doc is None:
        return np.zeros((0, K))
    doc = _mapping(doc, path)
    _unknown(doc, {"values", "points", "range", "direction"}, path)
    if "points" in doc:
        pts = doc["points"]
        if not isinstance(pts, list):
            _fail(f"{path}.points", "expected a list of load vectors")
        rows = []
        for i, row in enumerate(pts):
            rp = f"{path}.points[{i + 1}]"
            row = row if isinstance(row, list) else [row]
            if len(row) != K:
                _fail(rp, f"has {len(row)} entries, receiver has {K} classes")
            rows.append([_number(v, f"{rp}[{j + 1}]", 0.0) for j, v in enumerate(row)])
        return np.array(rows, dtype=float).reshape(len(rows), K)
    if "values" in doc:
        vals = doc["values"]
        if not isinstance(vals, list):
            _fail(f"{path}.values", "expected a list of loads")
        t = np.array([_number(v, f"{path}.values[{i + 1}]", 0.0) for i, v in enumerate(vals)], dtype=float)
    elif "range" in doc:
        r = _mapping(doc["range"], f"{path}.range")
        _unknown(r, {"start", "stop", "step"}, f"{path}.range")
        start = _number(r.get("start", 0.0), f"{path}.range.start", 0.0)
        stop = _number(r.get("stop"), f"{path}.range.stop", start)
        step = _number(r.get("step"), f"{path}.range.step")
        if step <= 0:
            _fail(f"{path}.range.step", "must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        t = np.round(start + step * np.arange(n), 12)
    else:
        _fail(path, "expected one of values, points or range")
    if "direction" in doc:
        d = np.array([_number(v, f"{path}.direction[{i + 1}]", 0.0)
                      for i, v in enumerate(doc["direction"])], dtype=float)
        if d.size != K:
            _fail(f"{path}.direction", f"has {d.size} entries, receiver has {K} classes")
    elif K == 1:
        d = np.ones(1)
    else:
        _fail(path, f"a {K}-class receiver needs points or a direction vector")
    return t[:, None] * d[None, :]


@dataclass
class SimulationConfig:
    T_slots: int
    runs: int
    seed: int
    mode: str
    max_sic_iters: int
    poisson_population: bool
    channel: ChannelModel
    classes: list[dict] = field(default_factory=list)

    def scenario(self, G=None, N=None) -> Scenario:
        """Scenario at per-class normalized loads ``G`` or explicit populations ``N``."""
        if (G is None) == (N is None):
            raise ValidationError("give exactly one of G or N")
        if G is not None:
            G = np.atleast_1d(np.asarray(G, dtype=float))
        classes = []
        for k, c in enumerate(self.classes):
            pop = {"N": int(N[k])} if N is not None else {"G": float(G[k])}
            classes.append(SimClass(c["dd"], n0=c["n0"], reach=c["reach"], label=c["label"], **pop))
        return Scenario(self.T_slots, self.channel, tuple(classes), self.mode,
                        self.max_sic_iters, self.poisson_population)


def parse_simulation(doc, channel: ChannelModel, K: int, specs, path: str = "simulation") -> SimulationConfig:
    doc = _mapping(doc, path)
    _unknown(doc, {"T_slots", "runs", "seed", "mode", "max_sic_iters", "poisson_population", "classes"}, path)
    T = _number(doc.get("T_slots", 1000), f"{path}.T_slots", 1, integer=True)
    runs = _number(doc.get("runs", 100), f"{path}.runs", 1, integer=True)
    seed = _number(doc.get("seed", 0), f"{path}.seed", 0, integer=True)
    mode = doc.get("mode", "spatial_temporal")
    if mode not in MODES:
        _fail(f"{path}.mode", f"unknown decode mode {mode!r}; expected one of {list(MODES)}")
    iters = _number(doc.get("max_sic_iters", DEFAULT_MAX_ITERS), f"{path}.max_sic_iters", 1, integer=True)
    pois = doc.get("poisson_population", False)
    if not isinstance(pois, bool):
        _fail(f"{path}.poisson_population", "expected true or false")
    cdocs = doc.get("classes")
    if cdocs is None:
        cdocs = [{}] * K
    if not isinstance(cdocs, list) or len(cdocs) != K:
        _fail(f"{path}.classes", f"expected a list of {K} class entries")
    classes = []
    for k, c in enumerate(cdocs):
        p = f"{path}.classes[{k + 1}]"
        c = _mapping(c, p)
        _unknown(c, {"dd", "n0", "reach", "label"}, p)
        if "dd" in c:
            dd = parse_dd(c["dd"], f"{p}.dd")
        elif specs is not None:
            dd = specs[k].dd
        else:
            dd = DegreeDistribution.monomial(1)
        default_n0 = specs[k].n0 if specs is not None and "dd" not in c else 1
        n0 = _number(c.get("n0", default_n0), f"{p}.n0", 1, integer=True)
        reach = parse_channel(c["reach"], f"{p}.reach") if c.get("reach") is not None else None
        if reach is not None and reach.J != channel.J:
            _fail(f"{p}.reach", f"reach law has J = {reach.J}, channel has J = {channel.J}")
        label = str(c.get("label", specs[k].label if specs is not None else ""))
        _wrap(p, SimClass, dd, G=0.0, n0=n0, reach=reach)
        classes.append({"dd": dd, "n0": n0, "reach": reach, "label": label})
    return SimulationConfig(T, runs, seed, mode, iters, pois, channel, classes)


@dataclass
class AdmissionConfig:
    T_slots: int
    populations: list[int | None]
    search: int
    protected: int
    target: float
    max_population: int


def parse_admission(doc, K: int, path: str = "admission") -> AdmissionConfig:
    doc = _mapping(doc, path)
    _unknown(doc, {"T_slots", "populations", "protected", "target", "max_population"}, path)
    T = _number(doc.get("T_slots"), f"{path}.T_slots", 1, integer=True)
    pops = doc.get("populations")
    if not isinstance(pops, list) or len(pops) != K:
        _fail(f"{path}.populations", f"expected {K} entries, with null marking the searched class")
    parsed = [None if v is None else _number(v, f"{path}.populations[{i + 1}]", 0, integer=True)
              for i, v in enumerate(pops)]
    free = [i for i, v in enumerate(parsed) if v is None]
    if len(free) != 1:
        _fail(f"{path}.populations", "exactly one entry must be null (the searched class)")
    prot = _number(doc.get("protected", 1), f"{path}.protected", 1, integer=True)
    if prot > K:
        _fail(f"{path}.protected", f"class {prot} out of range 1..{K}")
    if prot - 1 == free[0]:
        _fail(f"{path}.protected", "protected class cannot be the searched class")
    target = _number(doc.get("target", 1e-5), f"{path}.target", 0.0)
    if not 0.0 < target < 1.0:
        _fail(f"{path}.target", f"must lie in (0, 1), got {target}")
    cap = _number(doc.get("max_population", 100000), f"{path}.max_population", 1, integer=True)
    return AdmissionConfig(T, parsed, free[0], prot - 1, target, cap)


@dataclass
class ScenarioConfig:
    raw: dict
    channel: ChannelModel
    pipeline: Pipeline
    grid: np.ndarray
    simulation: SimulationConfig | None
    admission: AdmissionConfig | None
    output: dict


def parse_config(doc: Any) -> ScenarioConfig:
    doc = _mapping(doc, "<root>")
    _unknown(doc, {"channel", "receiver", "code", "de", "grid", "simulation", "admission", "output"}, "<root>")
    channel = parse_channel(doc.get("channel"))
    pipeline = parse_pipeline(doc, channel)
    K = pipeline.K
    grid = parse_grid(doc.get("grid"), K)
    sim = None
    if doc.get("simulation") is not None:
        sim = parse_simulation(doc["simulation"], channel, K, pipeline.specs)
    adm = None
    if doc.get("admission") is not None:
        adm = parse_admission(doc["admission"], K)
    out = _mapping(doc.get("output", {}) or {}, "output")
    _unknown(out, {"csv", "metadata"}, "output")
    return ScenarioConfig(dict(doc), channel, pipeline, grid, sim, adm, dict(out))


def load_config(path) -> ScenarioConfig:
    """Read a YAML (or JSON, a YAML subset) scenario file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ValidationError(f"cannot read config: {e.strerror}", str(path)) from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ValidationError(f"not valid YAML/JSON: {e}", str(path)) from None
    return parse_config(doc)


__all__ = [
    "AdmissionConfig", "Pipeline", "ScenarioConfig", "SimulationConfig",
    "load_config", "parse_channel", "parse_config", "parse_dd", "parse_grid",
]
