"""Theory tables of every registered figure against frozen CSVs in tests/golden."""
import csv
import io
import math
from pathlib import Path

import pytest

from poissonrx.cli import render_csv
from poissonrx.experiments import REGISTRY, run_figure

GOLDEN = Path(__file__).parent / "golden"


def parse(text):
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.reader(io.StringIO("\n".join(body))))


def same(a, b):
    if a == b:
        return True
    try:
        return math.isclose(float(a), float(b), rel_tol=1e-9, abs_tol=1e-12)
    except ValueError:
        return False


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_theory_matches_golden(name):
    for t in run_figure(name):
        want = parse((GOLDEN / f"{t.name}.csv").read_text())
        got = parse(render_csv(t))
        assert got[0] == want[0]
        assert len(got) == len(want)
        for r, (g, w) in enumerate(zip(got[1:], want[1:])):
            assert all(same(x, y) for x, y in zip(g, w)) and len(g) == len(w), (t.name, r, g, w)


def test_golden_has_no_orphans():
    names = {t.name for n in REGISTRY for t in run_figure(n)}
    assert {p.stem for p in GOLDEN.glob("*.csv")} == names
