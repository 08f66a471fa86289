import json
import math
import shutil
import subprocess

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brokenstrip.geometry import GammaBC
from brokenstrip.harness import (
    AsymptoticComparison,
    ComparisonRecord,
    Regime,
    SolveConfig,
    ThresholdReference,
    broken_strip_spectrum,
    canonical_json,
    content_hash,
    dive_sweep,
    exact_alpha0_dirichlet_spectrum,
    exact_alpha0_spectrum,
    fit_rate,
    format_value,
    tip_mass_fraction,
    track_branches,
    transverse_threshold,
    trapezoid_spectrum,
    verify_thm1_discrete,
    write_csv,
    write_json,
    write_manifest,
)

PI2 = math.pi**2


def test_exact_spectra():
    assert exact_alpha0_spectrum(1.0, 1)[0] == pytest.approx(5 * PI2 / 4)
    assert exact_alpha0_spectrum(0.05, 1)[0] == pytest.approx(PI2 * 400.25)
    lam = exact_alpha0_spectrum(0.3, 5)
    assert np.allclose(np.diff(lam), [(2 * p + 2) * PI2 for p in range(4)])
    assert exact_alpha0_dirichlet_spectrum(0.1, 2) == pytest.approx([PI2 * 101, PI2 * 104])
    with pytest.raises(ValueError):
        exact_alpha0_spectrum(0.0, 1)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_transverse_threshold_p1_closed_form(n):
    h = 1 / n
    exact = 6 / h**2 * (1 - math.cos(math.pi * h)) / (2 + math.cos(math.pi * h))
    assert transverse_threshold(np.linspace(0, 1, n + 1), 1) == pytest.approx(exact, rel=1e-13)


def test_transverse_threshold_p2_order_four():
    errs = [transverse_threshold(np.linspace(0, 1, n + 1), 2) - PI2 for n in (4, 8)]
    assert errs[0] > errs[1] > 0
    assert 14 < errs[0] / errs[1] < 17
    with pytest.raises(ValueError):
        transverse_threshold([0.0, 1.0])


def test_solve_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(h_factor=0.7)
    with pytest.raises(ValueError):
        SolveConfig(order=3)
    with pytest.raises(ValueError):
        SolveConfig(refinements=-1)
    cfg = SolveConfig(refinements=2, threshold="exact")
    assert cfg.thickness_h == pytest.approx(1 / 24)
    assert cfg.threshold is ThresholdReference.EXACT
    assert cfg.to_dict()["threshold"] == "exact"


def test_alpha0_trapezoid_matches_exact():
    spec = trapezoid_spectrum(0.05, 0.0, 3, config=SolveConfig(refinements=1))
    exact = exact_alpha0_spectrum(0.05, 3)
    assert np.max(np.abs(spec.eigenvalues - exact) / exact) < 1e-4
    assert spec.threshold_discrete > spec.threshold_exact
    assert spec.count_below == 0


def test_dirichlet_variant_at_alpha0():
    spec = trapezoid_spectrum(0.05, 0.0, 3, GammaBC.DIRICHLET, SolveConfig(refinements=1))
    exact = exact_alpha0_dirichlet_spectrum(0.05, 3)
    assert np.max(np.abs(spec.eigenvalues - exact) / exact) < 1e-4


def test_threshold_reference_switch():
    disc = trapezoid_spectrum(0.05, 0.5, 2)
    ex = trapezoid_spectrum(0.05, 0.5, 2, config=SolveConfig(threshold="exact"))
    assert np.allclose(disc.eigenvalues, ex.eigenvalues)
    assert ex.shifted[0] - disc.shifted[0] == pytest.approx(disc.threshold_discrete - disc.threshold_exact)


def test_dive_and_tip_localization_at_quarter_pi():
    spec = trapezoid_spectrum(0.02, math.pi / 4, 2, keep_vectors=True)
    assert spec.eigenvalues[0] < PI2 / 0.02**2
    assert spec.count_below == 1
    assert tip_mass_fraction(spec, 1, 10 * 0.02) >= 0.9
    assert tip_mass_fraction(spec, 2, 10 * 0.02) < 0.5
    with pytest.raises(ValueError):
        tip_mass_fraction(trapezoid_spectrum(0.1, 0.3, 1), 1, 1.0)


def test_discrete_regime_empty_at_zero():
    comp = verify_thm1_discrete(0.0, [0.1, 0.05])
    assert comp.empty and not comp.meets_floor
    assert any("empty regime" in f for f in comp.flags)


def test_broken_strip_alpha0_union():
    eps = 0.05
    spec = broken_strip_spectrum(eps, 0.0, 5, SolveConfig(refinements=1))
    sym = exact_alpha0_spectrum(eps, 5)
    skew = exact_alpha0_dirichlet_spectrum(eps, 5)
    exact = sorted([(v, "symmetric") for v in sym] + [(v, "antisymmetric") for v in skew])[:5]
    assert [e.parity for e in spec] == [p for _, p in exact]
    assert np.allclose([e.value for e in spec], [v for v, _ in exact], rtol=1e-4)


@settings(max_examples=50, deadline=None)
@given(c=st.floats(0.1, 100.0), rate=st.floats(0.3, 4.0))
def test_fit_rate_recovers_power_law(c, rate):
    eps = [0.1, 0.05, 0.025]
    assert fit_rate(eps, [c * e**rate for e in eps]) == pytest.approx(rate, rel=1e-9)


def test_fit_rate_edge_cases():
    assert fit_rate([0.1, 0.05], [1.0, 0.0]) == math.inf
    with pytest.raises(ValueError):
        fit_rate([0.1], [1.0])


def _comparison(residuals, **kw):
    eps = [0.1, 0.05, 0.025][: len(residuals)]
    recs = [ComparisonRecord(e, 1, r, 0.0, r) for e, r in zip(eps, residuals)]
    return AsymptoticComparison(Regime.GENERIC, eps, recs, **kw)


def test_comparison_flags_and_floors():
    good = _comparison([1.0, 0.25, 0.0625])
    assert good.monotone and good.meets_floor and not good.flags
    assert good.rates()[None] == pytest.approx(2.0)
    one_step = _comparison([1.0, 1.1, 0.3])
    assert one_step.monotone and one_step.flags == ["non-monotone step"]
    bad = _comparison([1.0, 1.1, 1.2])
    assert not bad.monotone and not bad.meets_floor
    ratio = _comparison([1.0, 0.1, 0.001], rate_floor=None, ratio_floor=4.0)
    assert ratio.ratios() == pytest.approx([10.0, 100.0]) and ratio.meets_floor
    with pytest.raises(ValueError):
        AsymptoticComparison(Regime.GENERIC, [0.05, 0.1])


def test_comparison_dict_is_json():
    d = _comparison([1.0, 0.5, 0.25]).to_dict()
    assert json.loads(json.dumps(d))["regime"] == "GenericDirichlet"
    assert d["rates"] == {"none": pytest.approx(1.0)}


@settings(max_examples=40, deadline=None)
@given(slopes=st.lists(st.floats(-5, 5), min_size=2, max_size=4, unique=True),
       offsets=st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_track_branches_follows_lines(slopes, offsets):
    x = np.linspace(0, 1, 41)
    lines = np.array([s * x + o for s, o in zip(slopes, offsets)]).T
    # lines that come within a step's change of one another cannot be told apart by value
    gaps = np.abs(lines[:, :, None] - lines[:, None, :])
    np.einsum("ijj->ij", gaps)[:] = np.inf
    step = np.max(np.abs(slopes)) * (x[1] - x[0])
    if gaps.min() < 4 * step:
        return
    tracked = track_branches(np.sort(lines, axis=1))
    first = np.argsort(lines[0])
    assert np.allclose(tracked, lines[:, first])


def test_track_branches_through_crossing():
    x = np.linspace(0, 1, 21)
    a, b = 1.0 - x, 0.5 + 0 * x
    tracked = track_branches(np.sort(np.column_stack([a, b]), axis=1))
    assert np.allclose(tracked[:, 1], a)


def test_dive_sweep_count_and_mirror(tmp_path):
    table = dive_sweep(0.05, [0.0, 0.6], 3, include_mirror=True)
    assert list(table.count_below) == [0, 1]
    # alpha and -alpha are congruent up to O(eps)
    rel = np.abs(table.mirror - table.by_index) / table.by_index
    assert np.all(rel[:, :1] < 0.05 * 0.05 * 10)
    table.write_csv(tmp_path / "dive.csv")
    header = (tmp_path / "dive.csv").read_text().splitlines()[0].split(",")
    assert header[:4] == ["alpha", "threshold_exact", "threshold", "count_below"]
    assert "lambda_1_neg_alpha" in header


def test_dive_sweep_workers_do_not_change_output(tmp_path):
    grid = [0.2, 0.5]
    one = dive_sweep(0.1, grid, 2)
    two = dive_sweep(0.1, grid, 2, workers=2)
    one.write_csv(tmp_path / "a.csv")
    two.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_format_and_csv(tmp_path):
    assert format_value(1 / 3) == "0.333333333333"
    assert format_value(True) == "true" and format_value(np.int64(4)) == "4"
    write_csv(tmp_path / "x.csv", ["a", "b"], [[1, 2.5], [3, math.pi]])
    assert (tmp_path / "x.csv").read_text() == "a,b\n1,2.5\n3,3.14159265359\n"


@pytest.mark.skipif(shutil.which("git") is None, reason="git not installed")
def test_content_hash_matches_git(tmp_path):
    obj = {"b": [1, 2.5], "a": "x"}
    path = tmp_path / "c.json"
    path.write_text(canonical_json(obj))
    git = subprocess.run(["git", "hash-object", str(path)], capture_output=True, text=True, check=True)
    assert content_hash(obj) == git.stdout.strip()


def test_json_and_manifest_deterministic(tmp_path):
    write_json(tmp_path / "o.json", {"b": np.float64(1.0), "a": [np.int64(2)]})
    assert (tmp_path / "o.json").read_text() == '{\n  "a": [\n    2\n  ],\n  "b": 1.0\n}\n'
    m1 = write_manifest(tmp_path, "spectrum", {"eps": 0.05, "alpha": [0.0]}, ["spectrum.csv"])
    m2 = write_manifest(tmp_path, "spectrum", {"alpha": [0.0], "eps": 0.05}, ["spectrum.csv"])
    assert m1 == m2 and len(m1["input_hash"]) == 40
