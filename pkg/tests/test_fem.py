import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from brokenstrip.eigen import dense_gevp, solve_gevp_smallest
from brokenstrip.fem import (
    Weight,
    apply_dirichlet,
    assemble_mass,
    assemble_robin_boundary,
    assemble_stiffness,
    boundary_load,
    boundary_mass,
    edge_integral,
    gamma_weighted_integral,
    interpolate,
    w_in,
    write_coo,
)
from brokenstrip.geometry import (
    NO_GRADING,
    EdgeTag,
    HalfStripGeom,
    Mesh,
    TrapezoidGeom,
    build_halfstrip_mesh,
    build_trapezoid_mesh,
    refine,
)
from brokenstrip.harness import exact_alpha0_spectrum

ALL_TAGS = (EdgeTag.DIRICHLET_WALL, EdgeTag.FREE_SIDE)


def _unit_triangle(order=1) -> Mesh:
    from brokenstrip.geometry import _assemble_mesh

    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]])
    edges = np.array([[0, 1], [1, 2], [2, 0]])
    tags = np.array([1, 2, 1])
    return _assemble_mesh(nodes, tris, edges, tags, (0, 2), order, {})


def _rect(eps=0.1, h=None, order=2):
    return build_trapezoid_mesh(TrapezoidGeom(eps, 0.0), h or eps / 4, NO_GRADING, order)


def test_unit_triangle_stiffness():
    K = assemble_stiffness(_unit_triangle()).toarray()
    expected = 0.5 * np.array([[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    assert np.allclose(K, expected)
    assert np.allclose(K.sum(axis=1), 0.0)


def test_unit_triangle_mass():
    M = assemble_mass(_unit_triangle()).toarray()
    assert np.allclose(M, 0.5 / 12 * (np.ones((3, 3)) + np.eye(3)))


@pytest.mark.parametrize("order", [1, 2])
def test_matrix_symmetry_and_definiteness(order):
    mesh = build_trapezoid_mesh(TrapezoidGeom(0.2, 0.7), 0.05, order=order)
    K, M = assemble_stiffness(mesh), assemble_mass(mesh)
    assert abs(K - K.T).max() == 0 and abs(M - M.T).max() == 0
    w = np.linalg.eigvalsh(K.toarray())
    assert w.min() > -1e-10 * w.max()
    assert np.allclose(K @ np.ones(mesh.n_dofs), 0.0, atol=1e-10)
    assert np.linalg.eigvalsh(M.toarray()).min() > 0
    assert M.sum() == pytest.approx(mesh.area, rel=1e-12)


@pytest.mark.parametrize("order", [1, 2])
def test_rectangle_dirichlet_ground_state(order):
    eps = 0.1
    mesh = _rect(eps, eps / 8, order)
    tags = ALL_TAGS
    Kf, dm = apply_dirichlet(assemble_stiffness(mesh), mesh, tags)
    Mf, _ = apply_dirichlet(assemble_mass(mesh), mesh, tags)
    lam = solve_gevp_smallest(Kf, Mf, 1).eigenvalues[0]
    assert lam == pytest.approx(math.pi**2 * (1 + 1 / eps**2), rel=2e-2 if order == 1 else 5e-5)


def test_free_dofs_on_rectangle():
    mesh = _rect(0.1, 0.025, order=1)
    _, dm = apply_dirichlet(assemble_stiffness(mesh), mesh, [EdgeTag.DIRICHLET_WALL])
    on_free_side = np.unique(mesh.edges_with(EdgeTag.FREE_SIDE))
    walls = np.unique(mesh.edges_with(EdgeTag.DIRICHLET_WALL))
    boundary = set(on_free_side) | set(walls)
    interior = set(range(mesh.n_dofs)) - boundary
    assert set(dm.free) == interior | (set(on_free_side) - set(mesh.corner_nodes))
    assert not set(mesh.corner_nodes) & set(dm.free)


def test_constrained_stiffness_positive_definite():
    mesh = build_trapezoid_mesh(TrapezoidGeom(0.2, 0.5), 0.05)
    Kf, _ = apply_dirichlet(assemble_stiffness(mesh), mesh, [EdgeTag.DIRICHLET_WALL])
    assert np.linalg.eigvalsh(Kf.toarray()).min() > 0


def test_all_tags_constrain_whole_boundary():
    mesh = _rect(0.1, 0.05, order=1)
    _, dm = apply_dirichlet(assemble_mass(mesh), mesh, ALL_TAGS)
    assert set(dm.free).isdisjoint(np.unique(mesh.boundary_dofs))
    with pytest.raises(ValueError):
        apply_dirichlet(assemble_mass(mesh), mesh, [])


def test_mass_norm_of_transverse_mode():
    eps = 0.1
    errs = []
    for n in (4, 8, 16):
        mesh = _rect(eps, eps / n, order=2)
        u = interpolate(mesh, lambda x, y: np.sin(np.pi * y / eps))
        errs.append(abs(math.sqrt(u @ assemble_mass(mesh) @ u) / math.sqrt(eps / 2) - 1))
    assert errs[-1] < 5e-6
    assert 12 < errs[0] / errs[1] < 20 and 12 < errs[1] / errs[2] < 20


def test_alpha0_convergence_orders():
    eps = 0.25
    exact = exact_alpha0_spectrum(eps, 1)[0]
    errs = {1: [], 2: []}
    for order in (1, 2):
        mesh = build_trapezoid_mesh(TrapezoidGeom(eps, 0.0), eps / 2, NO_GRADING, order=1)
        for _ in range(3):
            m = mesh.with_order(order)
            Kf, _ = apply_dirichlet(assemble_stiffness(m), m, [EdgeTag.DIRICHLET_WALL])
            Mf, _ = apply_dirichlet(assemble_mass(m), m, [EdgeTag.DIRICHLET_WALL])
            errs[order].append(dense_gevp(Kf.toarray(), Mf.toarray(), 1)[0][0] - exact)
            mesh = refine(mesh)
    r1 = errs[1][1] / errs[1][2]
    r2 = errs[2][1] / errs[2][2]
    assert 3.5 < r1 < 4.5
    assert 13 < r2 < 19


def test_robin_boundary_sums():
    L = 8.0
    mesh = build_halfstrip_mesh(HalfStripGeom(0.0, L), 0.05)
    R, load = assemble_robin_boundary(mesh, L)
    assert R.sum() == pytest.approx(-(L + 1j) / (L**2 + 1), rel=1e-12)
    assert abs(R - R.T).max() == 0
    u = interpolate(mesh, lambda x, y: np.sin(np.pi * y))
    expected = -2j / (L**2 + 1) * (L + 1j) * 0.5
    assert load @ u == pytest.approx(expected, rel=1e-6)


def test_robin_load_vanishes_away_from_truncation():
    L = 6.0
    mesh = build_halfstrip_mesh(HalfStripGeom(0.4, L), 0.1)
    _, load = assemble_robin_boundary(mesh, L)
    far = mesh.nodes[:, 0] < L - 0.5
    assert np.all(load[far] == 0)


def test_robin_matrix_large_L_limit():
    # -1/(L - i) = -1/L - i/L^2 + O(1/L^3)
    for L in (20.0, 40.0):
        mesh = build_halfstrip_mesh(HalfStripGeom(0.0, L), 0.25, order=1)
        R, _ = assemble_robin_boundary(mesh, L)
        ML = boundary_mass(mesh, EdgeTag.ARTIFICIAL_BOUNDARY)
        scale = R.sum() / ML.sum()
        assert abs(scale.real + 1 / L) < 1.01 / L**3
        assert abs(scale.imag + 1 / L**2) < 1.01 / L**4


def test_w_in_and_edge_integral():
    L = 5.0
    mesh = build_halfstrip_mesh(HalfStripGeom(0.0, L), 0.05)
    u = interpolate(mesh, lambda x, y: w_in(L, y))
    val = edge_integral(mesh, EdgeTag.ARTIFICIAL_BOUNDARY, u, lambda x, y: np.sin(np.pi * y))
    assert val == pytest.approx((L + 1j) * 0.5, rel=1e-6)
    ones = boundary_load(mesh, EdgeTag.ARTIFICIAL_BOUNDARY, lambda x, y: np.ones_like(x))
    assert ones.sum() == pytest.approx(1.0, rel=1e-13)


@pytest.mark.parametrize("alpha", [0.0, 0.6, 1.321])
def test_gamma_weighted_integrals(alpha):
    mesh = build_halfstrip_mesh(HalfStripGeom(alpha, 8.0), 0.05)
    ell = 1 / math.cos(alpha)
    assert gamma_weighted_integral(mesh, 1.0, Weight.ARCLENGTH_S) == pytest.approx(ell**2 / 2, rel=1e-10)
    s = interpolate(mesh, lambda x, y: np.hypot(x, y))
    assert gamma_weighted_integral(mesh, s, Weight.ONE) == pytest.approx(ell**2 / 2, rel=1e-10)
    assert gamma_weighted_integral(mesh, s, quantity="ds_sq") == pytest.approx(ell, rel=1e-10)
    with pytest.raises(ValueError):
        gamma_weighted_integral(mesh, s, quantity="bogus")


def test_write_coo(tmp_path):
    A = sp.csr_matrix(np.array([[1.0, 0.0], [2.5, -1.0]]))
    write_coo(A, tmp_path / "a.txt")
    lines = (tmp_path / "a.txt").read_text().splitlines()
    assert lines[0] == "# 2 2 3"
    C = sp.csr_matrix(np.array([[1 + 2j]]))
    write_coo(C, tmp_path / "c.txt")
    assert (tmp_path / "c.txt").read_text().splitlines()[1].split() == ["0", "0", "1", "2"]


@settings(max_examples=15, deadline=None)
@given(alpha=st.floats(-1.0, 1.0), order=st.sampled_from([1, 2]), seed=st.integers(0, 2**16))
def test_stiffness_annihilates_linear_functions(alpha, order, seed):
    mesh = build_trapezoid_mesh(TrapezoidGeom(0.2, alpha), 0.1, order=order)
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(2)
    u = interpolate(mesh, lambda x, y: a * x + b * y)
    energy = u @ assemble_stiffness(mesh) @ u
    assert energy == pytest.approx((a**2 + b**2) * mesh.area, rel=1e-9)
