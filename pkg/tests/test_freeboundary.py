"""Contact masks, classification, decay fits, blow-ups, graph fit."""

import numpy as np
import pytest

import signorini as sg
from signorini.errors import InsufficientDataError
from signorini.freeboundary import frequency_at, gamma_points

from conftest import exact_field_solution, near_optimal_omega, profile_boundary, solved_profile


def test_contact_masks_inactive():
    grid = sg.build_grid(1, 1.0, 1 / 32, 1 / 32, 0.5)
    _, Y = grid.node_mesh()
    problem = sg.make_problem(grid, psi=-1.0, boundary=Y**0.5)
    form = sg.assemble_energy(grid, problem)
    sol = sg.solve_psor(form, problem, omega=near_optimal_omega(grid))
    masks = sg.contact_set(sol, problem)
    assert not masks["contact"].any()
    assert not masks["gamma"].any()


def test_contact_masks_fully_active():
    grid = sg.build_grid(1, 1.0, 1 / 32, 1 / 32, 0.0)
    problem = sg.make_problem(grid, psi=1.0, boundary=0.0)
    form = sg.assemble_energy(grid, problem)
    sol = sg.solve_psor(form, problem, omega=near_optimal_omega(grid))
    masks = sg.contact_set(sol, problem)
    inner = np.abs(grid.xs[0]) < 1.0
    assert masks["contact"][inner].all()
    # no free boundary inside the box (only at the Dirichlet frame)
    assert not masks["gamma"][np.abs(grid.xs[0]) < 1.0 - 2 * grid.hx].any()


def test_profile_contact_and_gamma_location(profile_a0):
    grid, problem, form, sol, _ = profile_a0
    masks = sg.contact_set(sol, problem)
    xs = grid.xs[0]
    pts = gamma_points(grid, masks["gamma"])
    inner = np.abs(pts[:, 0]) < 0.9
    assert np.abs(pts[inner, 0]).max() <= 2 * grid.hx
    # Lambda ~ {x <= 0}
    assert masks["contact"][(xs < -2 * grid.hx) & (xs > -0.9)].all()
    assert not masks["contact"][(xs > 2 * grid.hx) & (xs < 0.9)].any()


def test_gamma_subset_gamma_star(profile_a0):
    grid, problem, form, sol, _ = profile_a0
    masks = sg.contact_set(sol, problem)
    inner = np.abs(grid.xs[0]) < 0.9
    gm = masks["gamma"] & inner
    assert np.all(masks["gamma_star"][gm])


def test_classify_threshold_branches():
    a, delta = 0.0, 0.5
    assert sg.classify_from_frequency(1.5, a, delta, tau_gap=0.1) == "Regular"
    assert sg.classify_from_frequency(2.0, a, delta, tau_gap=0.1) == "Degenerate"
    assert sg.classify_from_frequency(1.68, a, delta, tau_gap=0.05) == "Unresolved"


def test_classify_regular_point_on_profile(profile_a0):
    grid, problem, form, sol, _ = profile_a0
    cls = sg.classify(sol, problem, [0.0])
    assert cls.label == "Regular"
    assert cls.Ntilde == pytest.approx(1.5, abs=0.05)


def test_classify_degenerate_even_poly():
    a = 0.0
    grid = sg.build_grid(1, 1.0, 1 / 64, 1 / 64, a)
    problem = sg.make_problem(grid)
    X, Y = grid.node_mesh()
    U = 10.0 * (X**2 - Y**2)
    sol = exact_field_solution(grid, U, a)
    cls = sg.classify(sol, problem, [0.0])
    assert cls.label == "Degenerate"
    assert cls.Ntilde == pytest.approx(2.0, abs=0.05)


def test_classification_scale_stability(profile_a0):
    grid, problem, form, sol, _ = profile_a0
    r1 = 16 * grid.hy
    n1 = frequency_at(sol, problem, r1)
    n2 = frequency_at(sol, problem, r1 / 2)
    assert abs(n2 - n1) < sg.freeboundary.default_tau_gap(0.0, 0.5) / 2


def test_decay_fit_regular_slopes(profile_a0):
    grid, problem, form, sol, _ = profile_a0
    fit = sg.decay_fit(sol, problem, [0.0])
    assert fit["slope"] == pytest.approx(1.5, abs=0.05)
    assert fit["H_slope"] == pytest.approx(4.0, abs=0.1)


def test_decay_fit_identically_zero():
    grid = sg.build_grid(1, 1.0, 1 / 32, 1 / 32, 0.0)
    problem = sg.make_problem(grid)
    sol = exact_field_solution(grid, np.zeros(grid.node_shape), 0.0)
    fit = sg.decay_fit(sol, problem, [0.0])
    assert fit["slope"] == float("inf")


def test_blowup_self_similarity_and_height():
    a = 0.0
    grid = sg.build_grid(1, 1.0, 1 / 64, 1 / 64, a)
    problem = sg.make_problem(grid)
    U = profile_boundary(grid, a)
    sol = exact_field_solution(grid, U, a)
    bl1 = sg.blowup(sol, problem, [0.0], 0.5)
    bl2 = sg.blowup(sol, problem, [0.0], 0.25)
    inner = grid.node_radii() <= 0.9
    scale = np.abs(bl1.U[inner]).max()
    assert np.abs(bl1.U[inner] - bl2.U[inner]).max() <= 0.02 * scale
    geo = sg.geometry_fields(grid, problem.coeff, a)
    rule = sg.sphere_quadrature(grid, 1.0, 64)
    assert sg.height(bl1, geo, rule) == pytest.approx(1.0, rel=0.02)


def test_blowup_ladder_converges_to_profile():
    # boundary data mixing in a higher mode: the extra content decays
    # linearly under rescaling, so blow-ups approach the normalized profile
    grid, problem, form, sol, _ = solved_profile(0.0, 1.0 / 96, mix=0.6)
    inner = grid.node_radii() <= 0.8
    U0 = profile_boundary(grid, 0.0)
    geo = sg.geometry_fields(grid, problem.coeff, 0.0)
    H1 = sg.height(U0, geo, sg.sphere_quadrature(grid, 1.0, 64))
    target = U0 / np.sqrt(H1)
    dists = []
    for r in (0.6, 0.4, 0.25, 0.15):
        bl = sg.blowup(sol, problem, [0.0], r)
        dists.append(np.abs(bl.U[inner] - target[inner]).max())
    assert np.all(np.diff(dists) < 0)


def test_graph_fit_straight_line():
    rng = np.random.default_rng(0)
    s = np.linspace(-0.4, 0.4, 9)
    pts = np.stack([s, np.full_like(s, 0.2)], axis=-1)
    out = sg.graph_fit(pts)
    assert np.abs(out["gprime"]).max() <= 1e-12
    assert out["gamma_est"] >= 0.9 - 1e-12


def test_graph_fit_circle_arc():
    th = np.linspace(-0.5, 0.5, 11)
    pts = np.stack([0.5 * np.sin(th), 0.5 * np.cos(th)], axis=-1)
    out = sg.graph_fit(pts)
    # g' of a circle arc is Lipschitz: quotient bounded for gamma up to ~1
    assert out["gamma_est"] >= 0.5


def test_graph_fit_insufficient_points():
    with pytest.raises(InsufficientDataError):
        sg.graph_fit(np.zeros((3, 2)))


def test_report_on_profile(profile_a0):
    grid, problem, form, sol, _ = profile_a0
    rep = sg.free_boundary_report(sol, problem)
    assert rep.points, "expected at least one free boundary point"
    origin = [p for p in rep.points if abs(p["x0"][0]) <= 2 * grid.hx]
    assert origin and origin[0]["class"] == "Regular"
    assert origin[0]["definitions_agree"]


def test_report_empty_for_inactive():
    grid = sg.build_grid(1, 1.0, 1 / 32, 1 / 32, 0.0)
    _, Y = grid.node_mesh()
    problem = sg.make_problem(grid, psi=-1.0, boundary=1.0 + Y)
    form = sg.assemble_energy(grid, problem)
    sol = sg.solve_psor(form, problem, omega=near_optimal_omega(grid))
    rep = sg.free_boundary_report(sol, problem)
    assert rep.points == []
    assert not rep.contact_mask.any()


def test_reduce_obstacle_identity_when_zero(profile_a0):
    grid, problem, form, sol, _ = profile_a0
    sol0, problem0 = sg.reduce_obstacle(sol, problem)
    assert sol0 is sol and problem0 is problem


def test_reduce_obstacle_source_term():
    # psi = c - |x|^2 with B = I: the reduction carries f = +4 (n=2)
    grid = sg.build_grid(2, 1.0, 1 / 8, 1 / 8, 0.0)
    X1, X2, Y = grid.node_mesh()
    psi = 0.4 - (X1[..., 0] ** 2 + X2[..., 0] ** 2)
    problem = sg.make_problem(grid, psi=psi, boundary=0.0)
    U = np.zeros(grid.node_shape)
    from conftest import exact_field_solution

    sol0, problem0 = sg.reduce_obstacle(exact_field_solution(grid, U, 0.0), problem)
    inner = (np.abs(X1) <= 0.75) & (np.abs(X2) <= 0.75)  # clear of one-sided edges
    assert np.allclose(problem0.f[inner], 4.0)
    assert np.all(problem0.psi == 0.0)
    assert np.allclose(sol0.U, -psi[..., None] * np.ones_like(Y))


# -- n = 2 end-to-end ---------------------------------------------------------


@pytest.fixture(scope="module")
def n2_line_solve():
    # profile extended constant in x2: straight-line free boundary {x1 = 0}
    a = 0.0
    grid = sg.build_grid(2, 1.0, 1 / 16, 1 / 16, a)
    pts = np.stack(grid.node_mesh(), axis=-1)
    ref = sg.exact_solution("signorini_profile", a)
    g = ref(pts)  # depends on (x1, y) only
    problem = sg.make_problem(grid, psi=0.0, boundary=g)
    form = sg.assemble_energy(grid, problem)
    sol = sg.solve_psor(form, problem, omega=near_optimal_omega(grid), tol=1e-9)
    return grid, problem, form, sol


def test_n2_line_contact_set(n2_line_solve):
    grid, problem, form, sol = n2_line_solve
    masks = sg.contact_set(sol, problem)
    pts = gamma_points(grid, masks["gamma"])
    inner = np.all(np.abs(pts) < 0.9, axis=1)
    assert np.abs(pts[inner, 0]).max() <= 2 * grid.hx


def test_n2_line_graph_fit(n2_line_solve):
    grid, problem, form, sol = n2_line_solve
    rep = sg.free_boundary_report(sol, problem, max_points=9)
    regs = [p for p in rep.points if p.get("class") == "Regular"]
    assert len(regs) >= 5
    assert rep.graph is not None
    # straight line: fitted graph is flat
    assert np.abs(rep.graph["g"]).max() <= 2 * grid.hx
    assert rep.graph["gamma_est"] >= 0.8


@pytest.fixture(scope="module")
def n2_circle_solve():
    # radially symmetric obstacle: the contact set is a disc and the free
    # boundary a circle
    a = 0.0
    grid = sg.build_grid(2, 1.0, 1 / 20, 1 / 20, a)
    X1, X2, Y = grid.node_mesh()
    psi = 0.4 - (X1[..., 0] ** 2 + X2[..., 0] ** 2)
    problem = sg.make_problem(grid, psi=psi, boundary=0.0)
    form = sg.assemble_energy(grid, problem)
    sol = sg.solve_psor(form, problem, omega=near_optimal_omega(grid), tol=1e-9)
    return grid, problem, form, sol


def test_n2_circle_gamma_is_round(n2_circle_solve):
    grid, problem, form, sol = n2_circle_solve
    masks = sg.contact_set(sol, problem)
    pts = gamma_points(grid, masks["gamma"])
    rr = np.linalg.norm(pts, axis=1)
    assert len(pts) >= 20
    assert rr.max() - rr.min() <= 3 * grid.hx  # circular up to grid resolution


def test_n2_circle_points_classify_regular(n2_circle_solve):
    grid, problem, form, sol = n2_circle_solve
    masks = sg.contact_set(sol, problem)
    pts = gamma_points(grid, masks["gamma"])
    for x0 in pts[:4]:
        cls = sg.classify(sol, problem, x0, r_min=6 * grid.hy)
        assert cls.label == "Regular"
        assert cls.Ntilde == pytest.approx(1.5, abs=0.1)


def test_n2_circle_arc_graph_fit(n2_circle_solve):
    grid, problem, form, sol = n2_circle_solve
    masks = sg.contact_set(sol, problem)
    pts = gamma_points(grid, masks["gamma"])
    arc = pts[pts[:, 1] > 0.15]  # locally a graph over the rotated tangent
    out = sg.graph_fit(arc)
    assert np.isfinite(out["gprime"]).all()
    assert out["gamma_est"] >= 0.5
