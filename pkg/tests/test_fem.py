import numpy as np
import pytest

from westabc import core, fem


def unit_params(wavelength=1.0):
    # c chosen so c/omega = wavelength
    return core.derive_coefficients(wavelength, 1.0, 0.0, 0.0, 1.0)


def grid_1d(n, L=1.0, tags=None):
    p = unit_params(wavelength=L)
    return core.build_grid((0.0, L), p, n, tags)


def test_p1_mass_stiffness_rows():
    g = grid_1d(4)  # 4 elements, h = 0.25
    ops = fem.assemble(g)
    h = g.h
    M = ops.mass.toarray()
    K = ops.stiffness.toarray()
    assert M[1, 1] == pytest.approx(4 * h / 6)
    assert M[1, 0] == pytest.approx(h / 6)
    assert M[0, 0] == pytest.approx(2 * h / 6)
    assert K[1, 1] == pytest.approx(2 / h)
    assert K[1, 2] == pytest.approx(-1 / h)
    assert K[0, 0] == pytest.approx(1 / h)


def test_stiffness_annihilates_constants():
    for g in (grid_1d(7), core.build_grid(((0.0, 1.0), (0.0, 1.0)),
                                          unit_params(0.5), 3)):
        ops = fem.assemble(g)
        ones = np.ones(g.n_nodes)
        assert np.max(np.abs(ops.stiffness @ ones)) < 1e-12 * \
            np.max(np.abs(ops.stiffness.data))


def test_single_bilinear_element_against_symbolic_oracle():
    import sympy as sy
    x, y = sy.symbols("x y")
    phi = [(1 - x) * (1 - y), x * (1 - y), (1 - x) * y, x * y]
    M_ref = np.array([[float(sy.integrate(a * b, (x, 0, 1), (y, 0, 1)))
                       for b in phi] for a in phi])
    K_ref = np.array([[float(sy.integrate(
        sy.diff(a, x) * sy.diff(b, x) + sy.diff(a, y) * sy.diff(b, y),
        (x, 0, 1), (y, 0, 1))) for b in phi] for a in phi])

    p = unit_params(2.0)  # h = 1 with epw=2
    g = core.build_grid(((0.0, 1.0), (0.0, 1.0)), p, 2)
    assert g.elems == (1, 1)
    ops = fem.assemble(g)
    assert np.allclose(ops.mass.toarray(), M_ref, atol=1e-14)
    assert np.allclose(ops.stiffness.toarray(), K_ref, atol=1e-14)


def test_weighted_mass_reduces_to_mass():
    for g in (grid_1d(6), core.build_grid(((0.0, 1.0), (0.0, 1.0)),
                                          unit_params(0.5), 4)):
        ops = fem.assemble(g)
        Mw = ops.weighted_mass(np.ones(g.n_nodes))
        assert np.allclose(Mw.toarray(), ops.mass.toarray(), atol=1e-14)


def test_weighted_load_against_symbolic_oracle():
    import sympy as sy
    x = sy.symbols("x")
    # one element [0, h], w and v linear interpolants
    h = 0.25
    w0, w1, v0, v1 = 0.3, -1.2, 2.0, 0.7
    wf = w0 + (w1 - w0) * x / h
    vf = v0 + (v1 - v0) * x / h
    phi = [1 - x / h, x / h]
    ref = np.array([float(sy.integrate(wf * vf * p, (x, 0, h)))
                    for p in phi])

    g = grid_1d(4)
    ops = fem.assemble(g)
    w = np.zeros(g.n_nodes)
    v = np.zeros(g.n_nodes)
    w[:2] = [w0, w1]
    v[:2] = [v0, v1]
    load = ops.weighted_load(w, v)
    assert load[0] == pytest.approx(ref[0], rel=1e-13)
    # node 1 also sees element 2, where w=v=0 except nodal continuation
    w_elem2 = np.array([w1, 0.0])
    v_elem2 = np.array([v1, 0.0])
    wf2 = w1 * (1 - x / h)
    vf2 = v1 * (1 - x / h)
    ref1_extra = float(sy.integrate(wf2 * vf2 * (1 - x / h), (x, 0, h)))
    assert load[1] == pytest.approx(ref[1] + ref1_extra, rel=1e-13)


def test_quadrature_integrates_interpolants_exactly():
    g = grid_1d(8)
    ops = fem.assemble(g)
    xs = g.axis_coords(0)
    vals = ops.quad_values(xs)  # interpolant of f(x) = x
    # integral of (interp x)^2 over (0,1) is exactly 1/3 (interp is exact)
    assert ops.quad_integral(vals**2) == pytest.approx(1.0 / 3.0, rel=1e-13)


def test_wall_layers_and_derivatives():
    errs_un, errs_unn = [], []
    for n in (10, 20, 40):
        g = grid_1d(n, tags={"right": core.Tag.ABSORBING})
        ops = fem.assemble(g)
        wall = ops.walls["right"]
        xs = g.axis_coords(0)
        f = np.sin(2.0 * xs)
        un = wall.normal_derivative(f)   # outward = +x at the right end
        unn = wall.second_normal_derivative(f)
        errs_un.append(abs(un[0] - 2.0 * np.cos(2.0)))
        errs_unn.append(abs(unn[0] + 4.0 * np.sin(2.0)))
    # both stencils are second order
    assert errs_un[0] / errs_un[1] == pytest.approx(4.0, rel=0.35)
    assert errs_un[1] / errs_un[2] == pytest.approx(4.0, rel=0.35)
    assert errs_unn[0] / errs_unn[1] == pytest.approx(4.0, rel=0.5)


def test_tangential_second_difference():
    p = unit_params(0.25)
    g = core.build_grid(((0.0, 1.0), (0.0, 1.0)), p, 2,
                        {"right": core.Tag.ABSORBING})
    ops = fem.assemble(g)
    wall = ops.walls["right"]
    ys = g.axis_coords(1)
    field = np.zeros(g.n_nodes)
    field[wall.nodes] = ys**2
    d2 = wall.tangential_second(field)
    inner = d2[1:-1]
    assert np.allclose(inner, 2.0, atol=1e-10)
    assert d2[0] == 0.0 and d2[-1] == 0.0  # endpoints drop order


def test_boundary_edge_mass_consistent():
    p = unit_params(0.25)
    g = core.build_grid(((0.0, 1.0), (0.0, 1.0)), p, 2,
                        {"right": core.Tag.ABSORBING})
    ops = fem.assemble(g)
    wall = ops.walls["right"]
    B = wall.B_local.toarray()
    h = g.h
    n = wall.n
    ones = np.ones(n)
    # integrating 1 along the wall gives the wall length
    assert ones @ B @ ones == pytest.approx(1.0, rel=1e-12)
    assert B[0, 0] == pytest.approx(h / 3)
    assert B[1, 1] == pytest.approx(2 * h / 3)


def test_factor_cache_refines_to_direct_accuracy():
    rng = np.random.default_rng(0)
    import scipy.sparse as sp
    n = 60
    A = sp.diags([np.full(n - 1, -1.0), np.full(n, 4.0),
                  np.full(n - 1, -1.0)], [-1, 0, 1]).tocsr()
    cache = fem.FactorCache()
    b = rng.standard_normal(n)
    x = cache.solve(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)
    # perturb the matrix; the cached factor must still give exact solves
    A2 = A + sp.diags(0.01 * rng.standard_normal(n)).tocsr()
    x2 = cache.solve(A2.tocsr(), b)
    assert np.linalg.norm(A2 @ x2 - b) <= 1e-11 * np.linalg.norm(b)
