import math

import numpy as np
import pytest

from westabc import core


def test_derive_coefficients_liver_1mhz():
    # independent high-precision evaluation of the two defining formulas
    import mpmath as mp
    mp.mp.dps = 40
    c, rho, ba, al, om = 1596.0, 1050.0, 6.8, 4.5, 1.0e6
    b_ref = 2 * mp.mpf(al) * (mp.mpf(om) / mp.mpf(1e6)) * mp.mpf(c) ** 3 / \
        (2 * mp.pi * mp.mpf(om)) ** 2
    gamma_ref = (1 + mp.mpf(ba) / 2) / (mp.mpf(rho) * mp.mpf(c) ** 4)
    p = core.derive_coefficients(c, rho, ba, al, om)
    assert p.beta_a == 4.4
    assert p.b == pytest.approx(float(b_ref), rel=1e-12)
    assert p.beta == pytest.approx(float(b_ref / c**2), rel=1e-12)
    assert p.gamma == pytest.approx(float(gamma_ref), rel=1e-12)
    # magnitudes
    assert p.b == pytest.approx(9.268e-4, rel=1e-3)
    assert p.beta == pytest.approx(3.638e-10, rel=1e-3)
    assert p.gamma == pytest.approx(6.459e-16, rel=1e-3)


def test_derive_coefficients_unit_normalization():
    p = core.derive_coefficients(1.0, 1.0, 0.0, 0.0, 1.0)
    assert p.beta_a == 1.0
    assert p.b == 0.0
    assert p.beta == 0.0
    assert p.gamma == 1.0


def test_derive_coefficients_100khz():
    # the per-MHz absorption convention makes b scale like 1/omega
    p6 = core.derive_coefficients(1596.0, 1050.0, 6.8, 4.5, 1.0e6)
    p5 = core.derive_coefficients(1596.0, 1050.0, 6.8, 4.5, 1.0e5)
    assert p5.b == pytest.approx(10.0 * p6.b, rel=1e-12)
    assert p5.b == pytest.approx(9.268e-3, rel=1e-3)
    assert p5.beta == pytest.approx(3.638e-9, rel=1e-3)


@pytest.mark.parametrize("bad", [
    dict(c=-1.0, rho=1.0, b_over_a=0.0, alpha_abs=0.0, omega=1.0),
    dict(c=1.0, rho=0.0, b_over_a=0.0, alpha_abs=0.0, omega=1.0),
    dict(c=1.0, rho=1.0, b_over_a=0.0, alpha_abs=0.0, omega=-2.0),
])
def test_derive_coefficients_rejects_nonpositive(bad):
    with pytest.raises(ValueError):
        core.derive_coefficients(**bad)


def test_nu_values_and_degeneracy():
    p = core.liver_params(1.0e5)
    assert core.nu(0.0, p) * p.c == pytest.approx(1.0, abs=1e-15)
    v_half = p.c**-2 / (4.0 * p.gamma)
    assert core.nu(v_half, p) == pytest.approx(1.0 / (p.c * math.sqrt(2)),
                                               rel=1e-14)
    with pytest.raises(core.DegeneracyError):
        core.nu(p.c**-2 / (2.0 * p.gamma), p)


def test_nu_strictly_decreasing():
    p = core.liver_params(1.0e5)
    vmax = 0.9 * p.degeneracy_threshold
    v = np.linspace(-vmax, vmax, 300)
    vals = core.nu(v, p)
    assert np.all(np.diff(vals) < 0.0)


def test_omega_scaling_halves_b():
    p1 = core.derive_coefficients(1596.0, 1050.0, 6.8, 4.5, 2.0e5)
    p2 = core.derive_coefficients(1596.0, 1050.0, 6.8, 4.5, 4.0e5)
    assert p2.b == pytest.approx(p1.b / 2.0, rel=1e-12)
    assert p2.beta == pytest.approx(p1.beta / 2.0, rel=1e-12)


def test_build_grid_seg():
    p = core.liver_params(1.0e5)
    g = core.build_grid((0.0, 0.03), p, 50)
    assert g.h == pytest.approx(3.192e-4, rel=1e-12)
    assert g.elems == (94,)
    x = g.axis_coords(0)
    assert np.allclose(x, g.h * np.arange(95), atol=0.0)


def test_build_grid_trivial():
    p = core.derive_coefficients(1.0, 1.0, 0.0, 0.0, 1.0)  # wavelength 1
    g = core.build_grid((0.0, 1.0), p, 2)
    assert g.h == pytest.approx(0.5)
    assert g.elems == (2,)


def test_build_grid_2d_1mhz():
    p = core.liver_params(1.0e6)
    g = core.build_grid(((0.0, 0.02), (0.0, 0.02)), p, 50)
    assert g.h == pytest.approx(3.192e-5, rel=1e-12)
    assert g.elems == (627, 627)
    assert g.dim == 2


def test_build_grid_tags_and_walls():
    p = core.liver_params(1.0e5)
    g = core.build_grid(((0.0, 0.01), (0.0, 0.005)), p, 10,
                        {"right": core.Tag.ABSORBING})
    assert g.absorbing_sides() == ["right"]
    nx1 = g.elems[0] + 1
    right = g.wall_nodes("right")
    assert right[0] == nx1 - 1 and len(right) == g.elems[1] + 1
    with pytest.raises(ValueError):
        core.build_grid((0.0, 0.01), p, 1)


def test_time_step():
    assert core.time_step(1.0e5, 20) == pytest.approx(5.0e-7, rel=1e-15)
    assert core.time_step(1.0e6, 20) == pytest.approx(5.0e-8, rel=1e-15)
    assert core.time_step(1.0, 1.0) == 1.0


def test_simconfig_validation():
    p = core.liver_params(1.0e5)
    g = core.build_grid((0.0, 0.03), p, 10)
    with pytest.raises(ValueError):
        core.SimConfig(params=p, grid=g, dt=-1.0, t_final=1.0)
    with pytest.raises(ValueError):
        core.SimConfig(params=p, grid=g, dt=1.0, t_final=0.5)
