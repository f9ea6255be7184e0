"""Grids, fields, band-limited kernels, and spectral quadrature."""
import numpy as np
import pytest

from pchaos.core import (
    GridField,
    KernelSpec,
    TorusGrid,
    convolve_density,
    eval_kernel,
    fourier_field,
    product_field,
    quadrature,
    trig_interp,
)


def test_grid_basics():
    g = TorusGrid(8)
    assert g.h == 0.125
    assert np.array_equal(g.points, np.arange(8) / 8)
    assert g.shape(3) == (8, 8, 8)
    assert g.cell_volume(2) == 0.125 ** 2
    c1 = g.coord(1, arity=3)
    assert c1.shape == (1, 8, 1)


def test_grid_validation():
    with pytest.raises(ValueError, match="at least 2"):
        TorusGrid(1)
    with pytest.raises(ValueError, match="dim"):
        TorusGrid(8, 3)
    with pytest.raises(ValueError, match="axis"):
        TorusGrid(8).coord(2, arity=2)


def test_field_reshapes_flat_input():
    g = TorusGrid(4)
    f = GridField(g, 2, np.arange(16.0))
    assert f.values.shape == (4, 4)
    with pytest.raises(ValueError, match="entries"):
        GridField(g, 2, np.arange(15.0))


def test_integrate_exact_for_trig_polynomials():
    g = TorusGrid(16)
    f = fourier_field(g, [1.0, 0.3, 0.0, -0.2], [0.0, 0.1, 0.4, 0.0])
    # every nonconstant mode integrates to zero on the full period
    assert quadrature(f) == pytest.approx(1.0, abs=1e-15)


def test_marginalize_tensor_product():
    g = TorusGrid(16)
    rho = fourier_field(g, [1.0, 0.5])
    sig = fourier_field(g, [1.0, 0.0, 0.25])
    f2 = GridField(g, 2, np.multiply.outer(rho.values, sig.values))
    m0 = f2.marginalize(0)   # integrates out x_1, leaving sigma * mass(rho)
    m1 = f2.marginalize(1)
    assert np.allclose(m0.values, sig.values, atol=1e-14)
    assert np.allclose(m1.values, rho.values, atol=1e-14)
    with pytest.raises(ValueError, match="coordinate"):
        f2.marginalize(2)


def test_is_probability_density():
    g = TorusGrid(32)
    assert fourier_field(g, [1.0, 0.5]).is_probability_density()
    assert not fourier_field(g, [2.0]).is_probability_density()
    assert not fourier_field(g, [1.0, 1.5]).is_probability_density()  # negative part


def test_kernel_eval_matches_series(default_kernel):
    rng = np.random.default_rng(7)
    x = rng.random(64)
    y = rng.random(64)
    want = 0.75 * np.cos(2 * np.pi * x) + 0.25 * np.sin(2 * np.pi * (x - y))
    got = eval_kernel(default_kernel, x, y)
    assert np.allclose(got, want, atol=1e-14)
    assert default_kernel.sup_norm_bound == 1.0
    assert default_kernel.band == 1
    assert not default_kernel.is_zero()
    assert KernelSpec.zero().is_zero()


def test_kernel_text_roundtrip_preserves_floats():
    rng = np.random.default_rng(3)
    k = KernelSpec.from_tables(
        b={0: (rng.random(), 0.0), 2: (rng.random(), -rng.random())},
        khat={1: (0.0, rng.random()), 3: (rng.random() * 1e-7, rng.random())},
    )
    k2 = KernelSpec.from_text(k.to_text())
    for name in ("b_cos", "b_sin", "k_cos", "k_sin"):
        assert np.array_equal(getattr(k, name), getattr(k2, name))


@pytest.mark.parametrize(
    "line, message",
    [
        ("b 1 0.5", "4 fields"),
        ("c 1 0.5 0.0", "unknown part"),
        ("b -1 0.5 0.0", "negative mode"),
        ("b 0 0.5 0.3", "mode 0 sin"),
        ("b 1 0.5 0.0\nb 1 0.2 0.0", "duplicate"),
        ("b one 0.5 0.0", "invalid literal"),
        ("b 1 nan 0.0", "non-finite"),
    ],
)
def test_kernel_text_errors(line, message):
    with pytest.raises(ValueError, match=message):
        KernelSpec.from_text(line)


def test_kernel_text_ignores_comments_and_blanks(default_kernel):
    text = "# stock kernel\n\nb 1 0.75 0.0   # confinement\nkhat 1 0.0 0.25\n"
    k = KernelSpec.from_text(text)
    assert np.array_equal(k.b_cos, default_kernel.b_cos)
    assert np.array_equal(k.k_sin, default_kernel.k_sin)


def test_kernel_mode0_sine_rejected_in_constructor():
    with pytest.raises(ValueError, match="mode-0 sine"):
        KernelSpec([0.0], [0.1], [0.0], [0.0])


def test_coeff_fft_reconstructs_samples():
    k = KernelSpec.from_tables(b={1: (0.4, -0.2), 2: (0.0, 0.1)}, khat={2: (0.3, 0.0)})
    M = 16
    x = np.arange(M) / M
    b_grid = np.fft.ifft(k.b_coeff_fft(M)).real * M
    kh_grid = np.fft.ifft(k.khat_coeff_fft(M)).real * M
    assert np.allclose(b_grid, k.b_values(x), atol=1e-13)
    assert np.allclose(kh_grid, k.khat_values(x), atol=1e-13)
    with pytest.raises(ValueError, match="Nyquist"):
        k.b_coeff_fft(4)


def test_convolve_density_equals_direct_sum():
    rng = np.random.default_rng(11)
    g = TorusGrid(32)
    k = KernelSpec.from_tables(b={0: (0.2, 0.0), 1: (0.5, 0.1)},
                               khat={1: (-0.3, 0.4), 5: (0.2, 0.2)})
    rho = GridField(g, 1, 1.0 + 0.5 * rng.standard_normal(32))
    x = g.points
    direct = g.h * np.array([np.sum(eval_kernel(k, xi, x) * rho.values) for xi in x])
    conv = convolve_density(k, rho)
    assert np.allclose(conv.values, direct, atol=1e-13)


def test_convolve_density_mass_and_zero_kernel():
    g = TorusGrid(16)
    rho = fourier_field(g, [1.0, 0.5])
    assert np.allclose(convolve_density(KernelSpec.zero(), rho).values, 0.0)
    k = KernelSpec.from_tables(b={0: (2.0, 0.0)})
    assert np.allclose(convolve_density(k, rho).values, 2.0, atol=1e-14)


def test_fourier_field_band_check():
    with pytest.raises(ValueError, match="Nyquist"):
        fourier_field(TorusGrid(4), [1.0, 0.1, 0.1])
    with pytest.raises(ValueError, match="equal length"):
        fourier_field(TorusGrid(8), [1.0, 0.1], [0.0])


def test_product_field_values():
    g = TorusGrid(8)
    rho = fourier_field(g, [1.0, 0.25])
    p3 = product_field(rho, 3)
    assert p3.arity == 3
    i, j, l = 1, 5, 2
    assert p3.values[i, j, l] == pytest.approx(
        rho.values[i] * rho.values[j] * rho.values[l], rel=1e-15
    )
    assert p3.integrate() == pytest.approx(1.0, abs=1e-14)


def test_trig_interp_exact_off_grid():
    g = TorusGrid(32)
    cos_c = [1.0, 0.3, 0.0, -0.2]
    sin_c = [0.0, -0.1, 0.25, 0.0]
    f = fourier_field(g, cos_c, sin_c)
    rng = np.random.default_rng(5)
    x = rng.random(40)
    m = np.arange(4)[:, None]
    want = (np.asarray(cos_c)[:, None] * np.cos(2 * np.pi * m * x)
            + np.asarray(sin_c)[:, None] * np.sin(2 * np.pi * m * x)).sum(axis=0)
    assert np.allclose(trig_interp(f, x), want, atol=1e-12)
    # on-grid evaluation reproduces the samples themselves
    assert np.allclose(trig_interp(f, g.points), f.values, atol=1e-12)
