"""Rate-experiment driver: config validation, chain moments, fused worker,
rate fits, persistence, and the bounds lattice report."""
import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from pchaos.config import ConfigError, load_config
from pchaos.core import GridField, KernelSpec, TorusGrid, fourier_field
from pchaos.experiments import (
    _PHI_PANEL,
    _chain_moments,
    _rate_worker,
    ExperimentConfig,
    fit_rate,
    run_bounds_report,
    run_rate_experiment,
)
from pchaos.particles import (
    SimConfig,
    khat_drift_from_moments,
    run_ensemble,
    sample_initial,
)

from conftest import KERNEL_PATH


def _ecfg(tmp_path, **over):
    base = dict(
        kernel_path=str(KERNEL_PATH),
        density_cos=(1.0, 0.5),
        density_sin=(0.0, 0.25),
        N_list=(4, 6, 8),
        j_list=(1, 2),
        order=1,
        T=2e-3,
        dt=1e-3,
        replicas=100,
        seed=7,
        grid=32,
        sample_grid=64,
        bins=8,
        out_dir=str(tmp_path / "out"),
        workers=1,
    )
    base.update(over)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# configuration


def test_experiment_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="at least one N"):
        _ecfg(tmp_path, N_list=())
    with pytest.raises(ConfigError, match="from .1, 2."):
        _ecfg(tmp_path, j_list=(1, 3))
    with pytest.raises(ConfigError, match="largest j"):
        _ecfg(tmp_path, N_list=(1, 8))
    with pytest.raises(ConfigError, match="order must be 1 or 2"):
        _ecfg(tmp_path, order=3)
    with pytest.raises(ConfigError, match="positive horizon"):
        _ecfg(tmp_path, T=0.0)
    with pytest.raises(ConfigError, match="replicas >= 10"):
        _ecfg(tmp_path, replicas=5)
    with pytest.raises(ConfigError, match="above 1e-3"):
        _ecfg(tmp_path, density_cos=(1.0, 1.0))


def test_experiment_config_from_file_defaults(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(
        f"kernel = {KERNEL_PATH}\n"
        "density_cos = 1.0, 0.5\n"
        "N = 100, 200, 400\n"
        "T = 0.5\n",
        encoding="utf-8",
    )
    ecfg = ExperimentConfig.from_config(load_config(str(p)))
    assert ecfg.j_list == (1, 2)
    assert ecfg.order == 1
    assert ecfg.dt == 1e-3
    assert ecfg.replicas == 10_000
    assert ecfg.grid == 64 and ecfg.sample_grid == 256 and ecfg.bins == 32
    assert ecfg.out_dir == "results"
    over = ExperimentConfig.from_config(
        load_config(str(p)), out_override=str(tmp_path), seed_override=5
    )
    assert over.out_dir == str(tmp_path) and over.seed == 5


def test_canonical_text_ignores_runtime_knobs(tmp_path):
    a = _ecfg(tmp_path, seed=1, out_dir=str(tmp_path / "a"), workers=1)
    b = _ecfg(tmp_path, seed=99, out_dir=str(tmp_path / "b"), workers=4)
    assert a.canonical_text() == b.canonical_text()
    c = _ecfg(tmp_path, dt=5e-4)
    assert c.canonical_text() != a.canonical_text()
    assert Path(KERNEL_PATH).read_text(encoding="utf-8") in a.canonical_text()


# ---------------------------------------------------------------------------
# rate fitting


def test_fit_rate_exact_power_law():
    pts = [(n, 2.0 * n ** -1.5) for n in (10, 100, 1000, 10000)]
    fit = fit_rate(pts)
    assert fit.slope == pytest.approx(-1.5, rel=1e-12)
    assert fit.intercept == pytest.approx(math.log(2.0), rel=1e-12)
    assert fit.slope_se == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ValueError, match="three points"):
        fit_rate(pts[:2])
    with pytest.raises(ValueError, match="positive finite"):
        fit_rate([(10, 1.0), (100, 0.0), (1000, 1.0)])
    with pytest.raises(ValueError, match="positive finite"):
        fit_rate([(10, 1.0), (100, math.inf), (1000, 1.0)])


# ---------------------------------------------------------------------------
# companion-chain moments


def test_chain_moments_mode_zero_and_initial_row(default_kernel):
    g = TorusGrid(128)
    density = fourier_field(g, [1.0, 0.5], [0.0, 0.25])
    C, S = _chain_moments(default_kernel, density, 1e-3, 3)
    assert np.all(C[:, 0] == 1.0) and np.all(S[:, 0] == 0.0)
    # row 0 is the exact law of the inverse-CDF sampler: check against a
    # large Monte Carlo draw from that very sampler
    x = sample_initial(density, 400_000, np.random.default_rng(0))[:, 0]
    for m in range(1, C.shape[1]):
        mc = np.cos(2 * np.pi * m * x).mean()
        ms = np.sin(2 * np.pi * m * x).mean()
        assert C[0, m] == pytest.approx(mc, abs=5 / math.sqrt(400_000))
        assert S[0, m] == pytest.approx(ms, abs=5 / math.sqrt(400_000))


def test_chain_moments_pure_diffusion_damps_exactly():
    g = TorusGrid(256)
    density = fourier_field(g, [1.0, 0.4, 0.2])
    dt = 1e-3
    still = KernelSpec(
        b_cos=np.zeros(1), b_sin=np.zeros(1),
        k_cos=np.zeros(3), k_sin=np.zeros(3),
    )
    C, S = _chain_moments(still, density, dt, 2)
    for n in (1, 2):
        for m in (1, 2):
            # the complex moment damps without rotating, so the cosine and
            # sine parts shrink by the same exact heat factor
            damp = math.exp(-((2 * math.pi * m) ** 2) * dt * n)
            assert C[n, m] == pytest.approx(damp * C[0, m], rel=1e-8, abs=1e-12)
            assert S[n, m] == pytest.approx(damp * S[0, m], rel=1e-6, abs=1e-12)


def test_chain_moments_quadrature_self_convergence(default_kernel):
    # refining the quadrature cells leaves the law unchanged; the moments
    # must settle at second order in the cell width
    g = TorusGrid(64)
    density = fourier_field(g, [1.0, 0.5], [0.0, 0.25])
    ref = _chain_moments(default_kernel, density, 1e-3, 4, min_refine=12)
    c_coarse, s_coarse = _chain_moments(default_kernel, density, 1e-3, 4, min_refine=1)
    c_fine, s_fine = _chain_moments(default_kernel, density, 1e-3, 4, min_refine=4)
    err_coarse = max(np.abs(c_coarse - ref[0]).max(), np.abs(s_coarse - ref[1]).max())
    err_fine = max(np.abs(c_fine - ref[0]).max(), np.abs(s_fine - ref[1]).max())
    assert err_coarse < 1e-6
    assert err_fine < 1e-7
    assert err_fine < err_coarse / 2


def test_chain_moments_one_step_against_fine_quadrature(default_kernel):
    # independent route: E cos(2 pi m X_1) equals the Gaussian-damped moment
    # of y + dt * drift(y) under the sampler law, by the characteristic
    # function of the wrapped Gaussian increment
    g = TorusGrid(64)
    density = fourier_field(g, [1.0, 0.5], [0.0, 0.25])
    dt = 1e-3
    C, S = _chain_moments(default_kernel, density, dt, 1)
    refine = 64
    h = g.h / refine
    y = (np.arange(g.M * refine) + 0.5) * h
    masses = np.repeat(density.values * g.h, refine) / refine
    drift = default_kernel.b_values(y) + khat_drift_from_moments(
        default_kernel, y, C[0], S[0]
    )
    shifted = y + dt * drift
    for m in range(1, C.shape[1]):
        damp = math.exp(-((2 * math.pi * m) ** 2) * dt)
        want_c = damp * float((masses * np.cos(2 * np.pi * m * shifted)).sum())
        want_s = damp * float((masses * np.sin(2 * np.pi * m * shifted)).sum())
        assert C[1, m] == pytest.approx(want_c, abs=2e-6)
        assert S[1, m] == pytest.approx(want_s, abs=2e-6)


# ---------------------------------------------------------------------------
# the fused simulation worker


def _payload(kernel, density, N, dt, n_steps, seed, r0, r1):
    C, S = _chain_moments(kernel, density, dt, n_steps)
    return (
        kernel.to_text(), density.values, N, dt, n_steps, seed, r0, r1,
        C, S, _PHI_PANEL, 0,
    )


def test_worker_matches_canonical_ensemble(default_kernel):
    # same per-replica streams, so the interacting system inside the fused
    # worker must retrace run_ensemble up to floating-point reassociation
    g = TorusGrid(64)
    density = fourier_field(g, [1.0, 0.5], [0.0, 0.25])
    N, dt, n_steps, seed = 8, 1e-3, 3, 11
    _, _, _, _, _, _, _, x = _rate_worker(
        _payload(default_kernel, density, N, dt, n_steps, seed, 0, 5)
    )
    cfg = SimConfig(
        N=N, dt=dt, T=n_steps * dt, n_replicas=5, base_seed=seed,
        kernel=default_kernel, initial_density=density, drift_method="direct",
    )
    snaps = run_ensemble(cfg, [n_steps * dt])
    assert np.abs(x - snaps.positions[:, 0, :, 0]).max() < 1e-10


def test_worker_zero_interaction_null(default_kernel):
    # with no interaction modes the coupled companion is bitwise identical to
    # the system, so every estimated difference vanishes exactly
    kernel = KernelSpec(
        b_cos=default_kernel.b_cos, b_sin=default_kernel.b_sin,
        k_cos=np.zeros(1), k_sin=np.zeros(1),
    )
    g = TorusGrid(64)
    density = fourier_field(g, [1.0, 0.5])
    _, diffs, _, uX, aX, uY, aY, _ = _rate_worker(
        _payload(kernel, density, 6, 1e-3, 4, 3, 0, 4)
    )
    assert np.all(diffs == 0.0)
    assert np.array_equal(uX, uY) and np.array_equal(aX, aY)


def test_worker_chunking_is_invisible(default_kernel):
    g = TorusGrid(64)
    density = fourier_field(g, [1.0, 0.5], [0.0, 0.25])
    whole = _rate_worker(_payload(default_kernel, density, 6, 1e-3, 2, 9, 0, 6))
    lo = _rate_worker(_payload(default_kernel, density, 6, 1e-3, 2, 9, 0, 3))
    hi = _rate_worker(_payload(default_kernel, density, 6, 1e-3, 2, 9, 3, 6))
    for k in range(1, 8):
        joined = np.concatenate([lo[k], hi[k]])
        assert np.array_equal(whole[k], joined)


# ---------------------------------------------------------------------------
# the full driver


def test_run_rate_experiment_smoke(tmp_path):
    ecfg = _ecfg(tmp_path)
    res = run_rate_experiment(ecfg)
    names = [p[0] for p in _PHI_PANEL]
    assert res.primary in names
    assert sorted(res.ratios) == sorted(ecfg.N_list)
    assert set(res.fits) == {"bias", "pair"}
    assert math.isfinite(res.fits["bias"].slope)

    lines = Path(res.csv_path).read_text(encoding="utf-8").splitlines()
    assert lines[0] == "N,j,i,t,observable,estimate,prediction,se"
    # per N: four observables twice (corrected and plain), one pair cumulant,
    # one chi-squared row per requested j
    per_n = 2 * len(names) + 1 + len(ecfg.j_list)
    assert len(lines) == 1 + per_n * len(ecfg.N_list)

    manifest = json.loads(Path(res.manifest_path).read_text(encoding="utf-8"))
    assert manifest["status"] == "complete"
    assert manifest["rows"] == len(lines) - 1
    assert manifest["seed"] == ecfg.seed
    want_sha = hashlib.sha256(ecfg.canonical_text().encode()).hexdigest()
    assert manifest["config_sha256"] == want_sha


def test_run_rate_experiment_persists_failures(tmp_path):
    # a histogram with more cells than the sample volume supports dies inside
    # the estimation stage; whatever was already estimated must be flushed
    ecfg = _ecfg(tmp_path, bins=32)
    with pytest.raises(ValueError, match="too many cells"):
        run_rate_experiment(ecfg)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["status"].startswith("failed: ValueError")
    lines = (tmp_path / "out" / "rates.csv").read_text().splitlines()
    assert lines[0] == "N,j,i,t,observable,estimate,prediction,se"
    assert len(lines) > 1


# ---------------------------------------------------------------------------
# bounds lattice report


def test_bounds_report_clean_lattice(tmp_path):
    out = tmp_path / "bounds.csv"
    rep = run_bounds_report(
        j_list=(1, 4), ell_max=8, b_list=(1, 3), t_list=(0.5,),
        out_csv=out, residual_order=8,
    )
    assert rep.ok and rep.violations == []
    assert len(rep.rows) == 2 * 8 * 2
    assert all(r["margin"] >= -1e-12 for r in rep.rows)
    assert len(rep.summary) == 4 and all("PASS" in s for s in rep.summary)
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "j,ell,beta,t,I,poly_b,poly_bound,exp_bound,margin"
    assert len(lines) == 1 + len(rep.rows)
    # the exponential-bound column is blank where its hypothesis fails
    assert any(",," in line for line in lines[1:])


def test_bounds_report_flags_injected_fault():
    # at (j=16, ell=64, b=7, t=0.1) the polynomial bound sits near 3e-4, so
    # shifting every value up by 1e-3 must be caught
    rep = run_bounds_report(
        j_list=(16,), ell_max=64, b_list=(7,), t_list=(0.1,),
        inject=1e-3, residual_order=8,
    )
    assert not rep.ok
    assert any(v.startswith("poly") for v in rep.violations)
    assert any("FAIL" in s for s in rep.summary)


def test_bounds_report_rejects_empty_lattice():
    with pytest.raises(ValueError, match="no lattice points"):
        run_bounds_report(j_list=())
