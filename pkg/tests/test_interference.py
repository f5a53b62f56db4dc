import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from itsnbf.geometry import SystemConfig, upa_steering
from itsnbf.interference import (InterferenceModel, PolarGrid, Provenance, TerrestrialLayout,
                                 approximation_error_element, approximation_error_matrix,
                                 approximation_mse, average_interference_power, bessel_j0,
                                 integral_interference_matrix, one_minus_j0,
                                 pa_interference_matrix, propagation_distance)
from itsnbf.scenario import hexagonal_stations

C = 299792458.0
CFG = SystemConfig()


def table1_layout(cell_radius=500.0):
    return TerrestrialLayout(hexagonal_stations(400e3, 0.0, math.sqrt(3) * cell_radius), cell_radius, 10)


def rel_fro(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_propagation_distance_examples():
    assert propagation_distance(600e3, 0, 0, 0, 0) == 600e3
    assert propagation_distance(600e3, 1000, 0, 1000, math.pi) == pytest.approx(600e3, rel=1e-15)
    h, R, psi, r, phi = 600e3, 5e4, 0.3, 400, 1.1
    # law of cosines on the ground, then Pythagoras to the satellite
    ground = math.hypot(R * math.cos(psi) + r * math.cos(phi), R * math.sin(psi) + r * math.sin(phi))
    assert propagation_distance(h, R, psi, r, phi) == pytest.approx(math.hypot(h, ground), rel=1e-9)


def test_integral_matrix_is_hermitian_psd_with_positive_diagonal():
    m = integral_interference_matrix(table1_layout(), CFG).matrix
    assert np.max(np.abs(m - m.conj().T)) <= 1e-12 * np.trace(m).real
    assert np.linalg.eigvalsh(m).min() >= -1e-10 * np.trace(m).real
    assert np.all(np.diag(m).real > 0)


def test_small_cell_limit_equals_pa():
    lay = table1_layout(1e-3)
    a = integral_interference_matrix(lay, CFG).matrix
    b = pa_interference_matrix(lay, CFG).matrix
    assert rel_fro(a, b) < 1e-6
    zero = integral_interference_matrix(table1_layout(0.0), CFG).matrix
    np.testing.assert_allclose(zero, pa_interference_matrix(table1_layout(0.0), CFG).matrix)


def test_grid_refinement():
    lay = table1_layout()
    model = integral_interference_matrix(lay, CFG, PolarGrid(32, 64), estimate_error=True)
    fine = integral_interference_matrix(lay, CFG, PolarGrid(64, 128)).matrix
    assert rel_fro(model.matrix, fine) < 1e-4
    assert model.quadrature_error == pytest.approx(rel_fro(model.matrix, fine))


def test_grid_doublings_form_cauchy_sequence():
    lay = TerrestrialLayout(((200e3, 0.5),), 20e3, 5)  # large cell so the rule error is visible
    mats = [integral_interference_matrix(lay, CFG, PolarGrid(8 * 2 ** i, 16 * 2 ** i)).matrix
            for i in range(4)]
    steps = [np.linalg.norm(b - a) for a, b in zip(mats, mats[1:])]
    assert steps[0] > steps[1] > steps[2]


def monte_carlo_matrix(layout, config, n, rng, chunk=100_000):
    """Average of K_bar * gamma^2 v v^H over users sampled uniformly in the cells."""
    m = config.n_antennas
    acc = np.zeros((m, m), dtype=complex)
    per_station = n // layout.n_stations
    for R_n, psi_n in layout.stations:
        done = 0
        while done < per_station:
            k = min(chunk, per_station - done)
            r = layout.cell_radius_m * np.sqrt(rng.uniform(size=k))
            phi = rng.uniform(0, 2 * np.pi, size=k)
            x = R_n * math.cos(psi_n) + r * np.cos(phi)
            y = R_n * math.sin(psi_n) + r * np.sin(phi)
            d = np.sqrt(config.orbit_altitude_m ** 2 + x ** 2 + y ** 2)
            v = upa_steering(x / config.coverage_radius_m, y / config.coverage_radius_m,
                             config.m_x, config.m_y)
            acc += (v * config.path_gain(d)) @ v.conj().T / per_station
            done += k
    return layout.users_per_bs * acc


def test_integral_matches_user_position_monte_carlo_single_cell():
    # one cell at the sub-satellite point, cell large enough that the kernel varies
    lay = TerrestrialLayout(((0.0, 0.0),), 30e3, 10)
    cfg = SystemConfig(m_x=4, m_y=4)
    model = integral_interference_matrix(lay, cfg)
    mc = monte_carlo_matrix(lay, cfg, 10 ** 6, np.random.default_rng(4))
    assert rel_fro(model.matrix, mc) < 0.005
    # diagonal closed form: K_bar M G c^2/(4 pi f)^2 * (1/(pi R^2)) * pi log(1 + R^2/h^2)
    h, R = cfg.orbit_altitude_m, 30e3
    diag = (10 * cfg.n_antennas * cfg.per_antenna_tx_gain_linear * (C / (4 * math.pi * 2e9)) ** 2
            * math.log1p(R * R / (h * h)) / (R * R) / cfg.n_antennas)
    assert model.matrix[0, 0].real == pytest.approx(diag, rel=1e-5)


def test_density_must_integrate_to_one():
    lay = TerrestrialLayout(((0.0, 0.0),), 1e3, 1, density_fn=lambda r, p: 2.0 / (math.pi * 1e6))
    with pytest.warns(RuntimeWarning, match="renormalising"):
        m = integral_interference_matrix(lay, CFG).matrix
    ref = integral_interference_matrix(TerrestrialLayout(((0.0, 0.0),), 1e3, 1), CFG).matrix
    np.testing.assert_allclose(m, ref, rtol=1e-12)


def test_gaussian_density_supported():
    lay = TerrestrialLayout(((1e5, 0.0),), 5e3, 3, density="gaussian")
    m = integral_interference_matrix(lay, CFG).matrix
    assert np.trace(m).real > 0
    with pytest.raises(ValueError):
        TerrestrialLayout(((1e5, 0.0),), 5e3, 3, density="nope")


def test_pa_examples():
    lay = TerrestrialLayout(((0.0, 0.0),), 500.0, 10)
    m = pa_interference_matrix(lay, CFG).matrix
    g2 = float(CFG.path_gain(CFG.orbit_altitude_m))
    np.testing.assert_allclose(m, 10 * g2 * np.ones((64, 64)) / 64, rtol=1e-12)
    assert np.linalg.matrix_rank(m, tol=1e-8 * np.trace(m).real) == 1
    # orthogonal steerings: two stations on the DFT grid of a 4 x 1 array
    cfg = SystemConfig(m_x=4, m_y=1)
    R = cfg.coverage_radius_m
    lay = TerrestrialLayout(((0.0, 0.0), (0.5 * R, 0.0)), 0.0, 3)
    ev = np.sort(np.linalg.eigvalsh(pa_interference_matrix(lay, cfg).matrix))[-2:]
    expect = sorted(3 * float(cfg.path_gain(math.hypot(cfg.orbit_altitude_m, d))) for d in (0.0, 0.5 * R))
    np.testing.assert_allclose(ev, expect, rtol=1e-10)


def test_pa_trace_oracle():
    lay = table1_layout()
    tr = pa_interference_matrix(lay, CFG).trace
    oracle = 0.0
    for R_n, _ in lay.stations:
        d = math.sqrt(600e3 ** 2 + R_n ** 2)
        oracle += 10 * 64 * db_lin(6.0) * (C / (4 * math.pi * 2e9 * d)) ** 2
    assert tr == pytest.approx(oracle, rel=1e-9)


def db_lin(x):
    return 10 ** (x / 10)


def test_pa_gap_grows_with_cell_radius():
    gaps = []
    for R in (100, 300, 1000, 3000, 10000):
        lay = table1_layout(R)
        gaps.append(np.linalg.norm(integral_interference_matrix(lay, CFG).matrix
                                   - pa_interference_matrix(lay, CFG).matrix))
    assert all(b >= a for a, b in zip(gaps, gaps[1:]))


def test_average_interference_examples():
    P = np.zeros((3, 2))
    assert average_interference_power(P, np.eye(3), 4) == 0.0
    rng = np.random.default_rng(1)
    P = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    P *= math.sqrt(5.0) / np.linalg.norm(P)
    assert average_interference_power(P, np.eye(3), 4) == pytest.approx(5.0 / 4)
    assert average_interference_power(2.5 * P, np.eye(3), 4) == pytest.approx(6.25 * 5 / 4)
    with pytest.raises(ValueError):
        average_interference_power(P, np.eye(4), 4)
    with pytest.raises(ValueError):
        average_interference_power(P, np.eye(3), 0)


def test_average_interference_sampling_oracle():
    cfg = SystemConfig(m_x=2, m_y=2)
    lay = TerrestrialLayout(((1e5, 0.3), (2e5, 2.0)), 40e3, 5)
    k_g = lay.total_users
    model = integral_interference_matrix(lay, cfg, PolarGrid(64, 128))
    rng = np.random.default_rng(9)
    P = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    n = 10 ** 5
    total = 0.0
    for R_n, psi_n in lay.stations:  # each sample draws all K_bar users of the cell
        r = lay.cell_radius_m * np.sqrt(rng.uniform(size=(n, lay.users_per_bs)))
        phi = rng.uniform(0, 2 * np.pi, size=(n, lay.users_per_bs))
        x = R_n * math.cos(psi_n) + r * np.cos(phi)
        y = R_n * math.sin(psi_n) + r * np.sin(phi)
        d = np.sqrt(cfg.orbit_altitude_m ** 2 + x ** 2 + y ** 2)
        v = upa_steering(x.ravel() / cfg.coverage_radius_m, y.ravel() / cfg.coverage_radius_m, 2, 2)
        h = v * np.sqrt(cfg.path_gain(d.ravel()))  # LoS channel, phase irrelevant
        total += np.sum(np.abs(h.conj().T @ P) ** 2) / n
    assert average_interference_power(P, model, k_g) == pytest.approx(total / k_g, rel=0.01)


def test_interference_model_validation():
    with pytest.raises(ValueError, match="Hermitian"):
        InterferenceModel(np.array([[1.0, 1.0], [0.0, 1.0]]), Provenance.INTEGRAL, "x")
    with pytest.raises(ValueError, match="PSD"):
        InterferenceModel(np.diag([1.0, -1.0]), Provenance.INTEGRAL, "x")
    with pytest.raises(ValueError):
        PolarGrid(2, 64)
    with pytest.raises(ValueError):
        TerrestrialLayout((), 1.0, 1)


def test_layout_fingerprint_tracks_contents():
    a, b = table1_layout(), table1_layout(600.0)
    assert a.fingerprint() == table1_layout().fingerprint() != b.fingerprint()
    assert a.total_users == 70


# --------------------------------------------------------------------------
# Bessel J0


def test_j0_examples():
    assert bessel_j0(0.0) == 1.0
    assert abs(bessel_j0(2.404825557695773)) < 1e-9


@settings(max_examples=200)
@given(st.floats(-1000, 1000))
def test_j0_even_and_accurate(x):
    assert bessel_j0(-x) == bessel_j0(x)
    assert abs(bessel_j0(x) - special.j0(x)) <= 1e-10


def test_j0_dense_grid_accuracy():
    x = np.linspace(0, 1000, 200_001)
    assert np.max(np.abs(bessel_j0(x) - special.j0(x))) <= 1e-10


def test_one_minus_j0_small_argument():
    # series oracle: x^2/4 - x^4/64 + x^6/2304
    for x in (1e-8, 1e-4, 1e-2):
        oracle = x * x / 4 - x ** 4 / 64 + x ** 6 / 2304
        assert one_minus_j0(x) == pytest.approx(oracle, rel=1e-12)
    assert one_minus_j0(3.0) == pytest.approx(1 - special.j0(3.0), rel=1e-12)


# --------------------------------------------------------------------------
# PA approximation error


def eta(rho, f=2e9):
    return db_lin(6.0) * C ** 2 * rho / (4 * math.pi * f) ** 2


def test_error_element_zero_cell_and_log_oracle():
    h, R_sat = 600e3, 630e3
    assert approximation_error_element(3.0, 0.0, 1e-4, 2e9, h, R_sat, db_lin(6.0), 1.0) == 0.0
    for R in (100.0, 500.0, 1000.0, 5e4):
        x = R * R / (h * h)
        gap = math.pi * (x - math.log1p(x))
        oracle = eta(1e-4) ** 2 * gap ** 2
        got = approximation_error_element(0.0, R, 1e-4, 2e9, h, R_sat, db_lin(6.0), 1.0)
        assert got == pytest.approx(oracle, rel=1e-8)


def test_error_trends():
    h, R_sat = 600e3, 630e3
    radii = np.arange(100, 1001, 100.0)
    for omega in (0.0, 1.0, math.sqrt(2), 5.0, math.sqrt(98)):
        vals = [approximation_error_element(omega, R, 1e-4, 2e9, h, R_sat, db_lin(6.0), 1.0)
                for R in radii]
        assert all(b > a for a, b in zip(vals, vals[1:]))
        rho = [approximation_error_element(omega, 500, p, 2e9, h, R_sat, db_lin(6.0), 1.0)
               for p in (1e-5, 1e-4, 1e-3)]
        assert rho[0] <= rho[1] <= rho[2]
        fs = [approximation_error_element(omega, 500, 1e-4, f, h, R_sat, db_lin(6.0), 1.0)
              for f in (2e9, 4e9, 6e9)]
        assert fs[0] >= fs[1] >= fs[2]


def test_error_matrix_structure():
    cfg = SystemConfig(m_x=3, m_y=3)
    E = approximation_error_matrix(cfg, 500.0, 1e-4)
    np.testing.assert_allclose(E, E.T)
    assert np.all(E >= 0)
    assert np.allclose(np.diag(E), E[0, 0])
    assert approximation_mse(cfg, 500.0, 1e-4) == pytest.approx(E.mean())
