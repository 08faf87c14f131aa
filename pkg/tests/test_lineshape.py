import math

import numpy as np
import pytest
from scipy.integrate import quad

from srs_qmetro.lineshape import (Line, LineshapeParams, PulseSpec, QuadratureError,
                                  compute_gamma_srs, compute_h_srs, gaussian_spectral_density,
                                  line_overlap, narrowband_gamma_srs, panel_quadrature,
                                  spectral_density_samples, two_photon_spectral_density)

PUMP = PulseSpec(12.0, 0.05)
PROBE = PulseSpec(11.0, 0.05)


def params(*lines, n=10 ** 6):
    return LineshapeParams(n, 1e-3, 1e-3, lines)


def test_pulse_is_normalized():
    p = PulseSpec(3.0, 0.2)
    norm = quad(lambda w: p.amplitude(w) ** 2 / (2 * math.pi), 1.0, 5.0, points=[3.0])[0]
    assert norm == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("s1, s2", [(0.05, 0.05), (0.05, 0.12), (0.3, 0.02)])
def test_spectral_density_matches_gaussian_convolution(s1, s2):
    pu, pr = PulseSpec(12.0, s1), PulseSpec(11.0, s2)
    for w in np.linspace(0.5, 1.5, 11):
        assert abs(two_photon_spectral_density(pu, pr, w) - gaussian_spectral_density(pu, pr, w)) < 1e-8


def test_identical_pulses_resonant_h_vanishes():
    p = params(Line(1.0, 0.02, 1.0))
    gamma = compute_gamma_srs(p, PUMP, PROBE)
    h = compute_h_srs(p, PUMP, PROBE)
    assert gamma > 0
    assert abs(h) <= 1e-8 * gamma


def test_detuning_sign_of_h():
    # two-photon detuning above the line: the dispersive kernel is positive there
    above = params(Line(0.9, 0.02, 1.0))
    below = params(Line(1.1, 0.02, 1.0))
    assert compute_h_srs(above, PUMP, PROBE) > 0
    assert compute_h_srs(below, PUMP, PROBE) < 0


def test_broad_line_limit():
    p = params(Line(1.0, 50.0, 1.0))
    assert compute_gamma_srs(p, PUMP, PROBE) == pytest.approx(narrowband_gamma_srs(p, PUMP, PROBE), rel=1e-5)


def test_narrow_line_limit():
    # a line much narrower than the pulses samples |Phi|^2 at the line: gamma -> N eps^4 |a|^2 |Phi(w_l)|^2
    line = Line(1.02, 1e-5, 1.0)
    p = params(line)
    expected = p.prefactor * gaussian_spectral_density(PUMP, PROBE, 1.02) ** 2
    assert compute_gamma_srs(p, PUMP, PROBE) == pytest.approx(expected, rel=1e-3)


def test_zero_polarizability_gives_zero():
    p = params(Line(1.0, 0.02, 0.0))
    assert compute_gamma_srs(p, PUMP, PROBE) == 0.0
    assert compute_h_srs(p, PUMP, PROBE) == 0.0


def test_lines_add():
    a, b = Line(1.0, 0.02, 1.0), Line(1.05, 0.03, 0.4)
    for fn in (compute_gamma_srs, compute_h_srs):
        both = fn(params(a, b), PUMP, PROBE)
        assert both == pytest.approx(fn(params(a), PUMP, PROBE) + fn(params(b), PUMP, PROBE), rel=1e-12)


def test_panel_and_adaptive_quadrature_agree():
    line = Line(1.03, 0.02, 1.0)
    for kind in ("absorptive", "dispersive"):
        a = line_overlap(kind, line, PUMP, PROBE)
        b = line_overlap(kind, line, PUMP, PROBE, method="panels")
        assert b == pytest.approx(a, rel=1e-8, abs=1e-12)


def test_quadrature_of_the_spectral_density_itself():
    line = Line(1.0, 0.02, 1.0)
    a = line_overlap("absorptive", line, PUMP, PROBE)
    b = line_overlap("absorptive", line, PUMP, PROBE, spectral="quad")
    assert b == pytest.approx(a, rel=1e-8)


def test_panel_quadrature_reports_failure():
    with pytest.raises(QuadratureError):
        panel_quadrature(lambda x: np.sin(1e6 * x) * 0 + np.sign(x - 0.3333), 0.0, 1.0, max_doublings=2,
                         rtol=1e-15)


def test_linear_in_molecule_number_and_field_strengths():
    line = Line(1.0, 0.02, 1.0)
    g1 = compute_gamma_srs(LineshapeParams(1000, 1e-3, 2e-3, (line,)), PUMP, PROBE)
    g2 = compute_gamma_srs(LineshapeParams(3000, 2e-3, 2e-3, (line,)), PUMP, PROBE)
    assert g2 / g1 == pytest.approx(12.0, rel=1e-12)


def test_validation():
    with pytest.raises(ValueError):
        PulseSpec(1.0, 0.0)
    with pytest.raises(ValueError):
        PulseSpec(1.0, 0.1, shape="sech")
    with pytest.raises(ValueError):
        Line(1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        Line(1.0, 0.1, -1.0)
    with pytest.raises(ValueError):
        LineshapeParams(0, 1.0, 1.0)
    assert LineshapeParams(5, 1.0, 1.0, ({"omega_line": 1.0, "gamma_line": 0.1,
                                          "polarizability_sq": 2.0},)).lines[0].polarizability_sq == 2.0


def test_samples_cover_window():
    omega, phi = spectral_density_samples(PUMP, PROBE, params(Line(1.0, 0.02, 1.0)), 101)
    assert omega.size == 101 and phi.max() == pytest.approx(1.0, rel=1e-3)
    assert omega[0] <= 1.0 - 8 * math.hypot(0.05, 0.05) + 1e-12
