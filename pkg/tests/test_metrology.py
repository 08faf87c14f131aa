import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from srs_qmetro.acceptance import phase_family
from srs_qmetro.channel import SrsParams, build_generator
from srs_qmetro.fock import DimensionError, FockDims, embed, number_op, unvec, vectorize
from srs_qmetro.metrology import (DerivativeError, FisherResult, drho_dgamma, evaluate,
                                  finite_difference, mom_fisher, observable_operator, qfi,
                                  qfi_with_sensitivity, snr_per_shot)
from srs_qmetro.optimizer import failed_result
from srs_qmetro.states import SQUEEZED, ProbeSpec, build_input, with_budget

SMALL = FockDims(8, 6)


def dense_oracle(probe, gamma, dims=SMALL):
    """rho(gamma) and d rho/d gamma from a scipy exponential of the generator (h = 0)."""
    K1 = build_generator(SrsParams(1.0), dims).matrix
    v = vectorize(build_input(probe, dims, eps=1e-4).matrix)
    out = scipy.sparse.linalg.expm_multiply(gamma * scipy.sparse.csr_array(K1), v)
    D = dims.joint
    return unvec(out, D), unvec(K1 @ out, D)


def eig_qfi(rho, drho, cut=1e-12):
    lam, vec = scipy.linalg.eigh(rho)
    a = vec.conj().T @ drho @ vec
    s = lam[:, None] + lam[None, :]
    return float(np.sum(np.where(s > cut, 2 * np.abs(a) ** 2 / np.where(s > cut, s, 1), 0)))


def random_unitary(rng, D):
    q, r = np.linalg.qr(rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


# -- QFI and MoM primitives -----------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2 ** 32 - 1))
def test_pure_phase_family_qfi_is_four_variances(d, seed):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=d) + 1j * rng.normal(size=d)
    psi /= np.linalg.norm(psi)
    rho, drho = phase_family(psi)
    p, n = np.abs(psi) ** 2, np.arange(d)
    var = p @ n ** 2 - (p @ n) ** 2
    if var > 1e-6:
        assert abs(qfi(rho, drho) - 4 * var) / (4 * var) < 1e-6


def test_qfi_basis_invariance():
    rng = np.random.default_rng(11)
    rho, drho = dense_oracle(ProbeSpec.coherent(0.6, 0.3), 0.05)
    U = random_unitary(rng, rho.shape[0])
    a = qfi(rho, drho)
    b = qfi(U @ rho @ U.conj().T, U @ drho @ U.conj().T)
    assert a > 0
    assert abs(a - b) <= 1e-8 * a


def test_qfi_of_constant_family_is_zero():
    rho = np.diag([0.5, 0.3, 0.2])
    assert qfi(rho, np.zeros((3, 3))) == 0.0
    with pytest.raises(DimensionError):
        qfi(rho, np.zeros((2, 2)))


def test_classical_mixture_qfi_is_classical_fisher():
    p = np.array([0.2, 0.3, 0.5])
    dp = np.array([0.1, -0.4, 0.3])
    assert qfi(np.diag(p), np.diag(dp)) == pytest.approx(np.sum(dp ** 2 / p))


def test_mom_divergence_is_flagged():
    rho = np.diag([0.0, 1.0, 0.0]).astype(complex)
    drho = np.diag([0.0, -1.0, 1.0]).astype(complex)
    m = mom_fisher(rho, drho, np.diag([0.0, 1.0, 2.0]))
    assert m.diverged and math.isinf(m.value)
    flat = mom_fisher(rho, np.zeros((3, 3)), np.diag([0.0, 1.0, 2.0]))
    assert not flat.diverged and flat.value == 0.0
    with pytest.raises(ValueError):
        mom_fisher(rho, drho, np.triu(np.ones((3, 3))))


def test_cutoff_sensitivity_flag():
    lam = np.array([0.5, 0.5 - 5e-12, 5e-12])
    rho = np.diag(lam)
    drho = np.zeros((3, 3))
    drho[2, 2] = 1e-10
    value, sensitive, lmin = qfi_with_sensitivity([(rho, drho)])
    assert sensitive
    assert lmin == pytest.approx(5e-12)
    assert not qfi_with_sensitivity([(np.diag([0.6, 0.4]), np.diag([0.1, -0.1]))])[1]


def test_snr_per_shot():
    assert snr_per_shot(2e-3, 0.0) == 0.0
    assert snr_per_shot(2e-3, 1 / 2e-3 ** 2) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        snr_per_shot(1.0, -1.0)


def test_observable_operator():
    dims = FockDims(3, 4)
    n_pu, n_pr = embed(number_op(3), "pump", dims), embed(number_op(4), "probe", dims)
    assert np.allclose(observable_operator("delta_n", dims), n_pu - n_pr)
    assert np.allclose(observable_operator("n_tot", dims), n_pu + n_pr)
    with pytest.raises(ValueError):
        observable_operator("parity", dims)


# -- finite differences ------------------------------------------------------------


def test_finite_difference_interior_and_boundary():
    d, info = finite_difference(lambda g: np.array([math.exp(3 * g)]), 0.2)
    assert d[0] == pytest.approx(3 * math.exp(0.6), rel=1e-9)
    assert not info["boundary"]
    d, info = finite_difference(lambda g: np.array([math.sin(g) + g * g]), 0.0)
    assert d[0] == pytest.approx(1.0, rel=1e-7)
    assert info["boundary"]


def test_finite_difference_reports_non_smooth_functions():
    with pytest.raises(DerivativeError):
        finite_difference(lambda g: np.array([max(g - 0.5, 0.0) ** 0.5]), 0.5)


# -- full pipeline against the dense oracle ------------------------------------------------


ORACLE_PROBES = [ProbeSpec.coherent(0.6, 0.3), ProbeSpec.squeezed(0.6, 0.3, 0.1), ProbeSpec.tms(0.25)]


@pytest.mark.parametrize("probe", ORACLE_PROBES)
@pytest.mark.parametrize("derivative", ["fd", "exact"])
def test_evaluate_matches_dense_oracle(probe, derivative):
    gamma = 0.05
    rho, drho = dense_oracle(probe, gamma)
    res = evaluate(probe, gamma, 0.0, (1.0, 1.0), ("delta_n", "n_pr"), dims=SMALL,
                   derivative=derivative, eps_trunc=1e-4)
    assert res.qfi == pytest.approx(eig_qfi(rho, drho), rel=1e-6)
    for name in ("delta_n", "n_pr"):
        X = observable_operator(name, SMALL)
        expected = np.real(np.trace(X @ drho)) ** 2 / (
            np.real(np.trace(X @ X @ rho)) - np.real(np.trace(X @ rho)) ** 2)
        assert res.mom[name] == pytest.approx(expected, rel=1e-6)


def test_drho_dgamma_matches_dense_oracle():
    probe = ORACLE_PROBES[1]
    rho, drho = dense_oracle(probe, 0.1)
    ours_rho, ours_drho = drho_dgamma(probe, 0.1, dims=SMALL, method="exact", eps_trunc=1e-4)
    scale = np.abs(drho).max()
    assert np.abs(ours_rho - rho).max() < 1e-6 or np.abs(ours_rho - rho).max() < 1e-12 + 1e-6
    assert np.abs(ours_drho - drho).max() < 1e-6 * scale


def test_exact_and_finite_difference_derivatives_agree():
    probe = with_budget(SQUEEZED, 3.0, 1.0, 0.3)
    a = evaluate(probe, 2e-3, derivative="fd")
    b = evaluate(probe, 2e-3, derivative="exact")
    assert a.qfi == pytest.approx(b.qfi, rel=1e-6)
    assert a.mom["delta_n"] == pytest.approx(b.mom["delta_n"], rel=1e-6)


def test_population_path_matches_full_state_path():
    probe = with_budget(SQUEEZED, 2.0, 0.5, 0.2)
    full = evaluate(probe, 2e-3, observables=("n_pr", "delta_n"))
    pops = evaluate(probe, 2e-3, observables=("n_pr", "delta_n"), compute_qfi=False)
    for name in ("n_pr", "delta_n"):
        assert pops.mom[name] == pytest.approx(full.mom[name], rel=1e-7)
    assert pops.qfi is None


def test_hamiltonian_part_runs_through_finite_differences():
    probe = ProbeSpec.coherent(0.6, 0.3)
    res = evaluate(probe, 0.05, 0.3, dims=SMALL, eps_trunc=1e-4)
    assert res.qfi > 0 and res.mom["delta_n"] <= res.qfi * (1 + 1e-6)
    with pytest.raises(ValueError):
        evaluate(probe, 0.05, 0.3, dims=SMALL, derivative="exact", eps_trunc=1e-4)


# -- physics properties -----------------------------------------------------------------------


def test_tms_saturation_at_moderate_gain():
    res = evaluate(ProbeSpec.tms_with_photons(1.0), 2e-3)
    assert res.mom["delta_n"] <= res.qfi * (1 + 1e-6)
    assert res.mom["delta_n"] / res.qfi >= 0.95


def test_zero_gain_is_a_boundary_point():
    res = evaluate(ProbeSpec.coherent(1.0, 0.5), 0.0)
    assert "boundary" in res.flags
    # the pure input has no support where scattered photons land
    assert math.isinf(res.qfi) and "diverged:qfi" in res.flags
    assert 0 < res.mom["delta_n"] < math.inf


def test_detector_loss_removes_the_divergence():
    probe = ProbeSpec.tms_with_photons(1.0)
    perfect = evaluate(probe, 1e-5)
    lossy = evaluate(probe, 1e-5, eta=(0.9, 0.9))
    assert math.isfinite(lossy.mom["delta_n"])
    assert lossy.mom["delta_n"] < perfect.mom["delta_n"]
    assert lossy.qfi_lossy <= lossy.qfi
    assert lossy.mom["delta_n"] <= lossy.qfi_lossy * (1 + 1e-6)


@pytest.mark.parametrize("gamma", [1e-3, 2e-3, 1e-2])
def test_joint_phase_rotation_leaves_fisher_unchanged(gamma):
    base = with_budget(SQUEEZED, 3.0, 1.0, 0.4, 0.3, 0.2)
    phi = 0.9
    rot = np.exp(1j * phi)
    turned = ProbeSpec.squeezed(base.alpha_pu * rot, base.alpha_pr * rot, base.zeta_pr * rot ** 2)
    a = evaluate(base, gamma, observables=("n_pr",))
    b = evaluate(turned, gamma, observables=("n_pr",))
    assert b.mom["n_pr"] == pytest.approx(a.mom["n_pr"], rel=1e-8)
    assert b.qfi == pytest.approx(a.qfi, rel=1e-8)


def test_relative_pump_probe_phase_is_irrelevant():
    # loss and the channel are covariant under separate phase shifts of each mode
    a = evaluate(with_budget(SQUEEZED, 3.0, 1.0, 0.4, 0.0, 0.2), 2e-3, observables=("n_pr",))
    b = evaluate(with_budget(SQUEEZED, 3.0, 1.0, 0.4, 1.3, 0.2), 2e-3, observables=("n_pr",))
    assert b.mom["n_pr"] == pytest.approx(a.mom["n_pr"], rel=1e-8)
    assert b.qfi == pytest.approx(a.qfi, rel=1e-8)


def test_result_serialization():
    res = evaluate(ProbeSpec.coherent(1.0, 0.5), 2e-3)
    d = res.as_dict()
    assert d["probe"]["family"] == "coherent-coherent" and d["dims"] == [res.dims.d_pu, res.dims.d_pr]
    point = {"gamma_srs": 1e-3, "h_srs": 0.0, "n_tot": 1.0, "eta_pu": 1.0, "eta_pr": 1.0}
    failed = failed_result(point, "budget")
    assert isinstance(failed, FisherResult)
    assert failed.as_dict()["flags"] == ["failed:budget"]


def test_negative_gain_rejected():
    with pytest.raises(ValueError):
        evaluate(ProbeSpec.coherent(1.0), -1e-3)
