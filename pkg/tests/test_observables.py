import numpy as np
import pytest
from hypothesis import given, strategies as st

from spindtc.evolve import (
    ContractError,
    FloquetProtocol,
    depolarize_satellites,
    evolve_stroboscopic,
    floquet_operator,
    floquet_pulses,
    product_state,
)
from spindtc.observables import (
    StabilityCounter,
    floquet_spectrum,
    pairing_defect,
    record_series,
    return_probability,
    satellite_average,
    stability_count,
    staggered_magnetization,
    trajectory,
)
from spindtc.spinops import SystemSpec

from conftest import random_state, random_unitary


def test_staggered_all_up():
    psi = product_state("uuu")
    for site in range(3):
        assert staggered_magnetization(psi, site, 0) == 0.5


def test_staggered_mixed_satellite_zero():
    rho = depolarize_satellites(product_state("udu"), 1.0)
    assert staggered_magnetization(rho, 1, 3) == pytest.approx(0)
    assert staggered_magnetization(rho, 0, 3) == pytest.approx(0.5)


def test_staggered_basis_enumeration(rng):
    psi = random_state(4, rng)
    p = np.abs(psi) ** 2
    ref0 = abs(0.5 * (p[0] + p[1]) - 0.5 * (p[2] + p[3]))
    ref1 = abs(0.5 * (p[0] + p[2]) - 0.5 * (p[1] + p[3]))
    assert staggered_magnetization(psi, 0, 5) == pytest.approx(ref0, abs=1e-12)
    assert staggered_magnetization(psi, 1, 2) == pytest.approx(ref1, abs=1e-12)


def test_staggered_bad_site():
    with pytest.raises(ValueError):
        staggered_magnetization(product_state("uu"), 2, 0)


@given(seed=st.integers(0, 2**32 - 1), phase=st.floats(0, 2 * np.pi))
def test_staggered_phase_invariant(seed, phase):
    psi = random_state(8, np.random.default_rng(seed))
    for site in range(3):
        a = staggered_magnetization(psi, site, 1)
        b = staggered_magnetization(np.exp(1j * phase) * psi, site, 1)
        assert a == pytest.approx(b, abs=1e-14)


def test_satellite_average():
    assert satellite_average([0.5] * 4) == 0.5
    assert satellite_average([0.5, 0.3, 0.1, 0.5, 0.1]) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        satellite_average([])


def test_return_probability_initial(rng):
    psi = random_state(8, rng)
    assert return_probability(psi, psi) == pytest.approx(1, abs=1e-15)
    rho = np.outer(psi, psi.conj())
    assert return_probability(rho, rho) == pytest.approx(1, abs=1e-12)


def test_trajectory_matches_record_series(rng):
    u = random_unitary(8, rng)
    psi = random_state(8, rng)
    a = trajectory(psi, u, 7)
    b = record_series(psi, evolve_stroboscopic(psi, u, 7))
    for name in ("central", "satellites", "return_prob"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=1e-13)
    rho = depolarize_satellites(product_state("udu"), 0.4)
    a = trajectory(rho, u, 5)
    b = record_series(rho, evolve_stroboscopic(rho, u, 5))
    np.testing.assert_allclose(a.central, b.central, atol=1e-13)
    np.testing.assert_allclose(a.return_prob, b.return_prob, atol=1e-13)
    assert list(a.n) == [1, 2, 3, 4, 5]


def test_trajectory_bounds(rng):
    u = random_unitary(16, rng)
    s = trajectory(random_state(16, rng), u, 20)
    assert np.all(s.central <= 0.5 + 1e-9) and np.all(s.satellites <= 0.5 + 1e-9)
    assert np.all(s.return_prob >= -1e-9) and np.all(s.return_prob <= 1 + 1e-9)


def _ideal(cap):
    return [1.0 if k % 2 == 0 else 0.0 for k in range(1, cap + 1)]


@pytest.mark.parametrize("cap", [10, 11, 100])
def test_stability_ideal_hits_cap(cap):
    r = stability_count(_ideal(cap), cap)
    assert r.n_stable == cap - cap % 2
    assert r.thresholds == (0.95, 0.05)


def test_stability_immediate_failure():
    p = _ideal(10)
    p[1] = 0.90
    assert stability_count(p, 10).n_stable == 0


def test_stability_rule_literal_and_strict():
    p = _ideal(20)
    p[6] = 0.5  # P(7T) fails
    # literal rule: n=8 leaves P(7T) unconstrained
    assert stability_count(p, 20).n_stable == 8
    assert stability_count(p, 20, strict=True).n_stable == 6
    q = _ideal(20)
    q[9] = 0.9  # P(10T) fails
    assert stability_count(q, 20).n_stable == 8


def test_stability_brute_force(rng):
    def brute(p, cap, strict):
        best = 0
        for n in range(0, cap + 1, 2):
            evens = all(p[2 * k - 1] >= 0.95 for k in range(1, n // 2 + 1))
            odd_limit = n // 2 if strict else n // 2 - 1
            odds = all(p[2 * l] <= 0.05 for l in range(0, odd_limit))
            if evens and odds:
                best = n
        return best

    for _ in range(300):
        cap = int(rng.integers(1, 30))
        p = np.where(rng.random(cap) < 0.93, _ideal(cap), rng.random(cap))
        for strict in (False, True):
            assert stability_count(p, cap, strict).n_stable == brute(list(p), cap, strict)


def test_stability_short_series():
    with pytest.raises(ValueError):
        stability_count(_ideal(10), 100)
    p = _ideal(10)
    p[1] = 0.5
    assert stability_count(p, 100).n_stable == 0


@given(
    seed=st.integers(0, 2**32 - 1),
    k=st.integers(0, 19),
    drop=st.floats(0, 1),
)
def test_stability_monotone_under_worsening(seed, k, drop):
    rng = np.random.default_rng(seed)
    p = np.where(rng.random(40) < 0.97, _ideal(40), rng.random(40))
    worse = p.copy()
    idx = 2 * k + 1  # an even period
    worse[idx] = min(worse[idx], drop)
    assert stability_count(worse, 40).n_stable <= stability_count(p, 40).n_stable


def test_stability_counter_streaming():
    c = StabilityCounter(6)
    fed = 0
    for p in _ideal(100):
        fed += 1
        if not c.push(p):
            break
    assert fed == 6 and c.result().n_stable == 6


def test_spectrum_single_spin_perfect_pulse():
    single = np.array([[0, -1j], [-1j, 0]])  # exp(-i pi S_x)
    s = floquet_spectrum(single)
    np.testing.assert_allclose(sorted(s.eigenvalues, key=np.imag), [-1j, 1j], atol=1e-14)
    assert s.pairing_defect == pytest.approx(0, abs=1e-14)


def test_spectrum_uncoupled_pulses_pair_up():
    spec = SystemSpec(3, j_xy_mean=0, j_z_mean=0)
    assert floquet_spectrum(floquet_pulses(spec)).pairing_defect == pytest.approx(0, abs=1e-12)


def test_spectrum_identity_defect():
    assert floquet_spectrum(np.eye(4)).pairing_defect == pytest.approx(2)


def test_spectrum_rejects_non_unitary():
    with pytest.raises(ContractError):
        floquet_spectrum(2 * np.eye(2))


def test_pairing_odd_count():
    defect, pairs = pairing_defect(np.array([1, -1, 1j]))
    assert defect == 2.0
    assert len(pairs) == 1


@given(seed=st.integers(0, 2**32 - 1))
def test_spectrum_conjugation_invariant(seed):
    rng = np.random.default_rng(seed)
    spec = SystemSpec(3, b_central=300.0, e_central=0.05, e_satellite=0.05)
    u = floquet_operator(spec, spec.uniform(), FloquetProtocol())
    v = random_unitary(8, rng)
    a = np.sort_complex(floquet_spectrum(u).eigenvalues)
    b = floquet_spectrum(v @ u @ v.conj().T).eigenvalues
    # match each eigenvalue to its nearest counterpart
    assert max(np.min(np.abs(b - x)) for x in a) <= 1e-9
    assert np.all(np.abs(np.abs(a) - 1) <= 1e-9)
