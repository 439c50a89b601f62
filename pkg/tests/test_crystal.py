import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from siapm.constants import CA40, ELEMENTARY_CHARGE, VACUUM_PERMITTIVITY
from siapm.crystal import (
    DomainError, NoSolutionError, TrapContext, UnsupportedChainError, chain_positions,
    differential_phase, equilibrium_separation, length_scale, position_phases, resolve_pair,
    scale_factor, separation_under_scaling, solve_scaling_for_phase,
)

W2 = 2 * math.pi * 2e6
CTX = TrapContext(W2)


def _force_balance(z, ell):
    # dimensionless: z_i - sum_j sign(z_i - z_j)/(z_i - z_j)^2 = 0
    z = np.asarray(z) / ell
    f = []
    for i in range(len(z)):
        s = sum(np.sign(z[i] - z[j]) / (z[i] - z[j]) ** 2 for j in range(len(z)) if j != i)
        f.append(z[i] - s)
    return np.array(f)


def test_d0_matches_hand_arithmetic():
    # independent arithmetic: d0^3 = e^2 / (2 pi eps0 m w^2)
    d3 = ELEMENTARY_CHARGE**2 / (2 * math.pi * VACUUM_PERMITTIVITY * CA40.mass * W2**2)
    assert equilibrium_separation(CA40, W2) == pytest.approx(d3 ** (1 / 3), rel=1e-14)
    assert equilibrium_separation(CA40, W2) == pytest.approx(3.5312e-6, abs=5e-10)


def test_d0_at_2p05_mhz():
    assert equilibrium_separation(CA40, 2 * math.pi * 2.05e6) == pytest.approx(3.4736e-6, abs=5e-10)


def test_d0_is_twice_two_ion_position():
    g = chain_positions(2, CA40, W2)
    assert g.spacings[0] == pytest.approx(equilibrium_separation(CA40, W2), rel=1e-13)


@pytest.mark.parametrize("n", [2, 3])
def test_chain_positions_balance_forces(n):
    ell = length_scale(CA40, W2)
    g = chain_positions(n, CA40, W2)
    assert np.max(np.abs(_force_balance(g.positions, ell))) < 1e-12


def test_three_ion_spacings():
    g = chain_positions(3, CA40, W2)
    a, b, edge = g.spacings
    assert a == pytest.approx(b, rel=1e-14)
    assert edge == pytest.approx(2 * a, rel=1e-14)
    assert a == pytest.approx(3.0192e-6, abs=5e-10)


def test_unsupported_chain():
    with pytest.raises(UnsupportedChainError):
        chain_positions(4)


def test_bad_frequency():
    with pytest.raises(DomainError):
        equilibrium_separation(CA40, 0.0)
    with pytest.raises(DomainError):
        TrapContext(-1.0)


def test_scale_factor_domain():
    assert scale_factor(0.0) == 1.0
    with pytest.raises(DomainError):
        scale_factor(-1.0)


@given(st.floats(-0.9, 5.0))
def test_scaling_is_power_law(x):
    # lengths follow omega**(-2/3)
    d = separation_under_scaling(1.0, x)
    assert d == pytest.approx((1 + x) ** (-2 / 3), rel=1e-13)


@given(st.floats(-0.5, 2.0), st.floats(-0.5, 2.0))
def test_position_phases_are_additive(x1, x2):
    a = np.array(position_phases(CTX, 3, 0.0, x1))
    b = np.array(position_phases(CTX, 3, x1, x2))
    c = np.array(position_phases(CTX, 3, 0.0, x2))
    assert np.allclose(a + b, c, atol=1e-9)


def test_k_z():
    assert CTX.k_z == pytest.approx(2 * math.pi / 729e-9 / math.sqrt(2), rel=1e-14)
    assert CTX.k_z == pytest.approx(6.0945e6, rel=1e-4)


@pytest.mark.parametrize("pair,n", [((0, 1), 2), ((0, 1), 3), ((0, 2), 3)])
@pytest.mark.parametrize("branch", ["increase", "decrease"])
def test_solution_reproduces_phase(pair, n, branch):
    target = -math.pi if branch == "increase" else math.pi
    x = solve_scaling_for_phase(CTX, pair, n, target, branch)
    assert differential_phase(CTX, pair, x, n) == pytest.approx(target, abs=1e-9)
    assert (x > 0) == (branch == "increase")


def test_branch_inference_and_wrapping():
    x_dec = solve_scaling_for_phase(CTX, (0, 1), 2, math.pi)
    assert x_dec < 0
    # pi asked on the increase branch is realised as -pi
    x_inc = solve_scaling_for_phase(CTX, (0, 1), 2, math.pi, "increase")
    assert differential_phase(CTX, (0, 1), x_inc) == pytest.approx(-math.pi, abs=1e-9)


def test_zero_phase_is_no_change():
    assert solve_scaling_for_phase(CTX, (0, 1), 2, 0.0) == 0.0


def test_unreachable_increase_reports_limit():
    big = 50.0
    with pytest.raises(NoSolutionError) as info:
        solve_scaling_for_phase(CTX, (0, 1), 2, -big, "increase")
    assert info.value.max_phase == pytest.approx(CTX.k_z * equilibrium_separation(CA40, W2))


def test_reversed_pair_mirrors_sign():
    x = solve_scaling_for_phase(CTX, (1, 0), 2, math.pi, "increase")
    assert differential_phase(CTX, (1, 0), x) == pytest.approx(math.pi, abs=1e-9)


def test_resolve_pair():
    assert resolve_pair("edge", 3) == (0, 2)
    with pytest.raises(DomainError):
        resolve_pair((0, 2), 2)
    with pytest.raises(ValueError):
        resolve_pair("middle", 3)


@settings(max_examples=40)
@given(st.floats(0.05, 6.0))
def test_decrease_branch_always_solvable(phase):
    x = solve_scaling_for_phase(CTX, (0, 1), 2, phase, "decrease")
    assert -1 < x < 0
    assert differential_phase(CTX, (0, 1), x) == pytest.approx(phase, abs=1e-9)
