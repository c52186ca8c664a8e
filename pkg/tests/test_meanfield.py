import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from metapopsim.config import fig2_config
from metapopsim.errors import MaxIterExceeded, NotPhaseStructured, SupSurvivalOne
from metapopsim.landscape import BetaJumpChain, FiniteChain
from metapopsim.meanfield import (OccupancyField, TruncationTooShort, H_operator, equilibrium,
                                  iterate_recursion, moment_sequence, psi_of_field,
                                  q_phi_infinity, q_phi_infinity_mc, recursion_step,
                                  scalar_fixed_point, support_of, survival_moments)
from metapopsim.patch import (DispersalKernel, PatchTraits, SpatialDomain, build_grid, hanski,
                              phase_exponential, single_node_grid)

from conftest import random_chain, random_traits

KERNEL = DispersalKernel(1.0)
DOMAIN = SpatialDomain.interval(0, 10)
GRID = build_grid(DOMAIN, 500)
GRID_SMALL = build_grid(DOMAIN, 60)
ONE_STATE = FiniteChain.from_matrix([[1.0]])
NODE = single_node_grid()


def _one_state_traits(s=0.5, a=10.0):
    return PatchTraits.tabular([s], a, phase_exponential())


# -- connectivity profile -------------------------------------------------------

def test_psi_zero_field():
    field = OccupancyField.constant(ONE_STATE, GRID, 0.0)
    assert psi_of_field(field, _one_state_traits(), KERNEL).psi.max() == 0.0


def test_psi_closed_form_at_center():
    field = OccupancyField.constant(ONE_STATE, GRID, 1.0)
    psi = psi_of_field(field, _one_state_traits(), KERNEL).psi
    # int_0^10 exp(-|z-u|) du = 2 - e^-z - e^-(10-z)
    exact = 2 - np.exp(-GRID.nodes) - np.exp(-(10 - GRID.nodes))
    assert np.abs(psi - exact).max() < 1e-4
    assert abs(np.interp(5.0, GRID.nodes, psi) - 2 * (1 - np.exp(-5))) < 1e-4


def test_psi_single_node():
    field = OccupancyField.constant(ONE_STATE, NODE, 1.0)
    assert psi_of_field(field, _one_state_traits(), KERNEL).psi[0] == pytest.approx(10.0)


# -- recursion -----------------------------------------------------------------

def test_recursion_zero_is_fixed():
    field = OccupancyField.constant(ONE_STATE, GRID_SMALL, 0.0)
    assert recursion_step(field, _one_state_traits(), KERNEL, ONE_STATE).q.max() == 0.0


def test_recursion_full_survival_is_fixed():
    field = OccupancyField.constant(ONE_STATE, GRID_SMALL, 1.0)
    q = recursion_step(field, _one_state_traits(s=1.0), KERNEL, ONE_STATE).q
    np.testing.assert_allclose(q, 1.0)


@pytest.mark.parametrize("u", [0.0, 0.2, 0.7, 1.0])
def test_recursion_scalar_reduction(u):
    field = OccupancyField.constant(ONE_STATE, NODE, u)
    q = recursion_step(field, _one_state_traits(), KERNEL, ONE_STATE).q[0, 0]
    psi = 10.0 * u
    assert q == pytest.approx(0.5 * u + 0.5 * (1 - np.exp(-psi)) * (1 - u), abs=1e-15)


def test_recursion_uses_dual_kernel():
    # on a non-reversible chain, P* (not P) must average the update
    P = np.array([[0.1, 0.9, 0.0], [0.0, 0.2, 0.8], [0.7, 0.0, 0.3]])
    chain = FiniteChain.from_matrix(P)
    traits = PatchTraits.tabular([0.2, 0.5, 0.8], [1.0, 2.0, 3.0])
    field = OccupancyField(np.arange(3), chain.pi, NODE, np.array([[0.1], [0.5], [0.9]]))
    psi = (chain.pi * np.array([1.0, 2.0, 3.0])) @ field.q[:, 0]
    s = np.array([0.2, 0.5, 0.8])
    g = s * field.q[:, 0] + s * (1 - np.exp(-psi)) * (1 - field.q[:, 0])
    expected = (chain.pi[None, :] * P.T / chain.pi[:, None]) @ g
    np.testing.assert_allclose(recursion_step(field, traits, KERNEL, chain).q[:, 0], expected, atol=1e-15)


def test_iterate_zero_stays_zero():
    res = iterate_recursion(OccupancyField.constant(ONE_STATE, GRID_SMALL), 5, _one_state_traits(),
                            KERNEL, ONE_STATE)
    assert res.final.q.max() == 0.0 and (res.deltas == 0).all()


def test_iterate_subcritical_decays_monotonically():
    # scalar map q -> 0.5 q + 0.5 (1 - e^{-0.5 q})(1 - q) contracts to 0
    traits = _one_state_traits(a=0.5)
    res = iterate_recursion(OccupancyField.constant(ONE_STATE, NODE, 0.5), 400, traits, KERNEL,
                            ONE_STATE, keep_history=True)
    values = np.array([h.q[0, 0] for h in res.history])
    oracle = [0.5]
    for _ in range(400):
        u = oracle[-1]
        oracle.append(0.5 * u + 0.5 * (1 - np.exp(-0.5 * u)) * (1 - u))
    np.testing.assert_allclose(values, oracle, atol=1e-15)
    assert (np.diff(values[1:]) <= 0).all()
    assert values[-1] < 1e-6


def test_iterate_supercritical_two_starts_agree():
    chain = FiniteChain.from_matrix([[0.8, 0.2], [0.3, 0.7]])
    traits = PatchTraits.tabular([0.6, 0.3], [8.0, 4.0])
    lo = iterate_recursion(OccupancyField.constant(chain, GRID_SMALL, 0.1), 600, traits, KERNEL, chain)
    hi = iterate_recursion(OccupancyField.constant(chain, GRID_SMALL, 0.9), 600, traits, KERNEL, chain)
    assert np.abs(lo.final.q - hi.final.q).max() < 1e-6
    assert lo.final.q.min() > 0.01


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_recursion_is_monotone(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    chain = random_chain(rng, m)
    traits = random_traits(rng, m, s_max=1.0)
    grid = build_grid(DOMAIN, 12)
    lo = rng.random((m, 12))
    hi = lo + (1 - lo) * rng.random((m, 12))
    a = OccupancyField(np.arange(m), chain.pi, grid, lo)
    b = a.with_q(hi)
    for _ in range(50):
        a = recursion_step(a, traits, KERNEL, chain)
        b = recursion_step(b, traits, KERNEL, chain)
        assert (a.q <= b.q + 1e-15).all()
        assert a.q.min() >= 0 and b.q.max() <= 1 + 1e-15


# -- inner fixed point ---------------------------------------------------------

@pytest.mark.parametrize("method", ["inner", "series", "solve"])
def test_q_phi_zero_connectivity(method):
    chain = FiniteChain.from_matrix([[0.8, 0.2], [0.3, 0.7]])
    traits = PatchTraits.tabular([0.6, 0.3], [8.0, 4.0])
    assert q_phi_infinity(np.zeros(len(GRID_SMALL)), chain, traits, GRID_SMALL, method).q.max() == 0.0


@pytest.mark.parametrize("method", ["inner", "series", "solve"])
@pytest.mark.parametrize("c", [0.1, 1.0, 4.0])
def test_q_phi_scalar_closed_form(method, c):
    fb = 1 - np.exp(-c)
    q = q_phi_infinity(c, ONE_STATE, _one_state_traits(), NODE, method).q[0, 0]
    assert q == pytest.approx(fb / (1 + fb), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_q_phi_methods_agree_and_bounded(seed):
    rng = np.random.default_rng(seed)
    chain = random_chain(rng, 3)
    traits = random_traits(rng, 3, per_state_rate=True)
    grid = build_grid(DOMAIN, 8)
    phi = rng.uniform(0, 5, size=8)
    q = {m: q_phi_infinity(phi, chain, traits, grid, m).q for m in ("inner", "series", "solve")}
    assert np.abs(q["inner"] - q["series"]).max() < 1e-8
    assert np.abs(q["solve"] - q["series"]).max() < 1e-10
    s_max = traits.s(np.arange(3)).max()
    assert q["solve"].max() < s_max


def test_q_phi_is_fixed_point_of_frozen_recursion(rng):
    chain = random_chain(rng, 4)
    traits = random_traits(rng, 4)
    phi = rng.uniform(0, 3, size=len(GRID_SMALL))
    q = q_phi_infinity(phi, chain, traits, GRID_SMALL, "solve").q
    f = traits.f(phi[None, :], np.arange(4)[:, None])
    s = traits.s(np.arange(4))[:, None]
    np.testing.assert_allclose(chain.P_star @ (s * q + f * (1 - q)), q, atol=1e-13)


def test_q_phi_errors():
    with pytest.raises(SupSurvivalOne):
        q_phi_infinity(1.0, ONE_STATE, _one_state_traits(s=1.0), NODE)
    with pytest.raises(NotPhaseStructured):
        q_phi_infinity(1.0, ONE_STATE, PatchTraits.tabular([0.5], 1.0, hanski()), NODE)
    with pytest.raises(TruncationTooShort):
        q_phi_infinity(1.0, ONE_STATE, _one_state_traits(s=0.999), NODE, "series", M=100)
    with pytest.raises(MaxIterExceeded):
        q_phi_infinity(1.0, ONE_STATE, _one_state_traits(s=0.999), NODE, "inner", max_iter=5)


@pytest.mark.parametrize("panel, slack", [(0, 0.0), (1, 0.02)])
def test_q_phi_sampled_chain_mc_vs_surrogate(panel, slack):
    # slack covers the histogram bin width of the surrogate
    chain = fig2_config(panel).chain()
    traits = PatchTraits.survival_state(10.0)
    sup = support_of(chain)
    exact = q_phi_infinity(1.5, chain, traits, NODE, "solve").q[:, 0]
    for th in (0.35, 0.75, 0.925):
        j = int(np.argmin(np.abs(sup.theta - th)))
        mc = q_phi_infinity_mc(1.5, chain, traits, NODE, sup.theta[j], n_paths=2000, M=300, seed=2)
        assert abs(mc.q[0, 0] - exact[j]) <= 3 * mc.stderr[0, 0] + slack


# -- H operator ------------------------------------------------------------------

def test_H_zero():
    chain = FiniteChain.from_matrix([[0.8, 0.2], [0.3, 0.7]])
    traits = PatchTraits.tabular([0.6, 0.3], [8.0, 4.0])
    assert H_operator(np.zeros(len(GRID_SMALL)), chain, traits, KERNEL, GRID_SMALL).max() == 0.0


def test_H_monotone_and_bounded(rng):
    chain = random_chain(rng, 3)
    traits = random_traits(rng, 3)
    a_max = traits.a(np.arange(3)).max()
    for _ in range(10):
        lo = rng.uniform(0, 4, size=len(GRID_SMALL))
        hi = lo + rng.uniform(0, 2, size=len(GRID_SMALL))
        h_lo = H_operator(lo, chain, traits, KERNEL, GRID_SMALL)
        h_hi = H_operator(hi, chain, traits, KERNEL, GRID_SMALL)
        assert (h_lo <= h_hi + 1e-14).all()
        assert h_hi.max() <= a_max
        # concavity along the ray: H(t phi) >= t H(phi) for t in (0, 1)
        assert (H_operator(0.5 * hi, chain, traits, KERNEL, GRID_SMALL) >= 0.5 * h_hi - 1e-14).all()


# -- moments ----------------------------------------------------------------------

def test_moments_constant_survival():
    mom = moment_sequence(ONE_STATE, _one_state_traits(0.3, 2.0), M=30)
    m = np.arange(1, 31)
    np.testing.assert_allclose(mom.weighted, 2.0 * 0.3**m, rtol=1e-13)
    np.testing.assert_allclose(mom.tail, 0.3**m, rtol=1e-13)


def test_moments_static_chain():
    chain = FiniteChain(np.eye(2), np.array([0.5, 0.5]))
    mom = moment_sequence(chain, PatchTraits.tabular([0.2, 0.8], 1.0), M=20)
    m = np.arange(1, 21)
    np.testing.assert_allclose(mom.weighted, 0.5 * (0.2**m + 0.8**m), rtol=1e-13)


def test_moments_non_increasing_with_unit_weight(rng):
    for _ in range(10):
        chain = random_chain(rng, 5)
        traits = PatchTraits.tabular(rng.random(5), 1.0)
        assert (np.diff(moment_sequence(chain, traits, M=50).weighted) <= 1e-15).all()


def test_moments_match_path_enumeration(rng):
    # brute force over all state sequences of length m + 1
    import itertools
    chain = random_chain(rng, 3)
    traits = random_traits(rng, 3)
    s, a = traits.tabulate(np.arange(3))
    mom = survival_moments(chain, traits, M=4)
    for m in range(1, 5):
        total = 0.0
        for seq in itertools.product(range(3), repeat=m + 1):
            p = chain.pi[seq[0]] * np.prod([chain.P[seq[k], seq[k + 1]] for k in range(m)])
            total += p * np.prod(s[list(seq[:m])]) * a[seq[m]]
        assert mom.weighted[m - 1] == pytest.approx(total, rel=1e-12)


def test_moments_sampled_chain_have_errors():
    chain = BetaJumpChain.beta(1, 1, 1, 20)
    mom = survival_moments(chain, PatchTraits.survival_state(10.0), M=50, n_paths=500, seed=3)
    assert not mom.exact
    assert (mom.weighted_se > 0).all()
    sur = survival_moments(support_of(chain).chain, PatchTraits.tabular(support_of(chain).theta, 10.0), M=50)
    assert np.all(np.abs(mom.weighted - sur.weighted) < 4 * mom.weighted_se + 0.05 * sur.weighted)


# -- equilibrium -------------------------------------------------------------------

def _scalar_oracle(a):
    # q = fbar(a q) / (1 + fbar(a q)) for s = 0.5 on one node
    h = lambda q: (1 - np.exp(-a * q)) / (2 - np.exp(-a * q)) - q
    return brentq(h, 1e-6, 1.0, xtol=1e-15)


@pytest.mark.parametrize("a", [1.5, 3.0, 10.0])
def test_equilibrium_matches_scalar_oracle(a):
    eq = equilibrium(ONE_STATE, _one_state_traits(a=a), KERNEL, NODE, tol=1e-13)
    assert not eq.extinct
    assert eq.occupancy[0] == pytest.approx(_scalar_oracle(a), abs=1e-6)


def test_scalar_fixed_point_helper():
    g = lambda q: (1 - np.exp(-3 * q)) / (2 - np.exp(-3 * q))
    assert scalar_fixed_point(g) == pytest.approx(_scalar_oracle(3.0), abs=1e-12)
    assert scalar_fixed_point(lambda q: 0.5 * q) == 0.0


def test_equilibrium_subcritical_is_extinct():
    eq = equilibrium(ONE_STATE, _one_state_traits(a=0.8), KERNEL, NODE)
    assert eq.extinct and eq.occupancy.max() == 0.0


def test_equilibrium_two_starts_agree():
    chain = FiniteChain.from_matrix([[0.8, 0.2], [0.3, 0.7]])
    traits = PatchTraits.tabular([0.6, 0.3], [8.0, 4.0])
    a = equilibrium(chain, traits, KERNEL, GRID_SMALL, tol=1e-12, start=0.05)
    b = equilibrium(chain, traits, KERNEL, GRID_SMALL, tol=1e-12, start=20.0)
    assert np.abs(a.occupancy - b.occupancy).max() < 1e-8


def test_equilibrium_is_fixed_point_of_recursion():
    chain = FiniteChain.from_matrix([[0.8, 0.2], [0.3, 0.7]])
    traits = PatchTraits.tabular([0.6, 0.3], [8.0, 4.0])
    eq = equilibrium(chain, traits, KERNEL, GRID_SMALL, tol=1e-13)
    nxt = recursion_step(eq.q_star, traits, KERNEL, chain)
    assert np.abs(nxt.q - eq.q_star.q).max() < 1e-10


def test_moment_route_matches_field_route(rng):
    chain = random_chain(rng, 4)
    traits = random_traits(rng, 4, s_max=0.8, a_max=10)
    f = equilibrium(chain, traits, KERNEL, GRID_SMALL, route="field", tol=1e-12)
    m = equilibrium(chain, traits, KERNEL, GRID_SMALL, route="moments", tol=1e-12, M=400)
    np.testing.assert_allclose(m.occupancy, f.occupancy, atol=1e-9)


def test_equilibrium_depends_only_on_moments():
    # a chain and its dual share survival moments when a is constant
    P = np.array([[0.1, 0.9, 0.0], [0.0, 0.2, 0.8], [0.7, 0.0, 0.3]])
    chain = FiniteChain.from_matrix(P)
    traits = PatchTraits.tabular([0.3, 0.6, 0.85], 6.0)
    a = equilibrium(chain, traits, KERNEL, GRID_SMALL, tol=1e-12)
    b = equilibrium(chain.dual(), traits, KERNEL, GRID_SMALL, tol=1e-12)
    assert np.abs(a.occupancy - b.occupancy).max() < 1e-8


def test_equilibrium_rejects_non_phase():
    with pytest.raises(NotPhaseStructured):
        equilibrium(ONE_STATE, PatchTraits.tabular([0.5], 1.0, hanski()), KERNEL, NODE)


@pytest.mark.parametrize("panel", [0, 1])
def test_fig2_limit_is_a_hump(panel):
    cfg = fig2_config(panel)
    eq = equilibrium(cfg.chain(), cfg.patch_traits(), KERNEL, GRID)
    occ = eq.occupancy
    center = np.interp(5.0, GRID.nodes, occ)
    assert center > occ[0] and center > occ[-1]
    np.testing.assert_allclose(occ, occ[::-1], atol=1e-12)
    half = occ[: len(occ) // 2]
    assert (np.diff(half) > 0).all()
    assert (occ > 0).all() and (occ < 1).all()
