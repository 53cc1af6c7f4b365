import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lindtraj.dilation import build_blocks
from lindtraj.errors import InvalidEtaError, ModelBuildError, TooFewSitesError, TrotterUnavailableError
from lindtraj.linalg import is_hermitian
from lindtraj.model import (
    GOLDEN_OMEGA,
    SIGMA_MINUS,
    SIGMA_X,
    SIGMA_Z,
    SKIN_ALPHA,
    SKIN_BETA,
    DissipationChannel,
    ModelParams,
    OpenSystemModel,
    basis_state,
    bond_jump_operator,
    build_atom,
    build_localization,
    build_skin,
    build_xxz,
    effective_hamiltonian,
    named_state,
    site_op,
    trotter_layers,
)

from .oracles import bond_jump_expanded_ldl, hopping_field_hamiltonian, lowering, xxz_hamiltonian


class TestAtom:
    def test_operators(self):
        m = build_atom(1.0, 0.5, 0.25)
        np.testing.assert_array_equal(m.hamiltonian, SIGMA_X)
        (ch,) = m.channels
        np.testing.assert_array_equal(ch.jump_operator, [[0, 0], [1, 0]])
        assert (ch.rate, ch.eta) == (0.5, 0.25)
        assert m.n_sites == 1 and m.dim == 2

    def test_lowering_takes_excited_to_ground(self):
        np.testing.assert_array_equal(SIGMA_MINUS @ basis_state("e"), basis_state("g"))

    @pytest.mark.parametrize("eta", [-0.1, 1.5])
    def test_rejects_eta_outside_unit_interval(self, eta):
        with pytest.raises(InvalidEtaError):
            build_atom(1.0, 0.5, eta)


class TestChains:
    @pytest.mark.parametrize("n,J,Delta", [(2, 1.0, 2.0), (3, 1.0, 2.0), (4, 0.7, -0.3)])
    def test_xxz_matches_bitstring_oracle(self, n, J, Delta):
        h = build_xxz(ModelParams(J=J, Delta=Delta, L_sites=n)).hamiltonian
        assert np.abs(h - xxz_hamiltonian(n, J, Delta)).max() <= 1e-12

    def test_xxz_decay_on_every_site(self):
        m = build_xxz(ModelParams(gamma=0.5, L_sites=3))
        assert len(m.channels) == 3
        for l, ch in enumerate(m.channels, start=1):
            np.testing.assert_array_equal(ch.jump_operator, lowering(3, l))
            assert ch.rate == 0.5 and ch.eta == 0.0

    def test_localization_matches_bitstring_oracle(self):
        m = build_localization(ModelParams(J=1.0, V=2.0, L_sites=5))
        assert np.abs(m.hamiltonian - hopping_field_hamiltonian(5, 1.0, 2.0, GOLDEN_OMEGA)).max() <= 1e-12
        assert len(m.channels) == 4

    def test_skin_has_no_field_and_caption_phases(self):
        m = build_skin(ModelParams(J=1.0, V=5.0, gamma=2.0, alpha=SKIN_ALPHA, beta=SKIN_BETA, L_sites=4))
        assert np.abs(m.hamiltonian - hopping_field_hamiltonian(4, 1.0, 0.0, GOLDEN_OMEGA)).max() <= 1e-12
        assert SKIN_ALPHA == -math.pi / 2 and SKIN_BETA == math.pi / 2
        expected = bond_jump_operator(1, 4, -math.pi / 2, math.pi / 2)
        np.testing.assert_allclose(m.channels[0].jump_operator, expected, atol=0)

    @pytest.mark.parametrize("builder", [build_xxz, build_localization, build_skin])
    def test_rejects_single_site(self, builder):
        with pytest.raises(TooFewSitesError):
            builder(ModelParams(L_sites=1))

    @pytest.mark.parametrize("builder", [build_xxz, build_localization, build_skin])
    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_hamiltonians_hermitian(self, builder, n):
        m = builder(ModelParams(J=0.9, Delta=1.3, V=1.7, alpha=0.4, beta=2.1, L_sites=n))
        assert np.abs(m.hamiltonian - m.hamiltonian.conj().T).max() <= 1e-12

    def test_bond_terms_sum_to_hamiltonian(self):
        m = build_localization(ModelParams(J=1.0, V=2.0, L_sites=5))
        odd, even = trotter_layers(m)
        assert np.abs(odd + even - m.hamiltonian).max() <= 1e-12

    def test_custom_model_has_no_trotter_layers(self):
        m = OpenSystemModel(SIGMA_Z, (), 1)
        with pytest.raises(TrotterUnavailableError):
            trotter_layers(m)


class TestBondJump:
    @settings(max_examples=20, deadline=None)
    @given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
    def test_ldl_product_form_equals_expansion(self, alpha, beta):
        op = bond_jump_operator(2, 4, alpha, beta)
        assert np.abs(op.conj().T @ op - bond_jump_expanded_ldl(4, 2, alpha, beta)).max() <= 1e-12

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
    def test_no_jump_corner_entry(self, alpha, beta):
        # on |uu> the bond operator acts as (1 + e^{i(alpha+beta)}) / 2
        ch = DissipationChannel(bond_jump_operator(1, 2, alpha, beta), 1.0, 0.0)
        a = build_blocks(ch, 0.01).a
        expected = math.sqrt(1 - 0.01 * math.cos((alpha + beta) / 2) ** 2)
        assert abs(a[0, 0] - expected) <= 1e-12

    def test_phase_locked_corner_is_one(self):
        ch = DissipationChannel(bond_jump_operator(1, 2, 0.0, math.pi), 1.0, 0.0)
        assert abs(build_blocks(ch, 0.01).a[0, 0] - 1.0) <= 1e-12

    def test_conserves_excitation_number(self):
        n = 4
        total = sum(site_op(np.diag([1.0, 0.0]), l, n) for l in range(1, n + 1))
        op = bond_jump_operator(2, n, 0.3, -1.2)
        assert np.abs(total @ op - op @ total).max() <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.data())
def test_disjoint_site_operators_commute(n, data):
    a, b = data.draw(st.lists(st.integers(1, n), min_size=2, max_size=2, unique=True))
    x, z = site_op(SIGMA_X, a, n), site_op(SIGMA_Z, b, n)
    assert np.abs(x @ z - z @ x).max() <= 1e-12


def test_effective_hamiltonian():
    m = build_atom(1.0, 0.5)
    h_eff = effective_hamiltonian(m)
    np.testing.assert_allclose(h_eff, SIGMA_X - 0.25j * np.diag([1.0, 0.0]), atol=1e-15)
    assert not is_hermitian(h_eff)


class TestStates:
    def test_site_one_is_leftmost(self):
        psi = basis_state("udd")
        assert np.flatnonzero(psi).tolist() == [0b011]

    def test_named(self):
        np.testing.assert_array_equal(named_state("neel", 4), basis_state("udud"))
        np.testing.assert_array_equal(named_state("all_up", 3), basis_state("uuu"))
        np.testing.assert_array_equal(named_state("excited", 1), [1, 0])
        np.testing.assert_array_equal(named_state("basis:dud", 3), basis_state("dud"))

    def test_unknown_state(self):
        with pytest.raises(ValueError):
            named_state("plus", 2)


class TestValidation:
    def test_non_hermitian_hamiltonian(self):
        with pytest.raises(ModelBuildError):
            OpenSystemModel(np.array([[0, 1], [0, 0]]), (), 1)

    def test_channel_dimension_mismatch(self):
        with pytest.raises(ModelBuildError):
            OpenSystemModel(SIGMA_Z, (DissipationChannel(np.eye(4), 1.0),), 1)

    def test_negative_rate(self):
        with pytest.raises(ModelBuildError):
            DissipationChannel(SIGMA_MINUS, -1.0)

    def test_with_eta_replaces_every_channel(self):
        m = build_xxz(ModelParams(gamma=0.5, L_sites=3)).with_eta(0.3)
        assert m.etas.tolist() == [0.3, 0.3, 0.3]
