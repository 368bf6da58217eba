import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from emitterlab.errors import ConvolutionQuadratureFailure, FgrViolated, ShapeMismatch, ValidationError
from emitterlab.generator import BlockOperator, apply_generator, assemble_generator, gamma_matrix
from emitterlab.matter_model import CutoffProfile, build_model, default_model, two_level_model
from emitterlab.semigroup import (
    SemigroupEngine,
    block_recursion,
    decay_rate,
    decompose,
    evolve,
    markov_audit,
    markov_transition_probability,
    phi_component,
    transition_trajectory,
)

from conftest import degenerate_model, random_block


@pytest.fixture(scope="module")
def eng2():
    return SemigroupEngine(assemble_generator(two_level_model()))


@pytest.fixture(scope="module")
def eng3():
    return SemigroupEngine(assemble_generator(default_model()))


@pytest.fixture(scope="module")
def eng_deg():
    return SemigroupEngine(assemble_generator(degenerate_model()))


def _gamma2():
    return gamma_matrix(two_level_model(), 1)[0, 0]


class TestEvolve:
    def test_time_zero_is_identity(self, eng_deg, rng):
        x = random_block(rng, eng_deg.dims)
        assert (eng_deg.evolve(x, 0.0) - x).norm() < 1e-14

    @pytest.mark.parametrize("t", [0.1, 1.0, 7.0])
    def test_unit_invariant(self, eng_deg, t):
        ident = BlockOperator.identity(eng_deg.dims)
        assert (eng_deg.evolve(ident, t) - ident).norm() < 1e-12

    @pytest.mark.parametrize("t", [0.05, 0.3, 1.2])
    def test_two_level_exponential(self, eng2, t):
        gamma = _gamma2()
        exc = eng2.evolve(BlockOperator.level_projector(eng2.dims, 1), t)
        gnd = eng2.evolve(BlockOperator.level_projector(eng2.dims, 0), t)
        assert exc.blocks[1][0, 0] == pytest.approx(np.exp(-gamma * t), rel=1e-12)
        assert abs(exc.blocks[0][0, 0]) < 1e-15
        assert gnd.blocks[1][0, 0] == pytest.approx(1 - np.exp(-gamma * t), rel=1e-12)
        assert gnd.blocks[0][0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_semigroup_law(self, eng_deg, rng):
        x = random_block(rng, eng_deg.dims)
        a = eng_deg.evolve(eng_deg.evolve(x, 0.4), 0.7)
        b = eng_deg.evolve(x, 1.1)
        assert (a - b).norm() < 1e-12 * x.norm()

    def test_superoperator_matches_apply(self, eng_deg, rng):
        x = random_block(rng, eng_deg.dims)
        y = BlockOperator.from_vec(eng_deg.superop @ x.vec(), eng_deg.dims)
        assert (y - apply_generator(eng_deg.generator, x)).norm() < 1e-13

    def test_derivative_at_zero(self, eng3, rng):
        # forward difference of the propagator against the generator
        x = random_block(rng, eng3.dims)
        h = 1e-6
        fd = (eng3.evolve(x, h) - x) * (1 / h)
        lx = apply_generator(eng3.generator, x)
        assert (fd + lx).norm() < 1e-3 * max(1.0, lx.norm())

    def test_propagator_is_expm(self, eng3):
        np.testing.assert_allclose(eng3.propagator(0.8), scipy.linalg.expm(-0.8 * eng3.superop), atol=1e-13)

    def test_module_level_wrapper(self, eng3, rng):
        x = random_block(rng, eng3.dims)
        assert (evolve(eng3, x, 0.5) - eng3.evolve(x, 0.5)).norm() == 0

    def test_errors(self, eng3):
        with pytest.raises(ShapeMismatch):
            eng3.evolve(BlockOperator.identity((2, 1)), 1.0)
        with pytest.raises(ValidationError):
            eng3.evolve(BlockOperator.identity(eng3.dims), -1.0)


class TestBlockRecursion:
    @pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 4.0])
    def test_matches_exponential(self, eng3, rng, t):
        x = random_block(rng, eng3.dims)
        diff = (block_recursion(eng3, x, t) - eng3.evolve(x, t)).norm()
        assert diff < 1e-10 * max(1.0, x.norm())

    @pytest.mark.parametrize("t", [0.5, 1.0])
    def test_degenerate_blocks(self, eng_deg, rng, t):
        x = random_block(rng, eng_deg.dims)
        assert (block_recursion(eng_deg, x, t) - eng_deg.evolve(x, t)).norm() < 1e-10 * max(1.0, x.norm())

    def test_phi_sum(self, eng_deg, rng):
        x = random_block(rng, eng_deg.dims)
        ref = eng_deg.evolve(x, 0.8)
        for j in range(len(eng_deg.dims)):
            total = sum(phi_component(eng_deg, x, j, m, 0.8) for m in range(j + 1))
            np.testing.assert_allclose(total, ref.blocks[j], atol=1e-10)

    def test_phi_upper_zero(self, eng3):
        np.testing.assert_array_equal(phi_component(eng3, BlockOperator.identity(eng3.dims), 0, 2, 1.0), 0)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 3.0))
    def test_phi_positive(self, seed, t):
        eng = _deg_engine()
        x = random_block(np.random.default_rng(seed), eng.dims, psd=True)
        for j in range(len(eng.dims)):
            for m in range(j + 1):
                p = phi_component(eng, x, j, m, t)
                assert np.linalg.eigvalsh(0.5 * (p + p.conj().T))[0] >= -1e-10 * x.norm()

    def test_certificate_failure(self, eng3, rng):
        x = random_block(rng, eng3.dims)
        with pytest.raises(ConvolutionQuadratureFailure):
            block_recursion(eng3, x, 30.0, nodes_per_panel=1, tol=1e-15)


_ENG = {}


def _deg_engine():
    if "e" not in _ENG:
        _ENG["e"] = SemigroupEngine(assemble_generator(degenerate_model()))
    return _ENG["e"]


class TestAudit:
    def test_default_model(self, eng3):
        a = markov_audit(eng3, n_samples=30)
        assert a.contraction_excess <= 1e-12
        assert a.positivity_deficit >= -1e-12
        assert a.identity_error <= 1e-12
        assert set(a.as_dict()) == {"contraction_excess", "positivity_deficit", "identity_error", "n_samples", "t_grid"}

    def test_degenerate_model(self, eng_deg):
        a = markov_audit(eng_deg, n_samples=20, seed=5)
        assert a.contraction_excess <= 1e-12 and a.positivity_deficit >= -1e-12

    def test_bad_sample_count(self, eng3):
        with pytest.raises(ValidationError):
            markov_audit(eng3, n_samples=0)


class TestDecay:
    def test_decompose(self):
        x = BlockOperator([np.array([[3.0]]), np.array([[1.0]])])
        inv, rest = decompose(x)
        assert inv.blocks[1][0, 0] == 3.0
        assert rest.blocks[0][0, 0] == 0 and rest.blocks[1][0, 0] == -2.0

    def test_decompose_identity(self, three_level):
        inv, rest = decompose(BlockOperator.identity(three_level.level_dims))
        assert rest.norm() == 0

    def test_two_level_rate(self, eng2):
        fit = decay_rate(eng2, BlockOperator.level_projector(eng2.dims, 1))
        assert fit.delta == pytest.approx(_gamma2(), rel=0.02)
        assert not fit.below_bound

    @pytest.mark.parametrize("level", [1, 2])
    def test_three_level_bound(self, eng3, level):
        fit = decay_rate(eng3, BlockOperator.level_projector(eng3.dims, level))
        assert fit.delta >= 0.9 * fit.gamma

    def test_zero_skipped(self, eng3):
        fit = decay_rate(eng3, BlockOperator.zeros(eng3.dims))
        assert fit.skipped

    def test_invariant_component_rejected(self, eng3):
        with pytest.raises(ValidationError):
            decay_rate(eng3, BlockOperator.identity(eng3.dims))

    def test_fgr_violated(self):
        eng = SemigroupEngine(assemble_generator(build_model([(0, 1), (1, 1)], {}, CutoffProfile())))
        with pytest.raises(FgrViolated):
            decay_rate(eng, BlockOperator.level_projector(eng.dims, 1))


class TestTransitions:
    def test_two_level_closed_form(self, eng2):
        gamma, g, t = _gamma2(), 0.2, 3.0
        assert markov_transition_probability(eng2, 1, 0, t, g) == pytest.approx(1 - np.exp(-gamma * t * g * g), rel=1e-12)
        assert markov_transition_probability(eng2, 1, 1, t, g) == pytest.approx(np.exp(-gamma * t * g * g), rel=1e-12)
        assert markov_transition_probability(eng2, 0, 1, t, g) == pytest.approx(0, abs=1e-15)

    def test_rows_sum_to_one(self, eng_deg):
        n = eng_deg.model.dim
        pairs = [(j, m) for j in range(n) for m in range(n)]
        p = transition_trajectory(eng_deg, pairs, [0.0, 0.5, 3.0], 0.7).reshape(3, n, n)
        np.testing.assert_allclose(p.sum(axis=2), 1.0, atol=1e-12)
        assert p.min() >= -1e-12

    def test_time_zero(self, eng3):
        p = transition_trajectory(eng3, [(1, 1), (1, 0)], [0.0], 0.5)
        np.testing.assert_allclose(p, [[1.0, 0.0]], atol=1e-15)

    def test_long_time_ground(self, eng3):
        assert markov_transition_probability(eng3, 2, 0, 200.0, 1.0) == pytest.approx(1.0, abs=1e-10)

    def test_index_errors(self, eng3):
        with pytest.raises(ShapeMismatch):
            markov_transition_probability(eng3, 5, 0, 1.0, 1.0)
