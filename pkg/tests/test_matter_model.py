import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emitterlab.errors import (
    DegenerateGround,
    ModelIOError,
    NonHermitianCouplings,
    TableDomainError,
    UnsortedEnergies,
    ValidationError,
    ZeroMomentum,
)
from emitterlab.matter_model import (
    CouplingTable,
    CutoffProfile,
    build_model,
    default_model,
    form_factor,
    form_factor_general,
    form_factor_matrices,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
    transverse_project,
    two_level_model,
)

from conftest import degenerate_model

vectors = st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3
)


class TestCutoff:
    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_vanishing_order(self, p):
        c = CutoffProfile(order=p, scale=1.5)
        assert c(0.0) == 0.0
        r = np.array([1e-3, 2e-3])
        # phi ~ r^p near the origin
        assert np.log(c(r[1]) / c(r[0])) / np.log(2) == pytest.approx(p, abs=1e-4)

    def test_nonnegative_and_fast_decay(self):
        c = CutoffProfile(order=2, scale=2.0)
        r = np.linspace(0, 40, 400)
        assert np.all(c(r) >= 0)
        assert c(40.0) * 40.0**20 < 1e-100

    def test_support_radius(self):
        c = CutoffProfile()
        r = c.support_radius(1e-16)
        assert c(r) ** 2 < 1e-16
        assert c(r - 0.2) ** 2 >= 1e-16

    @pytest.mark.parametrize("kw", [{"order": 0}, {"scale": -1.0}, {"amplitude": 0.0}, {"order": 1.5}])
    def test_rejects_bad_parameters(self, kw):
        with pytest.raises(ValidationError):
            CutoffProfile(**kw)


class TestBuildModel:
    def test_minimal_valid(self):
        m = build_model([(0, 1), (1, 1)], {(0, 1): (0, 0, 0.8)}, CutoffProfile(1, 2.0))
        assert m.dim == 2 and m.n_levels == 2
        np.testing.assert_allclose(m.coupling(1, 0)[0, 0], [0, 0, 0.8])

    def test_non_hermitian_names_pair(self):
        with pytest.raises(NonHermitianCouplings) as exc:
            build_model(
                [(0, 1), (1, 1)],
                {(0, 1): (0, 0, 1.0), (1, 0): (0, 0, 0.5)},
                CutoffProfile(),
            )
        assert exc.value.pair == (0, 1)
        assert exc.value.deviation == pytest.approx(0.5)

    def test_consistent_both_directions_accepted(self):
        m = build_model([(0, 1), (1, 1)], {(0, 1): (0, 1j, 0), (1, 0): (0, -1j, 0)}, CutoffProfile())
        assert m.dipole[1, 0, 1] == 1j

    def test_degenerate_ground(self):
        with pytest.raises(DegenerateGround):
            build_model([(0, 2), (1, 1)], {}, CutoffProfile())

    def test_unsorted(self):
        with pytest.raises(UnsortedEnergies):
            build_model([(0, 1), (1, 1), (1, 1)], {}, CutoffProfile())

    @pytest.mark.parametrize(
        "levels, couplings",
        [
            ([(0, 1)], {}),
            ([(0, 1), (float("inf"), 1)], {}),
            ([(0, 1), (1, 2)], {(0, 1): (0, 0, 1)}),
            ([(0, 1), (1, 1)], {(1, 1): (0, 0, 1)}),
        ],
    )
    def test_invalid_inputs(self, levels, couplings):
        with pytest.raises(ValidationError):
            build_model(levels, couplings, CutoffProfile())

    def test_dipole_hermitian(self):
        m = degenerate_model()
        np.testing.assert_allclose(m.dipole, np.conj(np.swapaxes(m.dipole, 1, 2)), atol=0)

    def test_default_configuration(self):
        m = default_model()
        np.testing.assert_array_equal(m.level_energies, [0.0, 1.0, 1.5])
        np.testing.assert_allclose(m.coupling(0, 2)[0, 0], [0.5, 0, 0])
        assert (m.cutoff.order, m.cutoff.scale) == (1, 2.0)


class TestTransverse:
    @pytest.mark.parametrize(
        "k, v, expected",
        [
            ((0, 0, 2), (0, 0, 1), (0, 0, 0)),
            ((1, 0, 0), (0, 0, 1), (0, 0, 1)),
            ((1, 1, 0), (1, 0, 0), (0.5, -0.5, 0)),
        ],
    )
    def test_examples(self, k, v, expected):
        np.testing.assert_allclose(transverse_project(k, v), expected, atol=1e-15)

    def test_zero_momentum(self):
        with pytest.raises(ZeroMomentum):
            transverse_project((0, 0, 0), (1, 0, 0))

    @given(vectors, vectors)
    def test_orthogonal_and_idempotent(self, k, v):
        p = transverse_project(k, v)
        assert abs(np.dot(k, p)) <= 1e-12 * np.linalg.norm(k) * max(1.0, np.linalg.norm(v))
        np.testing.assert_allclose(transverse_project(k, p), p, atol=1e-12)


class TestFormFactor:
    def test_parallel_dipole_vanishes(self):
        m = two_level_model(dipole=(0, 0, 1))
        np.testing.assert_allclose(form_factor(m, (0, 0, 0.7)).block(0, 1), 0, atol=1e-16)

    @pytest.mark.parametrize("r", [0.3, 1.0, 2.5])
    def test_perpendicular_dipole(self, r):
        m = two_level_model(dipole=(0, 0, 1), order=1, scale=1.0)
        expected = np.sqrt(r) * np.exp(-r * r) * np.array([0, 0, 1.0])
        np.testing.assert_allclose(form_factor(m, (r, 0, 0)).block(0, 1)[0, 0], expected, rtol=1e-14)

    def test_infrared_decay(self):
        m = two_level_model(dipole=(1, 0, 0), order=1)
        r = np.array([1e-4, 4e-4])
        norms = [np.linalg.norm(form_factor(m, (0, 0, ri)).matrix) for ri in r]
        assert np.log(norms[1] / norms[0]) / np.log(4) == pytest.approx(0.5, abs=1e-3)

    def test_zero_momentum(self, two_level):
        with pytest.raises(ZeroMomentum):
            form_factor(two_level, (0, 0, 0))

    @settings(max_examples=50, deadline=None)
    @given(vectors)
    def test_transverse_and_hermitian(self, k):
        m = degenerate_model()
        e = form_factor(m, k).matrix
        assert np.max(np.abs(np.einsum("c,cij->ij", k, e))) < 1e-13
        np.testing.assert_allclose(e, np.conj(np.swapaxes(e, 1, 2)), atol=1e-15)
        bound = m.cutoff(np.linalg.norm(k)) / np.sqrt(np.linalg.norm(k)) * np.max(np.abs(m.dipole))
        for blk in form_factor(m, k).blocks.values():
            assert np.max(np.linalg.norm(blk, axis=-1)) <= np.sqrt(3) * bound + 1e-14

    def test_weighted_norm_integral_finite(self, three_level):
        # int |k|^-1 ||E(k)||^2 dk = int r phi(r)^2 dr * int ||P(w) D||^2 dsigma, convergent
        from emitterlab.quadrature import radial_integral, radial_rule_for

        c = three_level.cutoff
        val = radial_integral(lambda r: r * c(r) ** 2, radial_rule_for(c))
        assert np.isfinite(val) and val > 0


class TestGeneralFormFactor:
    def test_constant_table_reduces_to_dipole(self, three_level):
        table = CouplingTable.constant(three_level, np.linspace(0.1, 5, 6))
        for k in [(0.3, 0.4, 1.0), (-1.0, 2.0, 0.5)]:
            np.testing.assert_allclose(
                form_factor_general(three_level, k, table).matrix, form_factor(three_level, k).matrix, atol=1e-14
            )

    def test_zero_table(self, three_level):
        table = CouplingTable.from_function(
            lambda k: np.zeros((3, 3, 3)), [0.1, 3.0], np.linspace(0, np.pi, 3), np.linspace(0, 2 * np.pi, 5)
        )
        np.testing.assert_array_equal(form_factor_general(three_level, (1, 0, 0), table).matrix, 0)

    def test_gaussian_damped_table(self):
        m = two_level_model(dipole=(0, 0, 1))
        table = CouplingTable.from_function(
            lambda k: m.dipole * np.exp(-(k @ k)), [0.5, 1.0, 1.5], np.linspace(0, np.pi, 5), np.linspace(0, 2 * np.pi, 9)
        )
        got = form_factor_general(m, (1, 0, 0), table).matrix
        np.testing.assert_allclose(got, np.exp(-1) * form_factor(m, (1, 0, 0)).matrix, atol=1e-15)

    def test_out_of_range(self, three_level):
        table = CouplingTable.constant(three_level, [0.5, 2.0])
        with pytest.raises(TableDomainError):
            form_factor_general(three_level, (3, 0, 0), table)

    def test_transverse(self, three_level):
        rng = np.random.default_rng(0)
        vals = rng.standard_normal((3, 3, 5, 3, 3, 3))
        from emitterlab.matter_model import CouplingTable as CT

        table = CT(np.array([0.5, 1.0, 2.0]), np.linspace(0, np.pi, 3), np.linspace(0, 2 * np.pi, 5), vals)
        k = np.array([0.4, -0.6, 0.5])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            e = form_factor_general(three_level, k, table).matrix
        assert np.max(np.abs(np.einsum("c,cij->ij", k, e))) < 1e-13

    def test_non_hermitian_table_warns(self, three_level):
        rng = np.random.default_rng(1)
        vals = rng.standard_normal((2, 3, 5, 3, 3, 3))
        table = CouplingTable(np.array([0.5, 2.0]), np.linspace(0, np.pi, 3), np.linspace(0, 2 * np.pi, 5), vals)
        with pytest.warns(UserWarning, match="violates"):
            form_factor_general(three_level, (1, 0, 0), table)


class TestModelFiles:
    def test_roundtrip(self, tmp_path):
        m = degenerate_model()
        path = tmp_path / "model.json"
        save_model(m, path)
        back = load_model(path)
        np.testing.assert_allclose(back.dipole, m.dipole)
        assert back.level_dims == m.level_dims
        doc = json.loads(path.read_text())
        assert all(c["from"] < c["to"] for c in doc["couplings"])

    def test_inconsistent_reverse_pair(self):
        doc = model_to_dict(default_model())
        entry = dict(doc["couplings"][0])
        entry["from"], entry["to"] = entry["to"], entry["from"]
        entry["matrix"] = [[[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]]]
        doc["couplings"].append(entry)
        with pytest.raises(NonHermitianCouplings):
            model_from_dict(doc)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelIOError):
            load_model(tmp_path / "nope.json")

    def test_malformed(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ValidationError):
            load_model(p)
        p.write_text(json.dumps({"couplings": []}))
        with pytest.raises(ValidationError):
            load_model(p)
