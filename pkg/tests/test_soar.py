import numpy as np
import pytest
import scipy.linalg

import soarmor as sm
from conftest import dense_system
from soarmor.errors import BasisFull, SingularOperator, SoarmorError
from soarmor.soar import (MODE_REAL_SPLIT, SCHEDULE_SEQUENTIAL,
                          SUBSPACE_OUTPUT, ExpansionPlan, extend, extend_to,
                          init_state, raw_krylov_blocks)


class TestExpansionPlan:
    def test_duplicate_points_rejected(self):
        with pytest.raises(ValueError):
            ExpansionPlan((20.0, 20.0))

    def test_nonpositive_points_rejected(self):
        with pytest.raises(ValueError):
            ExpansionPlan((0.0,))

    def test_sequential_needs_budgets(self):
        with pytest.raises(ValueError):
            ExpansionPlan((2.0, 18.0), schedule=SCHEDULE_SEQUENTIAL)

    def test_budget_length_must_match(self):
        with pytest.raises(ValueError):
            ExpansionPlan((2.0, 18.0), schedule=SCHEDULE_SEQUENTIAL, budgets=(4,))

    @pytest.mark.parametrize("field,value", [("schedule", "zigzag"),
                                             ("basis_mode", "quaternion"),
                                             ("subspace", "sideways")])
    def test_unknown_enums_rejected(self, field, value):
        with pytest.raises(ValueError):
            ExpansionPlan((20.0,), **{field: value})


class TestInitState:
    def test_holds_factorization_and_start(self, model4):
        state = init_state(model4, ExpansionPlan((20.0,)))
        assert len(state.points) == 1
        assert np.linalg.norm(state.points[0].chain.start) > 0
        assert state.ncols == 0

    def test_singular_shifted_stiffness(self):
        # M=1, D=0, K=k0^2 makes the shifted stiffness (i k0)^2 + k0^2 = 0
        k0 = 3.0
        sys = dense_system(1.0, 0.0, k0 * k0)
        with pytest.raises(SingularOperator) as err:
            init_state(sys, ExpansionPlan((k0,)))
        assert "3" in str(err.value)


class TestExtend:
    def test_first_column_is_normalized_start(self, model4):
        state = extend(init_state(model4, ExpansionPlan((20.0,))), 1)
        p0 = raw_krylov_blocks(model4, 20.0j, 1)[0][:, 0]
        expected = p0 / np.linalg.norm(p0)
        got = state.basis.matrix[:, 0]
        phase = np.vdot(expected, got)
        np.testing.assert_allclose(got, expected * phase / abs(phase), atol=1e-12)

    def test_interleaved_counts_40_columns(self, model16):
        plan = ExpansionPlan((20.0, 60.0, 100.0))
        state = extend(init_state(model16, plan), 40)
        counts = state.basis.column_counts()
        assert counts == {20.0: 14, 60.0: 13, 100.0: 13}

    def test_interleaved_counts_differ_by_at_most_one(self, model16):
        plan = ExpansionPlan((20.0, 60.0, 100.0))
        state = extend(init_state(model16, plan), 10)
        counts = list(state.basis.column_counts().values())
        assert max(counts) - min(counts) <= 1

    def test_sequential_budgets_and_tags(self, model16):
        plan = ExpansionPlan((2.0, 18.0), schedule=SCHEDULE_SEQUENTIAL, budgets=(5, 7))
        state = extend(init_state(model16, plan), 12)
        tags = [tag.k0 for tag in state.basis.tags]
        assert tags[:5] == [2.0] * 5
        assert tags[5:] == [18.0] * 7
        with pytest.raises(SoarmorError):
            extend(state, 1)

    def test_orthonormal_after_every_extension(self, model8):
        state = init_state(model8, ExpansionPlan((20.0, 60.0)))
        for _ in range(20):
            extend(state, 1)
            assert state.basis.orthonormality_residual() <= 1e-10

    def test_counter_bookkeeping(self, model8):
        state = extend(init_state(model8, ExpansionPlan((20.0, 60.0))), 13)
        total_candidates = sum(p.candidates for p in state.points)
        assert total_candidates == state.ncols + state.deflated

    def test_basis_full(self):
        sys = dense_system(np.eye(2), np.zeros((2, 2)), np.diag([2.0, 3.0]),
                           B=[1.0, 1.0], C=[1.0, 1.0])
        state = extend_to(init_state(sys, ExpansionPlan((1.0,))), 2)
        assert state.ncols == 2
        with pytest.raises(BasisFull):
            extend(state, 1)

    def test_determinism(self, model8):
        plan = ExpansionPlan((20.0, 60.0, 100.0))
        a = extend(init_state(model8, plan), 15)
        b = extend(init_state(model8, plan), 15)
        assert a.basis.tags == b.basis.tags
        assert a.basis.content_hash() == b.basis.content_hash()
        assert np.array_equal(a.basis.matrix, b.basis.matrix)


class TestSpanOracle:
    def test_raw_block_definitions(self, model4):
        blocks = raw_krylov_blocks(model4, 20.0j, 2)
        from soarmor.linalg import factorize, shifted_damping, shifted_stiffness
        fact = factorize(shifted_stiffness(model4, 20.0j))
        p0 = -fact.solve(model4.B.toarray().astype(complex))
        np.testing.assert_allclose(blocks[0], p0, atol=1e-14)
        p1 = -fact.solve(shifted_damping(model4, 20.0j) @ p0)
        np.testing.assert_allclose(blocks[1], p1, atol=1e-14)

    def test_count_limit(self, model4):
        with pytest.raises(ValueError):
            raw_krylov_blocks(model4, 20.0j, 11)
        with pytest.raises(ValueError):
            raw_krylov_blocks(model4, 20.0j, 0)

    @pytest.mark.parametrize("r", [4, 7, 10])
    def test_principal_angles_single_point(self, model8, r):
        state = extend_to(init_state(model8, ExpansionPlan((20.0,))), r)
        raw = raw_krylov_blocks(model8, 20.0j, r)
        raw_mat = np.column_stack([b[:, 0] / np.linalg.norm(b[:, 0]) for b in raw])
        angles = scipy.linalg.subspace_angles(state.basis.matrix, raw_mat)
        assert angles.max() <= 1e-8


class TestRealSplit:
    def test_real_basis_and_tags(self, model8):
        plan = ExpansionPlan((20.0,), basis_mode=MODE_REAL_SPLIT)
        state = extend(init_state(model8, plan), 4)
        V = state.basis.matrix
        assert not np.iscomplexobj(V)
        assert state.basis.orthonormality_residual() <= 1e-10
        parts = [tag.part for tag in state.basis.tags]
        assert set(parts) <= {"re", "im"}
        assert parts[0] == "re"

    def test_each_direction_offers_two_candidates(self, model8):
        plan = ExpansionPlan((20.0,), basis_mode=MODE_REAL_SPLIT)
        state = extend(init_state(model8, plan), 3)
        assert state.points[0].candidates == 6
        assert state.ncols + state.deflated == 6

    def test_projection_works_with_real_basis(self, model8):
        plan = ExpansionPlan((20.0,), basis_mode=MODE_REAL_SPLIT)
        state = extend(init_state(model8, plan), 5)
        reduced = sm.project(model8, state.basis)
        assert not np.iscomplexobj(reduced.M)
        sample = sm.eval_rom(reduced, 20.0)
        assert np.isfinite(sample.value).all()


class TestOutputSubspace:
    def test_output_mode_spans_transposed_krylov(self, model4):
        plan = ExpansionPlan((20.0,), subspace=SUBSPACE_OUTPUT)
        state = extend(init_state(model4, plan), model4.p_out)
        assert state.ncols >= 1
        assert state.basis.orthonormality_residual() <= 1e-10
        raw = raw_krylov_blocks(model4.transposed(), 20.0j, 1)[0]
        raw_cols = raw / np.linalg.norm(raw, axis=0)
        angles = scipy.linalg.subspace_angles(state.basis.matrix, raw_cols)
        assert angles.max() <= 1e-8

    def test_output_mode_rom_evaluates(self, model4):
        plan = ExpansionPlan((20.0,), subspace=SUBSPACE_OUTPUT)
        state = extend_to(init_state(model4, plan), 10)
        reduced = sm.project(model4, state.basis)
        assert np.isfinite(sm.eval_rom(reduced, 25.0).value).all()
