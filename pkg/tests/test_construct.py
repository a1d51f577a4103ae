import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from factorgate.certificates import FactorRep
from factorgate.construct import (
    ConstructionError,
    GlueError,
    align_orthogonal,
    build_by_induction,
    classify_rank_one_subsets,
    diagonal_forcing,
    glue,
    normalize_loading,
)
from factorgate.matcore import gram
from factorgate.witness import (
    GenSpec,
    RankOneSubset,
    TwoBlock,
    ZeroRows,
    perturb,
    random_member,
    tightness_example,
)

STRUCTURED = np.array([[1.0, 0], [2, 0], [3, 0], [1, 1], [0, 1]])


class TestDiagonalForcing:
    def test_all_ones(self):
        J = np.ones((5, 5))
        assert diagonal_forcing(J, J, 1, 0) == pytest.approx(1.0)

    def test_structured_loading(self):
        g = np.array([[1.0, 0], [2, 0], [3, 0], [1, 1], [2, -1]])
        psi = gram(g)
        other = g @ ortho_group.rvs(2, random_state=1)
        assert diagonal_forcing(psi, gram(other), 2, 0) == pytest.approx(1.0, abs=1e-12)

    def test_diagonal_not_forced(self):
        psi = np.diag([1.0, 1.0, 0, 0, 0])
        assert diagonal_forcing(psi, None, 2, 4) is None

    def test_rank_precondition(self):
        with pytest.raises(ValueError):
            diagonal_forcing(np.eye(5), None, 1, 0)

    def test_mismatched_diagonal_detected(self):
        psi = gram(np.array([[1.0, 0], [2, 0], [3, 0], [1, 1], [2, -1]]))
        phi = psi.copy()
        phi[0, 0] += 0.5
        with pytest.raises(ValueError):
            diagonal_forcing(psi, phi, 2, 0)

    def test_unforced_rank_one(self):
        # every 2x2 minor of a rank-one matrix vanishes
        assert diagonal_forcing(np.ones((5, 5)), None, 2, 0) is None

    def test_off_diagonal_mismatch(self):
        J = np.ones((5, 5))
        phi = J.copy()
        phi[0, 1] = phi[1, 0] = 0.5
        with pytest.raises(ValueError):
            diagonal_forcing(J, phi, 2, 0)


class TestAlign:
    def test_identity(self, rng):
        g = rng.normal(size=(5, 2))
        assert np.allclose(align_orthogonal(g, g), np.eye(2), atol=1e-12)

    def test_random_rotation(self, rng):
        g = rng.normal(size=(6, 2))
        Q0 = ortho_group.rvs(2, random_state=rng)
        Q = align_orthogonal(g, g @ Q0.T)
        assert np.max(np.abs(g - g @ Q0.T @ Q)) <= 1e-9

    def test_rank_one_column_swap(self):
        g = np.array([[1.0, 0], [2, 0]])
        G = np.array([[0.0, 1], [0, 2]])
        Q = align_orthogonal(g, G)
        assert np.max(np.abs(g - G @ Q)) <= 1e-15
        assert np.allclose(Q.T @ Q, np.eye(2))

    def test_zero_loading(self):
        Q = align_orthogonal(np.zeros((3, 2)), np.zeros((3, 2)))
        assert np.allclose(Q.T @ Q, np.eye(2))

    def test_gram_mismatch(self, rng):
        g = rng.normal(size=(4, 2))
        with pytest.raises(ValueError):
            align_orthogonal(g, 1.1 * g)

    @given(st.integers(0, 10**6), st.integers(0, 2))
    def test_property(self, seed, deficiency):
        rng = np.random.default_rng(seed)
        m = 2 if deficiency < 2 else 3
        rank = m - deficiency if deficiency < 2 else 1
        g = rng.normal(size=(6, rank)) @ rng.normal(size=(rank, m))
        G = g @ ortho_group.rvs(m, random_state=rng)
        Q = align_orthogonal(g, G)
        assert np.max(np.abs(Q.T @ Q - np.eye(m))) <= 1e-10
        assert np.max(np.abs(g - G @ Q)) <= 1e-8


class TestGlue:
    def test_forced_one_factor(self):
        sigma = np.eye(5) + np.ones((5, 5))
        top = FactorRep(np.ones(4), np.ones(4))
        rep = glue(sigma, top, top, [1], [2])
        assert np.allclose(rep.gamma, 1) and np.allclose(rep.delta, 1)

    def test_restricted_global_rep(self):
        sigma, rep = random_member(GenSpec(7, 2), 5)
        glued = glue(sigma, rep.restrict(range(6)), rep.restrict(range(1, 7)), [1, 2], [3, 4])
        assert glued.max_error(sigma) <= 1e-9

    def test_sign_flip_breaks_overlap(self):
        sigma, rep = random_member(GenSpec(7, 2), 5)
        bottom = rep.restrict(range(1, 7))
        flipped = FactorRep(bottom.delta, -bottom.gamma)
        with pytest.raises(GlueError, match="overlap"):
            glue(sigma, rep.restrict(range(6)), flipped, [1, 2], [3, 4])

    def test_singular_minor(self):
        sigma = np.eye(5) + np.ones((5, 5))
        top = FactorRep(np.ones(4), np.ones(4))
        with pytest.raises(GlueError):
            glue(sigma, top, top, [1], [1])

    def test_corner_mismatch(self):
        sigma = np.eye(5) + np.ones((5, 5))
        sigma[0, 4] = sigma[4, 0] = 1.5
        top = FactorRep(np.ones(4), np.ones(4))
        with pytest.raises(GlueError, match="corner"):
            glue(sigma, top, top, [1], [2])

    def test_needs_room(self):
        rep = FactorRep(np.ones(5), np.ones((5, 2)))
        with pytest.raises(ValueError):
            glue(np.eye(6), rep, rep, [1, 2], [3, 4])


class TestClassify:
    def test_structured(self):
        cls = classify_rank_one_subsets(STRUCTURED)
        assert (cls.k, cls.A) == (3, (0, 1, 2))

    def test_generic(self, rng):
        assert classify_rank_one_subsets(rng.normal(size=(5, 2))).k == 1

    def test_rank_one(self):
        g = np.outer([1.0, 2, 3, 4, 5], [1.0, -1])
        assert classify_rank_one_subsets(g).k == 5

    def test_zero_rows_excluded(self):
        g = STRUCTURED.copy()
        g[0] = 0
        cls = classify_rank_one_subsets(g)
        assert cls.zero_rows == (0,) and cls.A == (1, 2)

    @given(st.integers(0, 10**6))
    @settings(max_examples=40)
    def test_maximal(self, seed):
        _, rep = random_member(GenSpec(5, 2, pattern=RankOneSubset((1, 3))), seed)
        cls = classify_rank_one_subsets(rep.gamma)
        assert cls.k == 2 and cls.A == (1, 3)


class TestNormalize:
    def test_proportional_rows(self):
        g = np.array([[1.0, 1], [2, 2], [3, 3], [1, 0], [0, 1]])
        out, Q = normalize_loading(g, [0, 1, 2])
        assert np.max(np.abs(out[:3, 1])) <= 1e-12
        assert np.allclose(gram(out), gram(g))
        assert np.allclose(out, g @ Q)
        assert out[0, 0] > 0

    def test_already_normal(self):
        out, Q = normalize_loading(STRUCTURED, [0, 1, 2])
        assert np.allclose(np.abs(Q), np.eye(2))
        assert np.allclose(out, STRUCTURED)

    def test_single_row(self):
        g = np.array([[3.0, 4], [1, 0], [0, 1]])
        out, _ = normalize_loading(g, [0])
        assert out[0].tolist() == pytest.approx([5.0, 0.0])

    def test_rank_precondition(self):
        with pytest.raises(ValueError):
            normalize_loading(np.eye(2), [0, 1])


class TestBuild:
    def test_one_factor_member(self):
        sigma, _ = random_member(GenSpec(6, 1), 0)
        built = build_by_induction(sigma, 1)
        assert built.max_error <= 1e-9
        assert built.rep.delta.min() > 0
        assert set(built.paths()) <= {"base", "sign", "pair", "zero_row"}

    def test_two_factor_member(self):
        sigma, _ = random_member(GenSpec(8, 2), 0)
        built = build_by_induction(sigma, 2)
        assert built.max_error <= 1e-6

    def test_structured_path(self):
        spec = GenSpec(7, 2, pattern=RankOneSubset((1, 2, 3)))
        for seed in range(3):
            sigma, _ = random_member(spec, seed)
            built = build_by_induction(sigma, 2)
            assert "structured_pinned" in built.paths()
            assert built.max_error <= 1e-9

    def test_rescale_path(self):
        sigma, _ = random_member(GenSpec(7, 2, pattern=RankOneSubset((1, 2, 3, 5))), 0)
        built = build_by_induction(sigma, 2)
        assert "structured_rescale_top" in built.paths()

    @pytest.mark.parametrize("m", [1, 2])
    def test_zero_row_shortcut(self, m):
        sigma, _ = random_member(GenSpec(8, m, pattern=ZeroRows((2,))), 1)
        built = build_by_induction(sigma, m)
        assert "zero_row" in built.paths()
        assert not built.rep.gamma[2].any()

    def test_two_block(self):
        sigma, _ = random_member(GenSpec(8, 2, pattern=TwoBlock()), 2)
        assert build_by_induction(sigma, 2).max_error <= 1e-9

    def test_one_factor_inside_two(self):
        sigma, _ = random_member(GenSpec(7, 1), 3)
        built = build_by_induction(sigma, 2)
        assert built.rep.m == 2 and built.max_error <= 1e-9

    def test_precondition_fails(self):
        with pytest.raises(ConstructionError) as exc:
            build_by_induction(tightness_example(2), 2)
        assert exc.value.step == "precondition"

    def test_non_member_rejected(self):
        sigma, _ = random_member(GenSpec(6, 1), 0)
        with pytest.raises(ConstructionError):
            build_by_induction(perturb(sigma, 0.3, 1), 1)

    def test_size_checks(self):
        with pytest.raises(ValueError):
            build_by_induction(np.eye(5), 2)
        with pytest.raises(ValueError):
            build_by_induction(np.eye(5), 0)

    def test_deterministic(self):
        sigma, _ = random_member(GenSpec(8, 2), 6)
        a = build_by_induction(sigma, 2, seed=2).to_dict()
        b = build_by_induction(sigma, 2, seed=2).to_dict()
        assert a == b

    @given(st.integers(0, 10**6), st.sampled_from([(6, 1), (8, 1), (7, 2), (8, 2)]))
    @settings(max_examples=20)
    def test_permutation_robust(self, seed, dims):
        p, m = dims
        sigma, _ = random_member(GenSpec(p, m), seed)
        perm = np.random.default_rng(seed).permutation(p)
        relabeled = sigma[np.ix_(perm, perm)]
        built = build_by_induction(relabeled, m, check=False)
        assert built.rep.max_error(relabeled) <= 1e-9
