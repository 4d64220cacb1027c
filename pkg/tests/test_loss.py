import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contentalign.loss import (
    LOG_TAU_MAX,
    LOG_TAU_MIN,
    EmptyDenominator,
    LossConfig,
    clamp_log_tau,
    contrastive_rows,
    coupled_loss,
    image_content_loss_row,
    similarity,
    text_content_loss_row,
)
from oracles import central_difference, coupled_loss_bruteforce, max_relative_error, softmax_xent_rows

E2 = np.eye(2)
AS_WRITTEN = LossConfig()
INCLUSIVE = LossConfig(include_positive=True)


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class TestHandValues:
    @pytest.mark.parametrize("row_fn", [image_content_loss_row, text_content_loss_row])
    def test_orthonormal_as_written(self, row_fn):
        assert row_fn(0, similarity(E2, E2), 1.0) == pytest.approx(-1.0, abs=1e-12)

    @pytest.mark.parametrize("row_fn", [image_content_loss_row, text_content_loss_row])
    def test_orthonormal_inclusive(self, row_fn):
        val = row_fn(0, similarity(E2, E2), 1.0, INCLUSIVE)
        assert val == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)
        assert round(val, 4) == 0.3133

    def test_uniform_row(self):
        ones = np.ones((3, 3)) / math.sqrt(3)
        assert image_content_loss_row(1, similarity(ones, ones), 1.0) == pytest.approx(math.log(2), abs=1e-12)

    def test_total_perfect_alignment(self):
        assert coupled_loss(E2, E2, E2, 0.0, 0.0).total == pytest.approx(-2.0, abs=1e-9)

    def test_total_c2i(self):
        assert coupled_loss(E2, E2, E2, 0.0, 0.0, LossConfig("C2I")).total == pytest.approx(-1.0, abs=1e-9)

    def test_total_inclusive(self):
        total = coupled_loss(E2, E2, E2, 0.0, 0.0, INCLUSIVE).total
        assert total == pytest.approx(2 * math.log(1 + math.exp(-1)), abs=1e-9)
        assert abs(total - 0.6266) < 1e-3

    def test_total_uniform(self):
        x = np.tile([[1.0, 0.0, 0.0]], (3, 1))
        res = coupled_loss(x, x, x, 0.0, 0.0)
        assert res.total == pytest.approx(3 * math.log(2), abs=1e-9)
        assert res.per_sample == pytest.approx(math.log(2), abs=1e-12)


class TestOracles:
    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(2, 6), st.integers(2, 5), st.floats(-4.0, 2.0), st.floats(-4.0, 2.0),
        st.sampled_from(["both", "C2I", "C2T"]), st.booleans(), st.integers(0, 2**32 - 1),
    )
    def test_matches_bruteforce(self, n, d, lt1, lt2, alignment, inclusive, seed):
        rng = np.random.default_rng(seed)
        i, t, c = (unit_rows(rng, n, d) for _ in range(3))
        got = coupled_loss(i, t, c, lt1, lt2, LossConfig(alignment, inclusive)).total
        want = coupled_loss_bruteforce(i, t, c, math.exp(lt1), math.exp(lt2), alignment, inclusive)
        assert got == pytest.approx(want, rel=1e-10, abs=1e-10)

    @pytest.mark.parametrize("n", [2, 3, 7])
    def test_inclusive_is_softmax_cross_entropy(self, n):
        rng = np.random.default_rng(n)
        a, c = unit_rows(rng, n, 4), unit_rows(rng, n, 4)
        sims = similarity(a, c)
        rows, _ = contrastive_rows(sims, 0.3, include_positive=True)
        np.testing.assert_allclose(rows, softmax_xent_rows(sims, 0.3), rtol=0, atol=1e-12)


class TestGradients:
    @pytest.mark.parametrize("alignment", ["both", "C2I", "C2T"])
    @pytest.mark.parametrize("inclusive", [False, True])
    @pytest.mark.parametrize("n,d", [(2, 3), (5, 8)])
    def test_central_differences(self, alignment, inclusive, n, d):
        rng = np.random.default_rng(n * 10 + d)
        cfg = LossConfig(alignment, inclusive)
        x = [unit_rows(rng, n, d) for _ in range(3)]
        taus = np.log(rng.uniform(0.2, 1.5, 2))
        res = coupled_loss(*x, *taus, cfg)
        for k, g in enumerate((res.grad_image, res.grad_text, res.grad_content)):
            def f(v, k=k):
                y = list(x)
                y[k] = v
                return coupled_loss(*y, *taus, cfg).total
            assert max_relative_error(g, central_difference(f, x[k])) < 1e-4
        num = central_difference(lambda t: coupled_loss(*x, t[0], t[1], cfg).total, taus)
        assert max_relative_error([res.grad_log_tau_ic, res.grad_log_tau_tc], num) < 1e-4

    def test_dropped_term_has_zero_gradient(self):
        rng = np.random.default_rng(0)
        x = [unit_rows(rng, 4, 3) for _ in range(3)]
        res = coupled_loss(*x, 0.0, 0.0, LossConfig("C2I"))
        assert not res.grad_text.any() and res.grad_log_tau_tc == 0.0


class TestProperties:
    def test_finite_at_temperature_floor(self):
        x = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
        for cfg in (AS_WRITTEN, INCLUSIVE):
            res = coupled_loss(x, x, x, LOG_TAU_MIN, LOG_TAU_MIN, cfg)
            assert np.isfinite(res.total)
            assert all(np.all(np.isfinite(g)) for g in (res.grad_image, res.grad_text, res.grad_content))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 7), st.integers(0, 2**32 - 1))
    def test_permutation_invariant(self, n, seed):
        rng = np.random.default_rng(seed)
        x = [unit_rows(rng, n, 4) for _ in range(3)]
        perm = rng.permutation(n)
        a = coupled_loss(*x, -1.0, -0.5).total
        b = coupled_loss(*(v[perm] for v in x), -1.0, -0.5).total
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("inclusive", [False, True])
    def test_alignment_terms_add_up(self, inclusive):
        rng = np.random.default_rng(5)
        x = [unit_rows(rng, 6, 4) for _ in range(3)]
        parts = [coupled_loss(*x, -1.0, -2.0, LossConfig(a, inclusive)).total for a in ("both", "C2I", "C2T")]
        assert parts[0] == pytest.approx(parts[1] + parts[2], rel=1e-12)

    def test_empty_denominator(self):
        one = np.array([[1.0, 0.0]])
        with pytest.raises(EmptyDenominator, match="empty denominator"):
            coupled_loss(one, one, one, 0.0, 0.0)
        assert coupled_loss(one, one, one, 0.0, 0.0, INCLUSIVE).total == pytest.approx(0.0, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            coupled_loss(np.eye(2), np.eye(3), np.eye(2), 0.0, 0.0)

    def test_clamp(self):
        assert clamp_log_tau(-50.0) == LOG_TAU_MIN and clamp_log_tau(50.0) == LOG_TAU_MAX
        assert math.exp(LOG_TAU_MIN) == pytest.approx(1e-3) and math.exp(LOG_TAU_MAX) == pytest.approx(10.0)

    def test_bad_alignment(self):
        with pytest.raises(ValueError):
            LossConfig("I2T")
