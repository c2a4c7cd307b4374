import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowscreen.models import NULL, CondLabels, VelocityField
from flowscreen.sampling import (GuidedField, SolverSpec, StiffnessError, counterfactual, generate,
                                 guided_velocity, individual_treatment_effect, solve_ode, write_stats_csv)


class Affine(VelocityField):
    """v(x, t, c) = a_c * x + b_c with the null condition mapped to its own (a, b)."""

    kind = "affine"

    def __init__(self, a_cond=0.5, b_cond=1.0, a_null=-0.2, b_null=0.0, dim=2):
        super().__init__(0)
        self.a = {True: a_null, False: a_cond}
        self.b = {True: b_null, False: b_cond}
        self.sample_shape = (dim,)
        self.log = []

    def evaluate(self, x, t, c, train=False, rng=None):
        from flowscreen.tensor import Tensor

        null = bool(np.all(c.perturbation == NULL))
        self.log.append(null)
        return Tensor(self.a[null] * x.data + self.b[null])


def test_exponential_growth():
    x, stats = solve_ode(lambda x, t: x, np.ones(1), SolverSpec(rtol=1e-5, atol=1e-5))
    assert abs(x[0] - math.e) < 1e-5
    assert stats.nfe == 2 + 6 * (stats.accepted + stats.rejected)


def test_zero_field_is_cheap():
    x0 = np.array([1.0, -2.0])
    x, stats = solve_ode(lambda x, t: np.zeros_like(x), x0)
    np.testing.assert_array_equal(x, x0)
    assert stats.accepted == 1 and stats.rejected == 0


def test_constant_field_is_exact():
    x, stats = solve_ode(lambda x, t: np.full_like(x, 0.7), np.zeros(3))
    np.testing.assert_allclose(x, 0.7, rtol=1e-14)
    assert stats.rejected == 0


def test_reverse_direction():
    x, _ = solve_ode(lambda x, t: x, np.full(1, math.e), SolverSpec(direction="reverse"))
    assert abs(x[0] - 1.0) < 1e-5


def test_time_dependent_polynomial():
    x, _ = solve_ode(lambda x, t: np.full_like(x, 3 * t * t), np.zeros(1))
    assert x[0] == pytest.approx(1.0, abs=1e-12)


def test_euler_counts_steps():
    x, stats = solve_ode(lambda x, t: x, np.ones(1), SolverSpec(kind="euler", n_steps=1000))
    assert stats.nfe == 1000 and x[0] == pytest.approx((1 + 1e-3) ** 1000)


def test_stiff_problem_raises_with_stats():
    with pytest.raises(StiffnessError) as info:
        solve_ode(lambda x, t: -1e9 * (x - np.cos(t)), np.zeros(1), SolverSpec(max_steps=50))
    assert info.value.stats.accepted + info.value.stats.rejected == 50


def test_solver_spec_validation():
    with pytest.raises(ValueError):
        SolverSpec(kind="rk4")
    with pytest.raises(ValueError):
        SolverSpec(rtol=0)


def test_guidance_arithmetic():
    m = Affine(a_cond=0.0, b_cond=1.0, a_null=0.0, b_null=0.0)
    x, c = np.zeros((3, 2)), CondLabels([1], [0])
    np.testing.assert_array_equal(guided_velocity(m, x, 0.5, c, 2.0), 2.0)
    np.testing.assert_array_equal(guided_velocity(m, x, 0.5, c, 1.0), 1.0)
    np.testing.assert_array_equal(guided_velocity(m, x, 0.5, c, 0.0), 0.0)


@pytest.mark.parametrize("w, evals", [(1.0, 1), (0.0, 1), (1.5, 2), (4.0, 2)])
def test_guidance_evaluation_count(w, evals):
    f = GuidedField(Affine(), CondLabels([1], [0]), w)
    f(np.zeros((2, 2)), 0.3)
    assert f.evals == evals


def test_null_condition_needs_one_eval_at_any_strength():
    f = GuidedField(Affine(), CondLabels.full(1), 3.0)
    f(np.zeros((2, 2)), 0.3)
    assert f.calls == ["null"]


def test_negative_guidance_rejected():
    with pytest.raises(ValueError):
        GuidedField(Affine(), CondLabels([1], [0]), -1.0)


def test_generate_is_seeded_and_reports_nfe():
    m = Affine()
    a, s = generate(m, CondLabels([1], [0]), 1.0, rng=np.random.default_rng(4), n=5)
    b, _ = generate(m, CondLabels([1], [0]), 1.0, rng=np.random.default_rng(4), n=5)
    assert a.tobytes() == b.tobytes() and s.nfe == 2 + 6 * (s.accepted + s.rejected)
    _, s2 = generate(m, CondLabels([1], [0]), 2.0, rng=np.random.default_rng(4), n=5)
    assert s2.nfe == 2 * (2 + 6 * (s2.accepted + s2.rejected))


def test_counterfactual_reverse_pass_uses_null_only():
    m = Affine()
    res = counterfactual(m, np.ones((4, 2)), CondLabels([1], [0]), w=2.0)
    assert set(res.reverse_calls) == {"null"}
    assert set(res.forward_calls) == {"null", "cond"}
    assert res.stats.nfe == len(res.reverse_calls) + len(res.forward_calls)


def test_counterfactual_linear_field_recovers_closed_form():
    # null field v = -0.2 x + 0; conditional v = 0.5 x + 1 (both exact exponentials)
    m = Affine(0.5, 1.0, -0.2, 0.0)
    x = np.array([[1.0, -3.0]])
    res = counterfactual(m, x, CondLabels([1], [0]))
    z = x * math.exp(0.2)
    expected = (z + 2.0) * math.exp(0.5) - 2.0
    np.testing.assert_allclose(res.latent, z, rtol=1e-5)
    np.testing.assert_allclose(res.sample, expected, rtol=1e-5)


def test_same_condition_round_trip_is_identity():
    m = Affine(0.5, 1.0, 0.5, 1.0)
    x = np.random.default_rng(0).standard_normal((6, 2))
    res = counterfactual(m, x, CondLabels([1], [0]), spec=SolverSpec(rtol=1e-8, atol=1e-8))
    np.testing.assert_allclose(res.sample, x, atol=1e-6)


def test_individual_treatment_effect():
    f = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
    assert np.all(individual_treatment_effect(f, f) == 0)
    np.testing.assert_allclose(individual_treatment_effect(f, f + 1), np.ones((2, 4, 4)))
    assert individual_treatment_effect(np.zeros((5, 2)), np.ones((5, 2))).shape == (5,)
    with pytest.raises(ValueError):
        individual_treatment_effect(np.zeros(3), np.zeros(4))


def test_stats_csv(tmp_path):
    from flowscreen.sampling import SolverStats

    write_stats_csv(tmp_path / "s.csv", [(0, SolverStats(14, 2, 0))], "abc")
    assert (tmp_path / "s.csv").read_text().splitlines() == ["sample_id,nfe,accepted,rejected,config_hash",
                                                             "0,14,2,0,abc"]


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-3, 3))
def test_linear_ode_matches_exponential(a, x0):
    x, _ = solve_ode(lambda x, t: a * x, np.array([x0]), SolverSpec(rtol=1e-8, atol=1e-10))
    assert x[0] == pytest.approx(x0 * math.exp(a), rel=1e-6, abs=1e-8)


def test_tolerance_ladder_order():
    errs, nfes = [], []
    for tol in (1e-3, 1e-4, 1e-5, 1e-6, 1e-7):
        x, s = solve_ode(lambda x, t: np.cos(4 * t) * x, np.ones(1), SolverSpec(rtol=tol, atol=tol))
        errs.append(abs(x[0] - math.exp(math.sin(4) / 4)))
        nfes.append(s.nfe)
    slope = -np.polyfit(np.log(nfes), np.log(errs), 1)[0]
    assert slope >= 4
