"""The verification harness itself: coverage, sensitivity, invariants, audit."""

import numpy as np
import pytest

from xstereo import tensor as T
from xstereo.tensor import Tensor, float64_scope
from xstereo.verify import (GradCase, check_case_gradients, gradient_cases,
                            registry_coverage_gap, run_checks,
                            run_gradient_checks, run_invariant_checks,
                            run_oracle_checks, run_schedule_audit, _result)


def case_by_name(name: str) -> GradCase:
    matches = [c for c in gradient_cases() if c.name == name]
    assert len(matches) == 1, name
    return matches[0]


class TestRegistry:
    def test_every_differentiable_op_has_a_case(self):
        assert registry_coverage_gap() == set()

    def test_case_names_unique(self):
        names = [c.name for c in gradient_cases()]
        assert len(names) == len(set(names))

    def test_only_documented_cases_skip_float32(self):
        restricted = {c.name for c in gradient_cases() if c.precisions != ("float32", "float64")}
        assert restricted == {"ssim_window3"}

    def test_at_least_three_input_shapes_per_seeded_case(self):
        # the image-shape helper draws batch/channels/height/width per seed,
        # so distinct seeds exercise distinct shapes
        case = case_by_name("mul_tensor")
        shapes = set()
        for seed in (0, 1, 2):
            rng = np.random.default_rng([seed, 12345])
            wrt, _ = case.build(rng)
            shapes.add(wrt[0].data.shape)
        assert len(shapes) >= 2  # collisions possible but not total


class TestFiniteDifferenceHarness:
    @pytest.mark.parametrize("name", ["mul_tensor", "conv2d_k3_s1_p1",
                                      "warp_left_from_right", "sum_all"])
    def test_float32_cases_within_tolerance(self, name):
        worst, n = check_case_gradients(case_by_name(name), seed=0, h=1e-3)
        assert n > 0
        assert worst <= 1e-3

    @pytest.mark.parametrize("name", ["mul_tensor", "ssim_window3"])
    def test_float64_cases_within_tolerance(self, name):
        with float64_scope():
            worst, _ = check_case_gradients(case_by_name(name), seed=0, h=1e-6)
        assert worst <= 1e-6

    def test_wrong_analytic_gradient_is_flagged(self):
        def crooked_double(x):
            # forward doubles, but the recorded rule claims derivative 1
            out = Tensor(x.data * 2.0)
            return T._record(out, (x,), lambda g: (g,))

        def build(rng):
            a = Tensor(np.ascontiguousarray(rng.uniform(0.5, 1.0, (2, 3)),
                                            dtype=T.default_dtype()))
            a.requires_grad = True
            return [a], lambda: crooked_double(a)

        case = GradCase(name="crooked", op=None, build=build)
        worst, n = check_case_gradients(case, seed=0, h=1e-3)
        assert n == 6
        assert worst > 0.1

    def test_runner_reports_coverage_and_rejects_bad_precision(self):
        with pytest.raises(ValueError, match="unknown precision"):
            run_gradient_checks("float16")


class TestInvariants:
    def test_all_pass(self):
        results = run_invariant_checks()
        assert len(results) >= 15
        failed = [r for r in results if not r.passed]
        assert failed == [], [f"{r.name}: {r.detail}" for r in failed]
        assert all(r.name.startswith("invariant_") for r in results)

    def test_crash_inside_a_check_reports_failure(self):
        def boom():
            raise RuntimeError("kaput")
        r = _result("invariant_boom", boom)
        assert not r.passed
        assert "raised RuntimeError: kaput" in r.detail


class TestOracle:
    def test_oracle_checks_pass(self):
        results = run_oracle_checks()
        by_name = {r.name: r for r in results}
        ident = by_name["oracle_identity_within_1px"]
        spectral = by_name["oracle_spectral_degradation"]
        assert ident.passed, ident.detail
        assert spectral.passed, spectral.detail
        assert "%" in ident.detail
        assert "x)" in spectral.detail


class TestScheduleAudit:
    def test_short_audit_passes(self):
        r = run_schedule_audit(joint_iterations=3, warmup_iterations=2)
        assert r.name == "schedule_step_isolation"
        assert r.passed, r.detail
        assert "2 warmup + 3 joint iterations" in r.detail
        assert "all 0.0" in r.detail


class TestRunChecks:
    def test_bad_subset(self):
        with pytest.raises(ValueError, match="unknown check subset"):
            run_checks("vibes")

    def test_subsets_are_disjoint(self):
        inv = run_invariant_checks()
        oracle = run_checks("oracle")
        assert all(r.name.startswith("invariant_") for r in inv)
        assert {r.name for r in oracle} == {"oracle_identity_within_1px",
                                            "oracle_spectral_degradation"}
