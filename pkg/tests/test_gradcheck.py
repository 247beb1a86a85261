import numpy as np
import pytest

from sarcasm_detect import autograd as ag
from sarcasm_detect.autograd import Tensor
from sarcasm_detect.errors import ContractError, GradCheckError
from sarcasm_detect.gradcheck import KinkError, check_with_resampling, finite_diff_check, relative_error
from sarcasm_detect.verification import DEFAULT_CASES, MODULE_CASES, run_suite


def test_relative_error_definition():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(2.0, 1.0) == 0.5
    # tiny magnitudes are compared against the 1e-8 floor
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)


def test_sum_of_squares_is_essentially_exact(rng):
    theta = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    report = finite_diff_check(lambda: ag.sum_squares(theta), [theta], h=1e-5)
    assert report.max_rel_error < 1e-8
    assert report.passed


def test_detects_a_wrong_gradient(rng):
    x = Tensor(rng.normal(size=3) + 3.0, requires_grad=True)

    def broken():
        # forward is x², backward claims 3x
        return ag._make(np.sum(x.data**2), (x,), lambda g: (g * 3.0 * x.data,), "broken")

    report = finite_diff_check(broken, [x])
    assert not report.passed
    assert report.worst().autodiff == pytest.approx(1.5 * report.worst().numeric)
    with pytest.raises(GradCheckError):
        report.raise_on_failure()


def test_kink_proximity_is_reported():
    x = Tensor(np.array([1e-5, 1.0]), requires_grad=True)
    with pytest.raises(KinkError):
        finite_diff_check(lambda: ag.total(ag.relu(x)), [x])


def test_resampling_skips_kinky_draws():
    draws = []

    def build(rng):
        draws.append(1)
        # first draw sits on the kink, later ones are clear of it
        value = 0.0 if len(draws) == 1 else 1.0
        x = Tensor(np.array([value, 2.0]), requires_grad=True)
        return (lambda: ag.total(ag.relu(x))), [x], ["x"]

    report = check_with_resampling(build, seed=0)
    assert report.passed and len(draws) == 2


def test_resampling_gives_up_eventually():
    def build(rng):
        x = Tensor(np.zeros(2), requires_grad=True)
        return (lambda: ag.total(ag.relu(x))), [x], ["x"]

    with pytest.raises(ContractError):
        check_with_resampling(build, seed=0, attempts=3)


def test_single_precision_rejected():
    x = Tensor(np.ones(2), requires_grad=True)
    x.data = x.data.astype(np.float32)
    with pytest.raises(ContractError):
        finite_diff_check(lambda: ag.total(x), [x])


def test_parameters_restored_after_check(rng):
    x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    before = x.data.copy()
    finite_diff_check(lambda: ag.total(ag.tanh(x)), [x])
    assert np.array_equal(before, x.data)


def test_subsampling_limits_entries(rng):
    x = Tensor(rng.normal(size=(10, 10)), requires_grad=True)
    report = finite_diff_check(lambda: ag.total(ag.tanh(x)), [x], max_entries=7)
    assert report.tensors[0].checked == 7


@pytest.mark.parametrize("case", [c for c in DEFAULT_CASES if not c.startswith("model:")])
def test_module_case_passes(case):
    (result,) = run_suite(only=[case])
    assert result.report.max_rel_error < 1e-4, result.report.worst()


@pytest.mark.parametrize("variant", ["no_visual_attention", "no_tau_si", "no_tau_sc"])
def test_every_variant_loss_passes_subsampled(variant):
    (result,) = run_suite(only=[f"model:{variant}"], max_entries=8)
    assert result.report.max_rel_error < 1e-4, result.report.worst()


def test_suite_covers_every_op_and_module():
    expected = {"op:matmul", "op:softmax_rows", "op:layer_norm", "op:reduce_max_cols", "op:avg_pool_axis",
                "op:concat", "encoder", "coordinate_attention", "incongruity_block", "coattention", "model:full"}
    assert expected <= set(DEFAULT_CASES) <= set(MODULE_CASES)
