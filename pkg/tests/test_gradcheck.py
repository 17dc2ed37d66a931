import math

import pytest

from lbsnrec import gradcheck
from lbsnrec.model import ModelParams, VariantMask
from lbsnrec.gradcheck import (check_all, default_toy_config,
                               finite_diff_gradient, make_toy_dataset,
                               write_report_csv)


def test_finite_diff_quadratic():
    params = ModelParams.zeros(1, 1, 1)
    params.S0[0] = 3.0

    def loss_fn(p):
        return float(p.S0[0] ** 2)

    grad = finite_diff_gradient(loss_fn, params, "S0", 0, step=1e-5)
    assert grad == pytest.approx(6.0, abs=1e-9)


def test_finite_diff_constant_and_linear():
    params = ModelParams.zeros(1, 1, 2)
    assert finite_diff_gradient(lambda p: 7.5, params, "S0", 0) == 0.0
    assert finite_diff_gradient(lambda p: float(p.S0.sum()), params, "S0", 1) \
        == pytest.approx(1.0, abs=1e-10)


def test_finite_diff_rejects_non_finite():
    params = ModelParams.zeros(1, 1, 1)
    with pytest.raises(FloatingPointError):
        finite_diff_gradient(lambda p: float("nan"), params, "S0", 0)


def test_truncation_error_shrinks_with_step():
    # smooth scalar loss exp(x) at x=0.4: error should fall ~4x per halving
    params = ModelParams.zeros(1, 1, 1)
    params.C0[0] = 0.4
    loss_fn = lambda p: math.exp(p.C0[0])
    exact = math.exp(0.4)
    errors = [abs(finite_diff_gradient(loss_fn, params, "C0", 0, step=h) - exact)
              for h in (1e-2, 5e-3, 2.5e-3)]
    assert errors[1] < errors[0] and errors[2] < errors[1]
    assert errors[1] == pytest.approx(errors[0] / 4, rel=0.05)


def test_check_all_passes_on_toy():
    from lbsnrec.model import TENSOR_NAMES

    report = check_all(make_toy_dataset(seed=0), default_toy_config(seed=0))
    assert report.passed
    assert {c.tensor for c in report.checks} == set(TENSOR_NAMES)


def test_check_all_fault_injection_names_tensor():
    report = check_all(make_toy_dataset(seed=0), default_toy_config(seed=0),
                       fault_injection=("W_f1", 1.01))
    assert not report.passed
    assert report.failing_tensors() == ["W_f1"]


def test_check_all_base_variant_gate_entries_trivially_zero():
    cfg = default_toy_config(seed=1, variant=VariantMask(False, False))
    report = check_all(make_toy_dataset(seed=1), cfg)
    assert report.passed
    by_name = {c.tensor: c for c in report.checks}
    for name in ("W_i1", "W_f2", "b_c", "W", "S0", "C0", "U"):
        assert by_name[name].max_abs == 0.0


def test_report_csv(tmp_path):
    report = check_all(make_toy_dataset(seed=2), default_toy_config(seed=2),
                       sample_entries_per_tensor=4)
    path = tmp_path / "report.csv"
    write_report_csv(report, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "tensor,max_rel,max_abs,worst_index,pass"
    assert len(lines) == 18
    assert all(line.endswith(",1") for line in lines[1:])
