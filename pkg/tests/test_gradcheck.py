import numpy as np
import pytest

from mlrupp import autodiff as ad
from mlrupp.gradcheck import grad_check
from mlrupp.nn import Conv
from mlrupp.suite import SUITE, run_suite, suite_names
from mlrupp.tensor import Rng
from mlrupp.validate import validate


def test_pointwise_passes():
    rep = grad_check(Conv(4, 3, 1, 2, "pointwise", rng=Rng(0)), [(1, 4, 5, 5)], h=1e-5, tol=1e-6)
    assert rep.passed
    assert {c.tensor for c in rep.cases} == {"input0", "weight", "bias"}
    assert all(c.checked == c_size for c, c_size in zip(rep.cases, (100, 12, 3)))


def test_sign_flip_fails_at_first_element():
    with ad.inject_fault("sigmoid"):
        rep = grad_check(lambda x: ad.sigmoid(x), [(1, 2, 3, 3)], tol=1e-6)
    assert not rep.passed
    case = rep.failures()[0]
    assert case.tensor == "input0"
    assert case.first_failure == [0, 0, 0, 0]


def test_fault_scope_is_restored():
    with ad.inject_fault("sigmoid"):
        pass
    assert grad_check(lambda x: ad.sigmoid(x), [(1, 2, 3)], tol=1e-6).passed


@pytest.mark.parametrize("h", [1e-8, 1e-2])
def test_step_bounds(h):
    with pytest.raises(ValueError):
        grad_check(lambda x: ad.relu(x), [(1, 1, 2)], h=h)


def test_report_json_shape():
    rep = grad_check(Conv(2, 2, 3, 2, rng=Rng(1)), [(1, 2, 4, 4)])
    obj = rep.to_json()
    assert obj["node"] == "Conv" and obj["pass"] is True
    assert set(obj["cases"][0]) >= {"tensor", "worst_index", "analytic", "numeric", "rel_err", "pass"}
    validate({"pass": True, "failing": [], "nodes": [obj]}, "gradcheck_report")


def test_sampling_caps_probes():
    rep = grad_check(Conv(3, 3, 3, 2, rng=Rng(2)), [(1, 3, 6, 6)], max_per_tensor=5, seed=3)
    assert rep.passed
    assert [c.checked for c in rep.cases] == [5, 5, 3]


def test_loss_gradient_1e6():
    onehot = np.eye(3)[Rng(0).integers(0, 3, (2, 4, 4))].transpose(0, 3, 1, 2)
    for variant in ("normalized", "printed"):
        rep = grad_check(lambda z: ad.seg_loss_logits(z, onehot, variant), [(2, 3, 4, 4)], tol=1e-6)
        assert rep.passed, variant


def test_suite_registry():
    names = suite_names()
    assert len(names) == len(set(names))
    primitives = [e for e in SUITE if e.kind == "primitive"]
    assert len(primitives) >= 9
    for required in ("lcbam", "cbam", "dwcb", "msdc", "m2b", "patch_embed", "encoder_stage",
                     "decoder_stage", "net_total_loss"):
        assert required in names
    assert all(e.tol == 1e-6 for e in primitives)
    assert all(e.tol == 1e-5 for e in SUITE if e.kind == "block")


def test_suite_only_and_unknown():
    res = run_suite(["lcbam"])
    assert [e.name for e, _, _ in res.reports] == ["lcbam"] and res.passed
    with pytest.raises(KeyError):
        run_suite(["nope"])


def test_suite_is_deterministic():
    a = run_suite(["m2b"], seed=4).to_json()
    b = run_suite(["m2b"], seed=4).to_json()
    for node in (a, b):
        for n in node["nodes"]:
            n.pop("seconds")
    assert a == b
