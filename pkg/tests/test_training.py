import json
import math

import numpy as np
import pytest

from mlrupp.errors import ConfigError
from mlrupp.net import MLRUNet, NetCfg, load_checkpoint
from mlrupp.tensor import Rng
from mlrupp.training import (
    DivergenceError,
    TrainCfg,
    decrease_fraction,
    demo_train,
    make_batch,
    mean_foreground_dice,
)
from mlrupp.validate import validate

SMALL_NET = NetCfg(extents=(16, 16, 8), patch=(4, 4, 4), channels=(4, 8, 8, 8), blocks=1,
                   reduction=2, kernels=(3, 5), expansion=1)
SMALL = TrainCfg(net=SMALL_NET, steps=8, seed=3)


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    model, trace = demo_train(SMALL, d / "trace.jsonl", d / "ckpt")
    return d, model, trace


def test_trace_records(short_run):
    d, _, trace = short_run
    assert [r["step"] for r in trace] == list(range(SMALL.steps + 1))
    lines = (d / "trace.jsonl").read_text().splitlines()
    assert [json.loads(l) for l in lines] == trace
    for r in trace:
        validate(r, "trace_line")
        assert math.isfinite(r["loss"]) and 0 <= r["dice"] <= 1


def test_loss_goes_down(short_run):
    _, _, trace = short_run
    assert trace[-1]["loss"] < trace[0]["loss"]


def test_deterministic(short_run, tmp_path):
    d, _, trace = short_run
    _, again = demo_train(SMALL, tmp_path / "trace.jsonl")
    assert again == trace
    assert (tmp_path / "trace.jsonl").read_bytes() == (d / "trace.jsonl").read_bytes()


def test_checkpoint_restores(short_run):
    d, model, _ = short_run
    fresh = MLRUNet(SMALL_NET, Rng(999))
    load_checkpoint(fresh, d / "ckpt")
    x, _ = make_batch(SMALL)
    model.eval()
    fresh.eval()
    assert np.array_equal(model(x).logits.data, fresh(x).logits.data)


def test_zero_steps():
    _, trace = demo_train(TrainCfg(net=SMALL_NET, steps=0))
    assert len(trace) == 1 and trace[0]["step"] == 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence():
    with pytest.raises(DivergenceError) as info:
        demo_train(TrainCfg(net=SMALL_NET, steps=20, lr=1e6, momentum=0.0))
    assert info.value.step > 0


def test_make_batch():
    x, y = make_batch(SMALL)
    assert x.shape == (2, 1, 16, 16, 8) and y.shape == (2, 16, 16, 8)
    assert not np.array_equal(y[0], y[1])


def test_mean_foreground_dice():
    labels = np.random.default_rng(0).integers(0, 3, (2, 4, 4, 4))
    logits = np.eye(3)[labels].transpose(0, 4, 1, 2, 3)
    assert mean_foreground_dice(logits, labels) == 1.0


def test_decrease_fraction():
    mk = lambda losses: [{"step": i, "loss": v} for i, v in enumerate(losses)]
    assert decrease_fraction(mk([5.0] * 20 + [4, 3, 3.5, 2])) == pytest.approx(2 / 3)
    assert decrease_fraction(mk([1.0] * 21)) == 1.0


def test_config_roundtrip_and_errors():
    assert TrainCfg.from_json(SMALL.to_json()) == SMALL
    with pytest.raises(ConfigError):
        TrainCfg.from_json({"stepz": 3})
    with pytest.raises(ConfigError):
        TrainCfg.from_json({"net": {"channels": [4, 8]}})
