import json
import math

import numpy as np
import pytest

from unidyg import autograd as ag
from unidyg.autograd import AdamState
from unidyg.encoder import UniDyGModel
from unidyg.errors import InvalidArgumentError, NumericError
from unidyg.synthetic import planted_ctdg, planted_dtdg
from unidyg.training import (
    Streams,
    TrainConfig,
    bce_loss,
    evaluate,
    prepare_data,
    sample_negatives,
    stream_scores,
    train,
    train_epoch,
)

TINY = dict(dim=8, time_dim=8, batch_size=50, lr=1e-3, epochs=2, neighbors=4)


@pytest.fixture(scope="module")
def tiny_ctdg():
    return planted_ctdg(n_pairs=10, target_events=400, seed=1)


@pytest.fixture(scope="module")
def tiny_dtdg():
    return planted_dtdg(n_pairs=20, snapshots=12, seed=1)


def test_defaults():
    c = TrainConfig()
    assert (c.batch_size, c.neighbors, c.theta, c.lr, c.dim) == (600, 12, 0.2, 1e-4, 100)
    assert (c.attention, c.dynamics, c.patience, c.epochs) == ("fgat_n", "frequency", 5, 50)


def test_config_validation_and_roundtrip():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(batch_size=0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(attention="lstm")
    with pytest.raises(InvalidArgumentError):
        TrainConfig.from_dict({"batch": 10})
    c = TrainConfig(mode="dtdg", lr=0.5)
    assert TrainConfig.from_dict(c.to_dict()) == c


# -- negatives -----------------------------------------------------------------------

def test_forced_rejection():
    neg = sample_negatives([4, 4, 4], [4, 9], 1, 0)
    assert neg.tolist() == [[9], [9], [9]]


def test_negative_counts_and_determinism():
    dst = np.arange(50) % 7
    a = sample_negatives(dst, np.arange(20), 100, 3)
    assert a.shape == (50, 100)
    assert not np.any(a == dst[:, None])
    assert np.array_equal(a, sample_negatives(dst, np.arange(20), 100, 3))


def test_negatives_are_uniform_over_the_rest():
    draws = sample_negatives(np.zeros(20_000, dtype=int), np.arange(5), 1, 1)[:, 0]
    counts = np.bincount(draws, minlength=5)
    assert counts[0] == 0
    chi2 = ((counts[1:] - 5000) ** 2 / 5000).sum()
    assert chi2 < 16.27  # 3 degrees of freedom, p = 0.001


def test_negative_sampling_errors():
    with pytest.raises(InvalidArgumentError):
        sample_negatives([3], [3], 1, 0)
    with pytest.raises(InvalidArgumentError):
        sample_negatives([3], [], 1, 0)


# -- loss ---------------------------------------------------------------------------------

def test_bce_examples():
    assert bce_loss(np.zeros(3), np.zeros(2)).item() == pytest.approx(math.log(2), abs=1e-15)
    assert bce_loss(np.array([20.0]), np.array([-20.0])).item() < 1e-8


def test_bce_against_direct_formula():
    rng = np.random.default_rng(0)
    pos, neg = rng.standard_normal(30) * 3, rng.standard_normal(40) * 3
    sig = lambda x: 1 / (1 + np.exp(-x))  # noqa: E731
    expect = np.concatenate([-np.log(sig(pos)), -np.log(1 - sig(neg))]).mean()
    assert abs(bce_loss(pos, neg).item() - expect) < 1e-10


# -- loop ------------------------------------------------------------------------------------

def test_zero_lr_keeps_parameters(tiny_ctdg):
    cfg = TrainConfig(**{**TINY, "lr": 0.0})
    data = prepare_data(tiny_ctdg, cfg)
    model = UniDyGModel(cfg.model_config(data.d_e), seed=0)
    before = model.state_values()
    train_epoch(model, data, cfg, AdamState(), 1, Streams(model, data, True))
    after = model.state_values()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_training_moves_parameters(tiny_ctdg):
    cfg = TrainConfig(**TINY)
    data = prepare_data(tiny_ctdg, cfg)
    model = UniDyGModel(cfg.model_config(data.d_e), seed=0)
    before = model.state_values()
    train_epoch(model, data, cfg, AdamState(), 1, Streams(model, data, True))
    changed = [k for k, v in model.state_values().items() if not np.array_equal(v, before[k])]
    assert "dynamics.W_d" in changed and "time.W_q" in changed and "attr.value.W_G" in changed


def test_seed_fixed_runs_are_identical(tiny_ctdg, tmp_path):
    a = train(TrainConfig(**TINY), tiny_ctdg, out_dir=tmp_path / "a")
    b = train(TrainConfig(**TINY), tiny_ctdg, out_dir=tmp_path / "b")
    assert abs(a.history[0]["loss"] - b.history[0]["loss"]) <= 1e-10
    assert (tmp_path / "a" / "summary.json").read_text() == (tmp_path / "b" / "summary.json").read_text()


def test_outputs_written(tiny_ctdg, tmp_path):
    res = train(TrainConfig(**TINY), tiny_ctdg, out_dir=tmp_path)
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == len(res.history)
    rec = json.loads(lines[0])
    assert set(rec) == {"epoch", "loss", "val_auc", "val_ap", "val_mrr", "seconds"}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert 0 <= summary["test"]["transductive"]["auc"] <= 1
    with np.load(tmp_path / "negatives.npz") as z:
        assert z["test_neg"].shape == (len(res.data.split.test),)
    assert UniDyGModel.load(tmp_path / "checkpoint").state_values().keys() == res.model.state_values().keys()
    assert res.audit["queries"] > 0


def test_evaluation_is_repeatable(tiny_ctdg):
    cfg = TrainConfig(**TINY)
    res = train(cfg, tiny_ctdg)
    again = evaluate(res.model, res.data, cfg)
    again.pop("audit")
    assert again == res.test


def test_validation_streams_state_forward(tiny_ctdg):
    cfg = TrainConfig(**TINY)
    data = prepare_data(tiny_ctdg, cfg)
    model = UniDyGModel(cfg.model_config(data.d_e), seed=0)
    streams = Streams(model, data, True)
    train_epoch(model, data, cfg, AdamState(), 1, streams)
    before = model.state_values()
    stream_scores(model, data.split.val, data.negatives["val_neg"], None, cfg, streams)
    assert streams.states.t_last.max() == data.split.val.t[-1]
    assert all(np.array_equal(v, model.state_values()[k]) for k, v in before.items())


def test_dtdg_reports_mrr(tiny_dtdg):
    res = train(TrainConfig(mode="dtdg", **TINY), tiny_dtdg)
    assert all(r["val_mrr"] is not None for r in res.history)
    assert 0 < res.test["transductive"]["mrr"] <= 1
    assert res.data.negatives["test_neg_mrr"].shape[1] == 100


def test_inductive_nodes_absent_from_training(tiny_ctdg):
    data = prepare_data(tiny_ctdg, TrainConfig(**TINY))
    assert data.held_out.size == 2
    assert not np.isin(data.train.src, data.held_out).any()
    assert not np.isin(data.train.dst, data.held_out).any()


def test_nan_loss_dumps_batch(tiny_ctdg, tmp_path):
    cfg = TrainConfig(**TINY)
    data = prepare_data(tiny_ctdg, cfg)
    model = UniDyGModel(cfg.model_config(data.d_e), seed=0)
    model.decoder.out.b.value[...] = np.nan
    with pytest.raises(NumericError):
        train_epoch(model, data, cfg, AdamState(), 1, Streams(model, data, True), out_dir=tmp_path)
    dump = json.loads((tmp_path / "nonfinite_batch.json").read_text())
    assert len(dump["src"]) == cfg.batch_size and dump["loss"] == "nan"


def test_early_stopping_respects_patience(tiny_ctdg):
    res = train(TrainConfig(**{**TINY, "epochs": 6, "patience": 1, "lr": 0.0}), tiny_ctdg)
    # with lr = 0 validation never improves after epoch 1
    assert res.best_epoch == 1 and len(res.history) == 2


def test_no_grad_evaluation_records_nothing(tiny_ctdg):
    cfg = TrainConfig(**TINY)
    data = prepare_data(tiny_ctdg, cfg)
    model = UniDyGModel(cfg.model_config(data.d_e), seed=0)
    with ag.Tape() as tape:
        stream_scores(model, data.split.val, data.negatives["val_neg"], None, cfg, Streams(model, data, False))
    assert len(tape) == 0
