import json
import math

import numpy as np
import pytest

from laud.data import DatasetManifest
from laud.errors import ConfigError, NumericError
from laud.loss import LossConfig
from laud.model import LaudConfig, LaudModel, load_checkpoint, parameter_count
from laud.trainer import (
    RunLog,
    TrainConfig,
    bench,
    bicubic_baseline,
    evaluate,
    format_table,
    preset_config,
    run_ablation,
    run_k_sweep,
    timed,
    train,
)

TINY = LaudConfig(scale=2, rudp_steps=2, residual_blocks=1, channels=4)


def dataset(n, size=16, seed=0):
    rng = np.random.default_rng(seed)
    return DatasetManifest.from_arrays([rng.random((3, size, size)) for _ in range(n)])


def tiny_config(**kw):
    base = dict(model=TINY, loss=LossConfig(weights=[1.0, 3.0]), epochs=2, batch=2, initial_lr=1e-3, crop=8)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_micro_preset(self):
        cfg = preset_config("micro")
        assert (cfg.model.channels, cfg.model.residual_blocks, cfg.model.rudp_steps) == (32, 2, 3)
        assert cfg.crop == 32 and cfg.batch == 4

    def test_paper_preset(self):
        cfg = preset_config("paper")
        assert cfg.initial_lr == 2e-4 and cfg.crop == 128
        assert cfg.milestones == [0.5, 0.8, 0.9, 0.96]

    def test_from_dict_overrides(self):
        cfg = TrainConfig.from_dict({"preset": "micro", "epochs": 3, "model": {"channels": 8}, "loss": {"lambda": 0.5}})
        assert cfg.epochs == 3 and cfg.model.channels == 8 and cfg.model.residual_blocks == 2
        assert cfg.loss.lam == 0.5 and cfg.preset == "micro"

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"epoch": 3})
        with pytest.raises(ConfigError):
            preset_config("huge")

    def test_round_trip(self):
        cfg = preset_config("micro")
        assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


class TestTrain:
    def test_zero_epochs(self, tmp_path):
        res = train(tiny_config(epochs=0, checkpoint_dir=str(tmp_path)), dataset(4))
        assert res.log.records == []
        assert (tmp_path / "final.laud").read_bytes() == res.checkpoint
        assert (tmp_path / "runlog.jsonl").read_text() == ""
        assert load_checkpoint(res.checkpoint).config == TINY

    def test_log_and_schedule(self):
        res = train(tiny_config(epochs=4), dataset(4))
        steps = [r["step"] for r in res.log.records]
        assert steps == list(range(1, 9))
        lrs = [r["lr"] for r in res.log.records]
        # milestone epochs ceil(0.5*4)=2 and ceil(0.8*4)=4; the second is never reached
        assert lrs == [1e-3] * 4 + [5e-4] * 4

    def test_loss_conservation(self):
        res = train(tiny_config(), dataset(4))
        for r in res.log.records:
            loss = r["loss"]
            assert abs(sum(w * s for w, s in zip(loss["weights"], loss["step"])) - loss["total"]) <= 1e-9

    def test_reproducible(self):
        a = train(tiny_config(seed=7), dataset(6))
        b = train(tiny_config(seed=7), dataset(6))
        assert a.checkpoint == b.checkpoint
        assert a.log.to_jsonl() == b.log.to_jsonl()
        c = train(tiny_config(seed=8), dataset(6))
        assert c.checkpoint != a.checkpoint

    def test_every_parameter_moves(self):
        m = LaudModel(TINY, seed=1)
        before = {n: a.copy() for n, a in m.state_dict().items()}
        train(tiny_config(epochs=1), dataset(2), model=m)
        for name, arr in m.state_dict().items():
            assert not np.array_equal(arr, before[name]), name

    def test_validation_and_best(self, tmp_path):
        res = train(tiny_config(val_every=1, checkpoint_dir=str(tmp_path)), dataset(4), dataset(2, seed=5))
        assert all("val" in r for r in res.log.records)
        assert (tmp_path / "best.laud").exists()
        assert res.val is not None and math.isfinite(res.val["psnr"])

    def test_nan_aborts_with_diagnostics(self, tmp_path):
        bad = dataset(2)
        bad._cache[0][0, 0, 0] = np.nan
        with pytest.raises(NumericError) as exc:
            train(tiny_config(crop=None, checkpoint_dir=str(tmp_path)), bad)
        assert "loss" in exc.value.diagnostics
        assert (tmp_path / "last_good.laud").exists()
        diag = json.loads((tmp_path / "nan_diagnostics.json").read_text())
        assert "sr" in diag["loss"] and "detail" in diag["loss"]

    def test_no_dataset(self):
        with pytest.raises(ConfigError):
            train(tiny_config())

    def test_weight_mismatch_rejected_early(self):
        with pytest.raises(ConfigError):
            train(tiny_config(loss=LossConfig(weights=[1.0, 3.0, 10.0])), dataset(2))


class TestRunLog:
    def test_monotone(self):
        log = RunLog()
        log.append({"step": 1})
        log.append({"step": 1})
        with pytest.raises(ValueError):
            log.append({"step": 0})

    def test_jsonl(self):
        log = RunLog([{"step": 1, "a": 2}, {"step": 2}])
        lines = log.to_jsonl().splitlines()
        assert [json.loads(x)["step"] for x in lines] == [1, 2]


class TestEvaluation:
    def test_bicubic_baseline_constant_is_inf(self):
        rep = bicubic_baseline([np.full((3, 16, 16), 0.5)], 2)
        assert rep.mean_psnr == math.inf

    def test_evaluate_shapes(self):
        rep = evaluate(LaudModel(TINY), dataset(2, size=17))
        assert len(rep.rows) == 2 and rep.border_crop == 2


class TestExperiments:
    def test_ablation_bookkeeping(self):
        base = tiny_config(epochs=1, model=LaudConfig(scale=2, residual_blocks=1, channels=4))
        table = run_ablation(base, ("M1", "M4"), seeds=(0, 1), train_manifest=dataset(2), val_manifest=dataset(1, seed=3))
        assert [r["variant"] for r in table["rows"]] == ["M1", "M4"]
        assert all(len(r["runs"]) == 2 for r in table["rows"])
        m1, m4 = table["rows"]
        assert m1["median_psnr"] == pytest.approx(np.median([r["psnr"] for r in m1["runs"]]))
        assert table["deltas"]["M4-M1"]["psnr"] == pytest.approx(m4["median_psnr"] - m1["median_psnr"])
        assert "M4-M1" in format_table(table)

    def test_ablation_needs_seed_and_val(self):
        with pytest.raises(ConfigError):
            run_ablation(tiny_config(), seeds=(), train_manifest=dataset(2), val_manifest=dataset(1))
        with pytest.raises(ConfigError):
            run_ablation(tiny_config(), seeds=(0,), train_manifest=dataset(2), val_manifest=None)

    def test_k_sweep_rows(self):
        table = run_k_sweep(tiny_config(epochs=1), (1, 2), seeds=(0,), train_manifest=dataset(2), val_manifest=dataset(1))
        assert [r["variant"] for r in table["rows"]] == ["K=1", "K=2"]
        assert table["rows"][0]["params"] < table["rows"][1]["params"]


class TestBench:
    def test_timed_excludes_warmup(self):
        calls, ticks = [], iter([10.0, 16.0])
        t = timed(lambda: calls.append(1), warmup=3, iters=4, clock=lambda: next(ticks))
        assert len(calls) == 7
        assert t == pytest.approx(1.5)

    def test_dry(self):
        out = bench(TINY, dry=True)
        assert out == {"param_count": parameter_count(TINY), "config": TINY.to_dict()}

    def test_fields_and_growth_with_k(self):
        outs = [bench(LaudConfig(scale=2, rudp_steps=k, residual_blocks=1, channels=4), warmup=1, iters=2, lr_size=8) for k in (1, 2, 3)]
        for o in outs:
            assert o["warmup_iterations"] == 1 and o["timed_iterations"] == 2
            assert o["time_per_train_step"] > 0 and o["time_per_inference"] > 0
            assert o["peak_memory_estimate"] == sum(o["memory_breakdown"].values())
        for a, b in zip(outs, outs[1:]):
            assert a["param_count"] < b["param_count"]
            assert a["peak_memory_estimate"] < b["peak_memory_estimate"]
