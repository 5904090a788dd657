import csv
import math

import pytest
import torch
from torch.utils.data import TensorDataset

from pmnowcast.errors import CheckpointError, ConfigError, TrainingError
from pmnowcast.losses import LossConfig
from pmnowcast.models import ModelConfig, build_model, load_weights
from pmnowcast.preprocess import FrameStore, SampleDataset, Split, build_samples, compute_stats
from pmnowcast.synthetic import MINI_INPUT, MINI_OUTPUT
from pmnowcast import training
from pmnowcast.training import (
    TrainConfig,
    cosine_lr,
    epoch_order,
    make_optimizer,
    make_scheduler,
    resume,
    run_epoch,
    train,
    validate,
)


def gru(dropout=0.0, out=8, seed=0):
    return ModelConfig("convgru", (4, 6, 4), 3, (dropout,) * 3, output_size=out, seed=seed)


def tiny_unet(out=8):
    return ModelConfig("unet", (2, 2, 4, 4, 4), output_size=out)


def tensors(n, size=16, out=8, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(n, 1, 10, size, size, generator=g, dtype=dtype)
    lo = (size - out) // 2
    y = torch.tanh(x[:, :, 9:10, lo : lo + out, lo : lo + out] + 0.1 * x[:, :, 0:1, lo : lo + out, lo : lo + out])[:, 0]
    return TensorDataset(x, y)


def params(model):
    return torch.cat([p.detach().flatten() for p in model.parameters()])


class TestSchedules:
    def test_plateau_halves_once_after_four_flat_epochs(self):
        cfg = TrainConfig(recipe="recurrent")
        opt = make_optimizer(build_model(gru()), cfg)
        sched = make_scheduler(opt, cfg)
        lrs = []
        for val in [1.0, 1.0, 1.0, 1.0, 1.0, 1.0]:
            sched.step(val)
            lrs.append(opt.param_groups[0]["lr"])
        assert lrs == [1e-3, 1e-3, 1e-3, 1e-3, 5e-4, 5e-4]

    def test_plateau_ignores_tiny_improvements(self):
        cfg = TrainConfig(recipe="recurrent")
        opt = make_optimizer(build_model(gru()), cfg)
        sched = make_scheduler(opt, cfg)
        for val in [1.0, 0.99999, 0.99998, 0.99997, 0.99996]:
            sched.step(val)
        assert opt.param_groups[0]["lr"] == 5e-4

    def test_cosine_closed_form(self):
        cfg = TrainConfig(recipe="unet", lr=2e-3, max_epochs=100)
        opt = make_optimizer(build_model(tiny_unet()), cfg)
        sched = make_scheduler(opt, cfg)
        for epoch in range(100):
            assert abs(opt.param_groups[0]["lr"] - cosine_lr(epoch, cfg)) < 1e-9
            opt.step()
            sched.step()
        assert cosine_lr(50, cfg) == pytest.approx(1e-3)
        assert cosine_lr(100, cfg) == pytest.approx(0.0, abs=1e-18)

    def test_recipe_defaults(self):
        rec, un = TrainConfig(recipe="recurrent"), TrainConfig(recipe="unet")
        assert (rec.accumulation_steps, rec.grad_clip) == (1, 1.0)
        assert (un.accumulation_steps, un.grad_clip) == (2, 0.0)
        assert isinstance(make_optimizer(build_model(tiny_unet()), un), torch.optim.AdamW)
        assert make_optimizer(build_model(tiny_unet()), un).param_groups[0]["weight_decay"] == 1e-4

    @pytest.mark.parametrize("kw", [dict(recipe="sgd"), dict(batch_size=0), dict(lr=0), dict(accumulation_steps=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_epoch_order_is_a_seeded_permutation(self):
        a = epoch_order(20, 0, 3)
        assert sorted(a) == list(range(20))
        assert a == epoch_order(20, 0, 3)
        assert a != epoch_order(20, 0, 4)


class TestAccumulation:
    @pytest.mark.parametrize("recipe", ["recurrent", "unet"])
    @pytest.mark.parametrize("n", [8, 10])
    def test_accumulated_micro_batches_equal_one_big_batch(self, recipe, n):
        data = tensors(n, dtype=torch.float64)
        loss = LossConfig()
        runs = []
        for batch, k in ((8, 1), (4, 2)):
            model = build_model(gru()).double()
            cfg = TrainConfig(recipe=recipe, batch_size=batch, accumulation_steps=k)
            run_epoch(model, data, make_optimizer(model, cfg), loss, cfg, epoch=0)
            runs.append(params(model))
        assert torch.max(torch.abs(runs[0] - runs[1])).item() < 1e-6
        assert not torch.equal(runs[0], params(build_model(gru()).double()))


class TestValidate:
    def test_perfect_predictor_scores_zero(self):
        model = build_model(gru()).eval()
        x = tensors(6).tensors[0]
        with torch.no_grad():
            y = model(x)
        assert validate(model, TensorDataset(x, y), LossConfig()) < 1e-6

    def test_independent_of_batch_size(self):
        model = build_model(gru(dropout=0.3))
        data = tensors(7)
        full = validate(model, data, LossConfig(), batch_size=32)
        single = sum(validate(model, TensorDataset(*data[i : i + 1]), LossConfig()) for i in range(7)) / 7
        assert full == pytest.approx(single, abs=1e-6)
        assert validate(model, data, LossConfig(), batch_size=3) == pytest.approx(full, abs=1e-6)
        assert model.training

    def test_repeatable(self):
        model = build_model(gru(dropout=0.3))
        data = tensors(5)
        assert validate(model, data, LossConfig()) == validate(model, data, LossConfig())


def fit(out_dir=None, epochs=5, recipe="recurrent", stop=None, dropout=0.2, batch=2):
    model = build_model(gru(dropout=dropout) if recipe == "recurrent" else tiny_unet(out=8))
    cfg = TrainConfig(recipe=recipe, batch_size=batch, max_epochs=epochs, seed=3)
    size = 16
    return train(model, "pm2p5", tensors(6, size), tensors(3, size, seed=1), None, cfg, out_dir, stop_after_epoch=stop)


class TestTrain:
    def test_outputs_and_history(self, tmp_path):
        res = fit(tmp_path, epochs=3)
        assert [h["epoch"] for h in res.history] == [0, 1, 2]
        assert (tmp_path / "best.safetensors").is_file() and (tmp_path / "last_state.pt").is_file()
        with (tmp_path / "history.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        assert float(rows[res.best_epoch]["val_loss"]) == pytest.approx(res.best_val_loss)
        model, meta = load_weights(tmp_path / "best.safetensors", species="pm2p5")
        assert meta["training"]["epoch"] == res.best_epoch
        assert validate(model, tensors(3, seed=1), LossConfig()) == pytest.approx(res.best_val_loss, abs=1e-6)

    def test_same_seed_same_history(self):
        a, b = fit(epochs=3), fit(epochs=3)
        strip = lambda h: [{k: v for k, v in r.items() if k != "seconds"} for r in h]
        assert strip(a.history) == strip(b.history)

    def test_cosine_lr_trace_in_history(self):
        res = fit(epochs=6, recipe="unet")
        cfg = TrainConfig(recipe="unet", max_epochs=6)
        for row in res.history:
            assert abs(row["lr"] - cosine_lr(row["epoch"], cfg)) < 1e-9

    @pytest.mark.parametrize("recipe", ["recurrent", "unet"])
    def test_resume_matches_uninterrupted(self, tmp_path, recipe):
        full = fit(tmp_path / "full", recipe=recipe)
        part = fit(tmp_path / "part", recipe=recipe, stop=2)
        assert len(part.history) == 3
        cont = resume(tmp_path / "part" / "last_state.pt", tensors(6), tensors(3, seed=1))
        assert len(cont.history) == 5
        for a, b in zip(full.history, cont.history):
            assert a["lr"] == b["lr"]
            assert a["train_loss"] == pytest.approx(b["train_loss"], abs=1e-6)
            assert a["val_loss"] == pytest.approx(b["val_loss"], abs=1e-6)
        assert torch.max(torch.abs(params(full.model) - params(cont.model))).item() < 1e-6
        with (tmp_path / "part" / "history.csv").open() as fh:
            assert len(list(csv.DictReader(fh))) == 5

    def test_resume_with_other_batch_size_warns(self, tmp_path):
        fit(tmp_path, epochs=2, stop=0)
        cfg = TrainConfig(batch_size=3, max_epochs=2, seed=3)
        with pytest.warns(UserWarning, match="batch_size"):
            resume(tmp_path / "last_state.pt", tensors(6), tensors(3, seed=1), cfg)

    def test_resume_missing_or_corrupt(self, tmp_path):
        with pytest.raises(CheckpointError):
            resume(tmp_path / "last_state.pt", tensors(6), tensors(3))
        (tmp_path / "last_state.pt").write_bytes(b"garbage")
        with pytest.raises(CheckpointError):
            resume(tmp_path / "last_state.pt", tensors(6), tensors(3))

    def test_early_stopping(self, monkeypatch):
        monkeypatch.setattr(training, "validate", lambda *a, **k: 1.0)
        model = build_model(gru())
        cfg = TrainConfig(batch_size=2, max_epochs=50, early_stop_patience=3)
        res = train(model, "pm2p5", tensors(4), tensors(2), None, cfg)
        assert len(res.history) == 4
        assert res.best_epoch == 0

    def test_non_finite_input_aborts_with_context(self):
        data = tensors(4)
        data.tensors[0][2, 0, 0, 0, 0] = float("nan")
        with pytest.raises(TrainingError, match="batch"):
            train(build_model(gru()), "pm2p5", data, tensors(2), None, TrainConfig(batch_size=4, max_epochs=1))


class TestSplitGuard:
    @pytest.fixture
    def datasets(self, mini_archive):
        _, catalog, _ = mini_archive
        samples = tuple(build_samples(catalog, "pm2p5"))
        store = FrameStore(compute_stats(catalog, domain=MINI_INPUT), MINI_INPUT)
        return {role: SampleDataset(Split(role, samples[:4]), store, MINI_OUTPUT) for role in ("train", "val", "test")}

    def test_test_split_is_refused(self, datasets):
        model = build_model(gru(out=32))
        with pytest.raises(ConfigError, match="test"):
            train(model, "pm2p5", datasets["test"], datasets["val"], cfg=TrainConfig(max_epochs=1))
        with pytest.raises(ConfigError, match="test"):
            train(model, "pm2p5", datasets["train"], datasets["test"], cfg=TrainConfig(max_epochs=1))

    def test_roles_must_match(self, datasets):
        with pytest.raises(ConfigError):
            train(build_model(gru(out=32)), "pm2p5", datasets["val"], datasets["train"], cfg=TrainConfig(max_epochs=1))

    def test_sample_datasets_train(self, datasets):
        res = train(build_model(gru(out=32)), "pm2p5", datasets["train"], datasets["val"], cfg=TrainConfig(batch_size=4, max_epochs=1))
        assert math.isfinite(res.best_val_loss)
