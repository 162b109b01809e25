import csv
import json
import math

import numpy as np
import pytest
import torch

from conftest import small_config
from maskdit import patching
from maskdit.config import TrainConfig
from maskdit.data import DatasetSpec, estimate_normalization, make_batch
from maskdit.errors import ConfigError, NonFiniteLossError
from maskdit.trainer import (
    METRIC_COLUMNS,
    create_train_state,
    ema_update,
    median_loss,
    phase_settings,
    run_training,
    train_step,
)


def states_equal(a, b):
    ta, tb = a.tensors(), b.tensors()
    return (
        a.step == b.step
        and list(ta) == list(tb)
        and all(torch.equal(ta[k], tb[k]) for k in ta)
        and a.adam_steps() == b.adam_steps()
        and torch.equal(a.generator.get_state(), b.generator.get_state())
    )


# ---- synthetic data


def test_make_batch_deterministic():
    spec = DatasetSpec()
    a = make_batch(spec, 16, torch.Generator().manual_seed(3))
    b = make_batch(spec, 16, torch.Generator().manual_seed(3))
    assert all(torch.equal(x, y) for x, y in zip(a, b))
    assert a[0].shape == (16, 1, 16, 16) and a[0].dtype == torch.float32


def test_brightest_pixel_near_jittered_center():
    spec = DatasetSpec()
    images, labels, centers = make_batch(spec, 512, torch.Generator().manual_seed(0))
    flat = images.view(512, -1).argmax(dim=1)
    pos = torch.stack([flat // 16, flat % 16], dim=1).double()
    dist = (pos - centers).norm(dim=1)
    assert float(dist.max()) <= 2.0
    # labels pick the center before jitter
    base = torch.tensor(spec.centers, dtype=torch.float64)[labels]
    assert float((centers - base).abs().max()) <= spec.jitter


def test_normalized_std_near_sigma_data():
    images, _, _ = make_batch(DatasetSpec(), 4096, torch.Generator().manual_seed(1))
    std = float(images.std())
    assert 0.4 <= std <= 0.6
    assert abs(float(images.mean())) < 0.05


def test_pinned_normalization_matches_estimate():
    offset, scale = estimate_normalization(DatasetSpec(), num_images=20_000, seed=0)
    spec = DatasetSpec()
    assert offset == pytest.approx(spec.norm_offset, rel=0.01)
    assert scale == pytest.approx(spec.norm_scale, rel=0.01)


def test_dataset_spec_validation():
    with pytest.raises(ConfigError):
        DatasetSpec(centers=((1, 1),))
    with pytest.raises(ValueError):
        make_batch(DatasetSpec(), 0)


# ---- EMA


def test_ema_zero_decay_copies():
    ema, params = [torch.zeros(3)], [torch.arange(3.0)]
    ema_update(ema, params, 0.0)
    assert torch.equal(ema[0], params[0])


def test_ema_geometric_contraction():
    theta = torch.tensor([1.0, -2.0, 3.0], dtype=torch.float64)
    ema = [torch.zeros(3, dtype=torch.float64)]
    gaps = []
    for _ in range(5):
        ema_update(ema, [theta], 0.9)
        gaps.append(float((ema[0] - theta).norm()))
    ratios = np.array(gaps[1:]) / np.array(gaps[:-1])
    np.testing.assert_allclose(ratios, 0.9, rtol=1e-12)


def test_ema_default_decay_and_errors():
    ema = [torch.zeros(2)]
    ema_update(ema, [torch.ones(2)])
    assert torch.allclose(ema[0], torch.full((2,), 1e-4))
    with pytest.raises(ValueError):
        ema_update(ema, [torch.ones(2)], 1.0)
    with pytest.raises(ValueError):
        ema_update(ema, [torch.ones(3)], 0.5)


def test_ema_stays_finite():
    state = create_train_state(small_config())
    for _ in range(3):
        images, labels, _ = make_batch(state.config.data, 8, state.generator)
        train_step(state, images, labels)
    assert all(torch.isfinite(p).all() for p in state.ema.parameters())


# ---- train_step


def test_first_loss_finite_and_positive():
    state = create_train_state(small_config())
    images, labels, _ = make_batch(state.config.data, 8, state.generator)
    _, losses, stats = train_step(state, images, labels)
    total = float(losses.total.detach())
    assert math.isfinite(total) and total > 0
    assert float(losses.mae.detach()) > 0
    assert state.step == 1 and stats["grad_norm"] > 0


def test_ten_steps_bit_identical():
    runs = [run_training(small_config(phase1_steps=10, phase2_steps=0))[0] for _ in range(2)]
    assert states_equal(*runs)
    other = run_training(small_config(phase1_steps=10, phase2_steps=0, seed=1))[0]
    assert not states_equal(runs[0], other)


def test_zero_ratio_never_samples_mask(monkeypatch):
    calls = []
    real = patching.sample_mask

    def spy(n, r, *args, **kwargs):
        calls.append(r)
        return real(n, r, *args, **kwargs)

    monkeypatch.setattr(patching, "sample_mask", spy)
    cfg = small_config(phase1_steps=3, phase2_steps=4, schedule="zero")
    _, rows = run_training(cfg)
    assert calls == [0.5] * 3
    assert [r["mask_ratio"] for r in rows[3:]] == [0.0] * 4
    assert all(r["loss_mae"] == 0.0 for r in rows[3:])


def test_cosine_schedule_endpoints():
    tc = TrainConfig(phase1_steps=10, phase2_steps=6, schedule="cosine")
    ratios = [phase_settings(tc, s)[1] for s in range(10, 16)]
    assert ratios[0] == 0.5 and ratios[-1] == 0.0
    assert all(a >= b for a, b in zip(ratios, ratios[1:]))


def test_phase_lr_ratio():
    tc = TrainConfig()
    assert phase_settings(tc, tc.phase1_steps)[2] / phase_settings(tc, 0)[2] == 0.5
    assert phase_settings(tc, 0)[:2] == ("masked", 0.5)
    assert phase_settings(TrainConfig(tune_batch_size=16), tc.phase1_steps)[3] == 16


def test_non_finite_loss_aborts_with_diagnostics(tmp_path):
    cfg = small_config()
    state = create_train_state(cfg)
    with torch.no_grad():
        state.model.final_layer.linear.bias.fill_(float("nan"))
    images, labels, _ = make_batch(cfg.data, 8, state.generator)
    with pytest.raises(NonFiniteLossError) as info:
        train_step(state, images, labels)
    assert info.value.diagnostics["step"] == 0
    assert len(info.value.diagnostics["sigma"]) == 8

    with pytest.raises(NonFiniteLossError):
        run_training(cfg, tmp_path, state=state)
    diag = json.loads((tmp_path / "diagnostic.json").read_text())
    assert diag["mask_ratio"] == 0.5


def test_metrics_csv_and_checkpoints(tmp_path):
    cfg = small_config()
    _, rows = run_training(cfg, tmp_path)
    with (tmp_path / "metrics.csv").open() as fh:
        reader = csv.DictReader(fh)
        assert tuple(reader.fieldnames) == METRIC_COLUMNS
        written = list(reader)
    assert [int(r["step"]) for r in written] == list(range(10))
    assert [r["phase"] for r in written] == ["masked"] * 6 + ["tune"] * 4
    assert sorted(p.name for p in tmp_path.glob("ckpt_*.mdit")) == [
        "ckpt_000000.mdit", "ckpt_000003.mdit", "ckpt_000006.mdit", "ckpt_000009.mdit", "ckpt_000010.mdit",
    ]
    assert median_loss(rows, 0, 9) > 0


def test_resume_matches_uninterrupted_run(tmp_path):
    cfg = small_config(ckpt_every=5, schedule="cosine")
    full, full_rows = run_training(cfg, tmp_path / "a")
    run_training(cfg, tmp_path / "b", max_steps=7)
    resumed, _ = run_training(cfg, tmp_path / "b", resume=tmp_path / "b" / "ckpt_000005.mdit")
    assert states_equal(full, resumed)

    def table(path):
        with path.open() as fh:
            return [{k: v for k, v in r.items() if k != "wallclock_s"} for r in csv.DictReader(fh)]

    assert table(tmp_path / "a" / "metrics.csv") == table(tmp_path / "b" / "metrics.csv")
