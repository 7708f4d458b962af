import math

import numpy as np
import pytest

from slkd.config import LossConfig, NetConfig, TrainConfig
from slkd.errors import ContractViolation
from slkd.net import build_network, forward
from slkd.train import (AdamState, NonFiniteGradient, TrainLog, adam_step, cosine_lr, distill,
                        pretrain_teacher, sample_batch)

from conftest import TOY

TC = TrainConfig(steps=4, batch=2, patch=16, eval_every=2)


def test_cosine_schedule_values():
    assert cosine_lr(0, 2000) == pytest.approx(1e-4)
    assert cosine_lr(2000, 2000) == pytest.approx(1e-6)
    assert cosine_lr(1000, 2000) == pytest.approx(5.05e-5)
    assert cosine_lr(500, 2000) == pytest.approx(1e-6 + 0.5 * (1e-4 - 1e-6) * (1 + math.cos(math.pi / 4)))
    with pytest.raises(ContractViolation):
        cosine_lr(5, 4)


def test_adam_zero_gradient_fixed_point():
    p = {"w": np.array([1.0, -2.0], np.float32)}
    out, _ = adam_step(p, {"w": np.zeros(2, np.float32)}, AdamState(), 1e-3, TrainConfig(weight_decay=0.0))
    assert np.array_equal(out["w"], p["w"])


def test_adam_first_step_is_signed_lr():
    p = {"w": np.array([0.5, 0.5, 0.5], np.float32)}
    g = {"w": np.array([3.0, -0.02, 1e-3], np.float32)}
    out, state = adam_step(p, g, AdamState(), 1e-3, TrainConfig(weight_decay=0.0))
    np.testing.assert_allclose(out["w"] - p["w"], -1e-3 * np.sign(g["w"]), rtol=1e-3)
    assert state.t == 1
    assert np.array_equal(p["w"], [0.5, 0.5, 0.5])  # inputs untouched


def test_adam_rejects_non_finite():
    with pytest.raises(NonFiniteGradient, match="'bad'"):
        adam_step({"bad": np.zeros(2, np.float32)}, {"bad": np.array([np.nan, 0], np.float32)}, AdamState(), 1e-3)


def test_sample_batch_deterministic_crops():
    rng = np.random.default_rng(0)
    clean = rng.random((3, 3, 20, 20)).astype(np.float32)
    deg = clean * 2  # exact in float32
    d1, c1 = sample_batch(clean, deg, 4, 8, 5)
    d2, c2 = sample_batch(clean, deg, 4, 8, 5)
    assert d1.shape == (4, 3, 8, 8)
    assert np.array_equal(d1, d2) and np.array_equal(d1, c1 * 2)
    with pytest.raises(ContractViolation):
        sample_batch(clean, deg, 1, 32, 0)


def test_trainlog_requires_increasing_steps():
    log = TrainLog()
    log.append({"step": 0, "loss": 1.0})
    log.append({"kind": "eval", "step": 0, "psnr": 1.0, "ssim": 0.5})
    with pytest.raises(ContractViolation):
        log.append({"step": 0, "loss": 1.0})
    assert '"kind"' not in log.to_jsonl()


def test_pretrain_zero_steps_equals_init(tiny_dataset):
    from slkd.data import derive_seed

    model, log = pretrain_teacher(TOY, tiny_dataset, TC.model_copy(update={"steps": 0}))
    ref = build_network(TOY, derive_seed(TC.seed, 0x7EAC))
    assert all(np.array_equal(model.params[k], ref.params[k]) for k in ref.params)
    assert log.records == []


def _strip_wall(log):
    return [{k: v for k, v in r.items() if k != "wall"} for r in log.records]


def test_pretrain_deterministic(tiny_dataset):
    a, la = pretrain_teacher(TOY, tiny_dataset, TC.model_copy(update={"steps": 10}))
    b, lb = pretrain_teacher(TOY, tiny_dataset, TC.model_copy(update={"steps": 10}))
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
    assert _strip_wall(la) == _strip_wall(lb)
    assert [r["lr"] for r in la.steps] == [cosine_lr(t, 10) for t in range(10)]


def test_pretrain_missing_dataset(tmp_path):
    from slkd.data import DatasetManifest

    with pytest.raises(FileNotFoundError, match=str(tmp_path)):
        pretrain_teacher(TOY, DatasetManifest(str(tmp_path), count=3, size=(16, 16)), TC)


def test_pretrain_rejects_bad_patch(tiny_dataset):
    cfg = NetConfig(levels=3, blocks=(1, 1, 1), base_dim=4, unified_dim=4)
    with pytest.raises(ContractViolation, match="patch"):
        pretrain_teacher(cfg, tiny_dataset, TC.model_copy(update={"patch": 10}))


@pytest.fixture(scope="module")
def teacher(tiny_dataset):
    return pretrain_teacher(TOY, tiny_dataset, TC.model_copy(update={"steps": 3}))[0]


def test_distill_logs_all_fields_and_recombines(tiny_dataset, teacher):
    lc = LossConfig(alpha1=0.5, alpha2=0.1)
    before = {k: v.copy() for k, v in teacher.params.items()}
    _, log = distill(teacher, None, TOY, tiny_dataset, TC, lc)
    assert all(np.array_equal(before[k], teacher.params[k]) for k in before)
    for r in log.steps:
        assert set(r) == {"step", "lr", "l_nc", "l_et", "l_kl", "l_pixel", "l_all", "wall"}
        expected = r["l_pixel"] + 0.5 * r["l_kl"] + 0.1 * (r["l_nc"] + r["l_et"])
        assert r["l_all"] == pytest.approx(expected, rel=1e-5)
    assert [e["step"] for e in log.evals] == [1, 3]


def test_distill_disabled_terms_are_exact_zero(tiny_dataset, teacher):
    lc = LossConfig(use_nc=False, use_et=False)
    _, log = distill(teacher, None, TOY, tiny_dataset, TC, lc)
    assert all(r["l_nc"] == 0.0 and r["l_et"] == 0.0 for r in log.steps)
    assert all(r["l_kl"] > 0 for r in log.steps)


def test_distill_pixel_only_is_l1_to_teacher_b(tiny_dataset, teacher):
    from slkd.data import derive_seed, load_split
    from slkd.losses import loss_pixel

    lc = LossConfig(alpha1=0.0, alpha2=0.0)
    tc = TC.model_copy(update={"steps": 1})
    _, log = distill(teacher, None, TOY, tiny_dataset, tc, lc)
    _, clean, degraded = load_split(tiny_dataset, "train")
    deg, cln = sample_batch(clean, degraded, tc.batch, tc.patch, derive_seed(tc.seed, 2, 0))
    student = build_network(TOY, derive_seed(tc.seed, 0x57D))
    expected = loss_pixel(forward(student, deg).reconstruction, forward(teacher, cln).reconstruction).item()
    r = log.steps[0]
    assert r["l_all"] == r["l_pixel"] == pytest.approx(expected, rel=1e-6)


def test_distill_deterministic(tiny_dataset, teacher):
    a, la = distill(teacher, None, TOY, tiny_dataset, TC)
    b, lb = distill(teacher, None, TOY, tiny_dataset, TC)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
    assert _strip_wall(la) == _strip_wall(lb)


def test_distill_level_mismatch(tiny_dataset, teacher):
    cfg = NetConfig(levels=3, blocks=(1, 1, 1), base_dim=4, unified_dim=4)
    with pytest.raises(ContractViolation, match="levels"):
        distill(teacher, None, cfg, tiny_dataset, TC)
