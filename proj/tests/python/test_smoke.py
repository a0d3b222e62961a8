import json
import math

import numpy as np
import pytest

import distillkit as dk


def test_losses_match_closed_forms():
    y = np.array([[0.5, 0.5]])
    p = np.array([[0.25, 0.75]])
    assert dk.kl_loss(y, p, lambda_reg=0.0) == pytest.approx(0.14384, abs=1e-5)

    onehot = np.zeros((1, 45))
    onehot[0, 0] = 1.0
    uniform = np.full((1, 45), 1 / 45)
    assert dk.entropy_loss(onehot, uniform, lambda_reg=0.0) == pytest.approx(math.log(45))

    s = np.zeros((1, 512))
    s[0, :2] = [3.0, 4.0]
    assert dk.feature_distance(s, np.zeros((1, 512))) == pytest.approx(5.0)
    assert dk.feature_distance(s, np.zeros((1, 512)), squared=True) == pytest.approx(25.0)
    assert dk.distill_loss(2.0, 4.0) == pytest.approx(3.0)


def test_entropy_minus_kl_is_label_entropy():
    rng = np.random.default_rng(0)
    y = rng.dirichlet(np.ones(6), size=4)
    p = rng.dirichlet(np.ones(6), size=4)
    h = -(y * np.log(y)).sum()
    diff = dk.entropy_loss(y, p, lambda_reg=0.0) - dk.kl_loss(y, p, lambda_reg=0.0)
    assert diff == pytest.approx(h, abs=1e-9)


def test_combination_block():
    e1 = np.zeros((1, 512), np.float32)
    e2 = np.zeros((1, 512), np.float32)
    e1[0, :2] = [1, 2]
    e2[0, :2] = [2, 0]
    w1 = np.ones(512, np.float32)
    w2 = np.zeros(512, np.float32)
    w2[:2] = [0.5, 2.0]
    b = np.zeros(512, np.float32)
    b[0] = 1.0
    f = dk.combine_embeddings([e1, e2], [w1, w2], b)
    assert f.shape == (1, 512)
    assert f[0, 0] == 3.0 and f[0, 1] == 2.0

    swapped = dk.combine_embeddings([e2, e1], [w2, w1], b)
    assert np.array_equal(f, swapped)


def test_pruning_ladder_increases():
    counts = [dk.trainable_params("ref-student", 45, k) for k in (3, 4, 5, 6)]
    assert counts == sorted(counts) and len(set(counts)) == 4


def test_dataset_round_trip(tmp_path):
    index = dk.synth(tmp_path / "corpus", num_classes=3, per_class=5, size=16, seed=1)
    assert len(index) == 15
    assert index.class_counts() == [5, 5, 5]
    again = dk.scan_dataset(tmp_path / "corpus", 16, 16)
    assert again.fingerprint() == index.fingerprint()

    train, test = dk.split_dataset(index, 0.2, seed=3)
    assert len(train) == 3 and len(test) == 12
    assert len(dk.augment_rotations(train)) == 12
    assert dk.augment_rotations(train).samples[-1].sample_id.endswith("#r270")


def test_feature_cache(tmp_path):
    rng = np.random.default_rng(1)
    entries = {f"id{i}": rng.standard_normal(512).astype(np.float32) for i in range(5)}
    path = tmp_path / "f.fch"
    dk.write_feature_cache(path, entries, bytes(range(16)))
    back, fingerprint = dk.read_feature_cache(path)
    assert fingerprint == bytes(range(16))
    assert set(back) == set(entries)
    for key, v in entries.items():
        assert np.array_equal(back[key], v)

    raw = bytearray(path.read_bytes())
    raw[0:4] = b"NOPE"
    bad = tmp_path / "bad.fch"
    bad.write_bytes(bytes(raw))
    with pytest.raises(dk.CacheMagicError):
        dk.read_feature_cache(bad)
    with pytest.raises(dk.NotFoundError):
        dk.read_feature_cache(tmp_path / "missing.fch")


def test_config_errors_surface(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"dataset": {"rooot": "x"}}))
    with pytest.raises(dk.ConfigError, match="dataset.rooot"):
        dk.run_experiment(cfg)


def test_small_experiment(tmp_path):
    tiny = {"name": "tiny", "stage_widths": [4, 8], "stage_depths": [1, 1]}
    cfg = {
        "dataset": {"root": str(tmp_path / "corpus"), "resolution": [16, 16, 3], "train_fraction": 0.5},
        "synth": {"num_classes": 2, "per_class": 4, "resolution": [16, 16, 3]},
        "model": tiny,
        "train": {"epochs": 1, "batch_size": 8, "learning_rate": 1e-3},
        "experiment": {"name": "py", "phase": "baseline", "out_dir": str(tmp_path / "out")},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    results = dk.run_experiment(path)
    assert [r["name"] for r in results] == ["student"]
    assert 0.0 <= results[0]["accuracy_mean"] <= 1.0



def test_model_forward_and_weights(tmp_path):
    model = dk.Model.build("ref-student", num_classes=5, seed=2, size=16, blocks_kept=3)
    assert model.name == "ref-student-3B"
    images = np.random.default_rng(0).random((2, 16, 16, 3), dtype=np.float32)
    out = model.forward(images)
    assert out["logits"].shape == (2, 5)
    assert out["embedding"].shape == (2, dk.EMBED_DIM)
    np.testing.assert_allclose(out["probabilities"].sum(axis=1), 1.0, rtol=1e-5)

    model.save(tmp_path / "m.dkwt")
    again = dk.Model.load(tmp_path / "m.dkwt")
    assert np.array_equal(again.forward(images)["logits"], out["logits"])
    assert again.trainable_params == model.trainable_params
