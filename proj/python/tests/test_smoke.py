import math
import pathlib

import numpy as np
import pytest

import mffd

FIXTURES = pathlib.Path(__file__).resolve().parents[2] / "tests" / "fixtures"


def test_npr_of_nearest_upsample_is_zero():
    small = np.random.default_rng(0).integers(0, 256, (4, 4, 3), dtype=np.uint8)
    up = small.repeat(2, axis=0).repeat(2, axis=1)
    out = mffd.npr(up, 2)
    assert out.shape == (9, 8, 8)
    assert not out.any()


def test_npr_matches_numpy():
    img = np.random.default_rng(1).integers(0, 256, (8, 8, 3), dtype=np.uint8)
    x = img.astype(np.float64) / 255.0
    ref = x[0::2, 0::2, 0]
    right = x[0::2, 1::2, 0] - ref
    got = mffd.npr(img, 2)
    # channel 0 is the right-hand neighbour of the red grid anchor
    assert np.array_equal(got[0][0::2, 0::2], right)
    assert np.array_equal(got[0][1::2, 1::2], right)


def test_ppm_round_trip(tmp_path):
    img = mffd.surrogate_image("real", 16, 3)
    assert img.shape == (16, 16, 3) and img.dtype == np.uint8
    mffd.save_ppm(tmp_path / "a.ppm", img)
    assert np.array_equal(mffd.load_ppm(tmp_path / "a.ppm"), img)


def test_embeddings_golden_fixture(tmp_path):
    dim, recs = mffd.read_embeddings(FIXTURES / "two_records.femb")
    assert dim == 2
    assert list(recs) == ["a", "img/b.ppm"]
    assert recs["a"].tolist() == [1.0, -2.5]
    mffd.write_embeddings(tmp_path / "x.femb", dim, recs)
    assert (tmp_path / "x.femb").read_bytes() == (FIXTURES / "two_records.femb").read_bytes()


def test_stub_embed_is_unit_length():
    v = mffd.stub_embed(mffd.surrogate_image("fake_nearest", 16, 2), 32)
    assert v.shape == (32,)
    assert math.isclose(float(np.linalg.norm(v.astype(np.float64))), 1.0, rel_tol=1e-6)


def test_metrics():
    assert mffd.average_precision([0.9, 0.1], [1, 0]) == 1.0
    t = mffd.calibrate_threshold([0.2, 0.4, 0.6, 0.8], [0, 0, 1, 1])
    assert mffd.balanced_accuracy([0.2, 0.4, 0.6, 0.8], [0, 0, 1, 1], t) == 1.0


def test_errors_carry_codes():
    with pytest.raises(mffd.Error) as e:
        mffd.resolve_config(overrides=["model.widht=3"])
    assert e.value.code == "InvalidConfig"
    with pytest.raises(mffd.Error) as e:
        mffd.read_embeddings("/nonexistent.femb")
    assert e.value.code == "Io"


def test_fit_save_load_score(tmp_path):
    manifest = mffd.write_surrogate(tmp_path / "data", side=16, train=6, val=4, test=3)
    overrides = [
        "model.image_size=16", "model.width=4", "model.n_fadc_blocks=1", "model.embed_dim=32",
        "model.d_k=8", "model.d_v=8", "model.heads=2", "model.stage1_channels=4",
        "model.stage2_channels=8", "model.grad_source=sobel", "train.epochs=1", "train.batch=4",
        "train.warmup_iters=1",
    ]
    run = mffd.Run.fit(manifest, overrides)
    run.save(tmp_path / "run")
    back = mffd.Run.load(tmp_path / "run")
    assert back.threshold == run.threshold
    assert back.config == run.config
    report = back.evaluate(manifest, "test")
    assert report["n_real"] == 3 and report["n_fake"] == 6
    imgs = [mffd.surrogate_image("real", 16, s) for s in range(3)]
    assert back.score(imgs) == run.score(imgs)
