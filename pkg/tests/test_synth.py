import json

import numpy as np
import pytest

from encpipe.core import load_clip_index, load_matrix
from encpipe.encoder import EncoderEnsemble
from encpipe.synth import SynthConfig, generate


def test_noiseless_self_consistency():
    w = generate(seed=1, n_train=300, n_test=100, n_voxels=30, layer_dims=8, ar_fraction=0.3,
                 n_ar_sources=5)
    for seg in (w.train, w.test):
        assert np.abs(w.reproduce_responses(seg.features) - seg.responses).max() < 1e-10
        assert np.abs(w.reproduce_labels(seg.responses) - seg.labels).max() < 1e-10


def test_same_seed_bit_identical():
    a = generate(seed=9, n_train=200, n_test=60, n_voxels=20, layer_dims=5, response_noise=0.3)
    b = generate(seed=9, n_train=200, n_test=60, n_voxels=20, layer_dims=5, response_noise=0.3)
    assert a.train.responses.tobytes() == b.train.responses.tobytes()
    assert a.test.labels.tobytes() == b.test.labels.tobytes()
    c = generate(seed=10, n_train=200, n_test=60, n_voxels=20, layer_dims=5, response_noise=0.3)
    assert a.train.responses.tobytes() != c.train.responses.tobytes()


def test_low_snr_regime():
    w = generate(seed=0, n_train=1000, n_test=50, n_voxels=30, layer_dims=10, response_noise=10.0)
    ens = EncoderEnsemble(n_folds=5).fit(w.train.features, w.train.responses, w.train.clips)
    assert ens.cv_accuracy_.mean() < 0.3


def test_standardized_with_train_stats():
    w = generate(seed=3, n_train=400, n_test=100, n_voxels=20, layer_dims=6, response_noise=1.0)
    np.testing.assert_allclose(w.train.responses.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(w.train.responses.std(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(w.train.labels.std(axis=0), 1.0, atol=1e-12)
    assert not np.allclose(w.test.responses.mean(axis=0), 0.0, atol=1e-12)


def test_planted_structure():
    w = generate(seed=4, n_train=200, n_test=50, n_voxels=40, layer_dims=[3, 4], n_layers=2,
                 ar_fraction=0.25, n_ar_sources=6, label_voxels="ar")
    t = w.truth
    assert t["ar_sources"].size == 6 and t["ar_targets"].size == 10
    assert not set(t["ar_sources"]) & set(t["ar_targets"])
    np.testing.assert_array_equal(t["label_voxels"], t["ar_targets"])
    assert w.train.features["layer1"].shape == (200, 4)
    assert len(w.train.clips.runs()) == 14


@pytest.mark.parametrize("bad", [{"n_layers": 2, "layer_dims": [1, 2, 3]}, {"ar_fraction": 1.0},
                                 {"label_source": "text"}, {"response_noise": -1},
                                 {"ar_fraction": 0.5, "n_ar_sources": 150}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)


def test_from_dict_rejects_unknown():
    with pytest.raises(ValueError, match="unknown"):
        SynthConfig.from_dict({"n_voxel": 3})
    cfg = SynthConfig.from_dict({"encoder_delays": [1, 2]})
    assert cfg.encoder_delays == (1, 2)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg


def test_write(tmp_path):
    w = generate(seed=2, n_train=100, n_test=40, n_voxels=10, layer_dims=4, n_labels=2)
    man = w.write(tmp_path)
    assert json.loads((tmp_path / "world.json").read_text())["format"] == "encpipe-synth/1"
    layers = json.loads((tmp_path / "train_layers.json").read_text())
    assert [e["layer_name"] for e in layers] == w.layer_names
    x = load_matrix(tmp_path / layers[0]["feature_path"])
    assert x.data.tobytes() == w.train.features["layer0"].tobytes()
    assert load_clip_index(tmp_path / "test_clips.csv") == w.test.clips
    enc = load_matrix(tmp_path / man["truth"]["enc_w0"]["path"])
    assert enc.data.tobytes() == w.truth["enc_w0"].tobytes()
