import numpy as np
import pytest

import docdet


def test_synth_page_is_seeded():
    img, boxes = docdet.synth_page(3)
    again, same = docdet.synth_page(3)
    assert img.shape == (256, 256)
    assert img.dtype == np.float32
    assert 0.0 <= img.min() and img.max() <= 1.0
    assert boxes and boxes == same
    np.testing.assert_array_equal(img, again)
    for x0, y0, x1, y1 in boxes:
        assert 0 <= x0 < x1 <= 256 and 0 <= y0 < y1 <= 256


def test_spec_dict_and_errors():
    img, _ = docdet.synth_page(0, {"page_size": [128, 96]})
    assert img.shape == (96, 128)
    with pytest.raises(docdet.ConfigError):
        docdet.synth_page(0, {"page_size": [10, 300]})


def test_heatmaps_in_unit_range():
    maps = docdet.heatmaps(1)
    assert maps.shape == (3, 256, 256)
    assert maps.min() >= 0.0 and maps.max() <= 1.0
    assert maps[0].max() > 0.5


def test_metrics_hand_values():
    assert docdet.iou((0, 0, 2, 1), (1, 0, 3, 1)) == pytest.approx(1 / 3)
    r = docdet.detection_f1([[(0, 0, 10, 10), (20, 20, 30, 30)]], [[(0, 0, 10, 10)]])
    assert r["f1"] == pytest.approx(2 / 3)
    assert docdet.edit_score(["kitten"], ["sitting"]) == pytest.approx(4 / 7)


def test_model_roundtrip_and_detect(tmp_path):
    model = docdet.Model.build(seed=5)
    assert model.parameter_count == docdet.parameter_count() < 1_000_000
    assert model.config["level_channels"] == [16, 32, 32, 32]
    img, _ = docdet.synth_page(2, {"page_size": [100, 70]})
    maps = model.predict_maps(img)
    assert maps.shape == (3, 70, 100)
    assert ((maps > 0) & (maps < 1)).all()
    path = tmp_path / "m.ckpt"
    model.save(path)
    loaded = docdet.Model.load(path)
    np.testing.assert_array_equal(loaded.predict_maps(img), maps)
    for (x0, y0, x1, y1), score in model.detect(img):
        assert 0 <= x0 < x1 <= 100 and 0 <= y0 < y1 <= 70
        assert 0.0 < score <= 1.0
    with pytest.raises(docdet.IoError):
        docdet.Model.load(tmp_path / "missing.ckpt")


def test_train_reduces_loss():
    model = docdet.Model.build({"level_channels": [4, 6, 6, 8]}, seed=1)
    losses = model.train(
        range(4),
        {"page_size": [64, 64]},
        {"epochs": 4, "batch_size": 2, "learning_rate": 0.005, "adversarial_fraction": 0.0},
    )
    assert len(losses) == 4
    assert losses[-1] < losses[0]
