"""Python bindings for the docdet document text detector."""

import json

import numpy as np

from . import _docdet
from ._docdet import ConfigError, Error, IoError, edit_score, iou

__all__ = [
    "ConfigError",
    "Error",
    "IoError",
    "Model",
    "detection_f1",
    "edit_score",
    "heatmaps",
    "iou",
    "parameter_count",
    "synth_page",
]


def _dump(cfg):
    return json.dumps(cfg) if cfg else ""


def synth_page(seed, spec=None):
    """Returns (image HxW float32 in [0,1], list of regular word boxes (x0, y0, x1, y1))."""
    return _docdet.synth_page(seed, _dump(spec))


def heatmaps(seed, spec=None):
    """Ground-truth region, affinity and special maps of a synthetic page, shape 3xHxW."""
    return _docdet.heatmaps(seed, _dump(spec))


def detection_f1(preds, gts, iou_threshold=0.5):
    """Per-page box lists in, precision / recall / f1 dict out."""
    return _docdet.detection_f1(preds, gts, iou_threshold)


def parameter_count(config=None):
    return _docdet.parameter_count(_dump(config))


class Model:
    """U-Net detector with sigmoid region, affinity and special outputs."""

    def __init__(self, native):
        self._m = native

    @classmethod
    def build(cls, config=None, seed=0):
        return cls(_docdet.Model.build(_dump(config), seed))

    @classmethod
    def load(cls, path):
        return cls(_docdet.Model.load(path))

    def save(self, path):
        self._m.save(path)

    @property
    def config(self):
        return json.loads(self._m.config_json)

    @property
    def parameter_count(self):
        return self._m.parameter_count

    def predict_maps(self, image):
        return self._m.predict_maps(np.asarray(image, dtype=np.float32))

    def detect(self, image, postprocess=None):
        return self._m.detect(np.asarray(image, dtype=np.float32), _dump(postprocess))

    def train(self, page_seeds, spec=None, train=None):
        """Trains on synthetic pages in place; returns the per-epoch mean loss."""
        return self._m.train(list(page_seeds), _dump(spec), _dump(train))
