"""Similarity-based multi-class object counting on synthetic shapes."""

import json

from . import _core
from ._core import (
    Model,
    SimcoError,
    cli,
    detect_blobs,
    extract_features,
    feature_dim,
    generate_dataset,
    mae,
    nmae,
    triplet_loss,
)

__all__ = [
    "Model",
    "SimcoError",
    "affinity_propagation",
    "build_manifest",
    "cli",
    "count_image",
    "detect_blobs",
    "extract_features",
    "feature_dim",
    "generate_dataset",
    "generate_image",
    "mae",
    "nmae",
    "preference_search",
    "triplet_loss",
]


def _dump(obj):
    if obj is None:
        return ""
    return obj if isinstance(obj, str) else json.dumps(obj)


def generate_image(config=None, seed=0, index=0):
    """Returns (record dict, HxWx3 uint8 array)."""
    record, raster = _core.generate_image(_dump(config), seed, index)
    return json.loads(record), raster


def build_manifest(config=None, seed=0):
    return json.loads(_core.build_manifest(_dump(config), seed))


def affinity_propagation(descriptors, preference, damping=0.5, max_iter=200, convergence_iter=15):
    return json.loads(_core.affinity_propagation(descriptors, preference, damping, max_iter, convergence_iter))


def preference_search(descriptors, seeds, steps=64):
    return json.loads(_core.preference_search(descriptors, list(seeds), steps))


def count_image(raster, model, record=None, config=None, seeds=(), fallback_on_inseparable=False):
    """Runs detect -> embed -> cluster -> count on one image and returns the report dict."""
    return json.loads(
        _core.count_image(raster, _dump(record), model, _dump(config), [list(s) for s in seeds],
                          fallback_on_inseparable)
    )
