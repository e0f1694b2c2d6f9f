"""Deformation of surface-aligned Gaussian splat scenes.

Thin wrappers over the compiled ``_core`` module. Configs and handle specs
are plain dicts with the same keys as the CLI's JSON files.
"""

import json

import numpy as np

from . import _core
from ._core import Scene, SplatDeformError, pck3d, save_splats

__all__ = [
    "Scene",
    "SplatDeformError",
    "load_scene",
    "make_scene",
    "deform",
    "adapt",
    "evaluate",
    "pck3d",
    "save_splats",
]


def _dump(obj):
    return "" if obj is None else json.dumps(obj)


def load_scene(path, config=None, with_laplacian=True):
    return _core.load_scene(str(path), _dump(config), with_laplacian)


def make_scene(means, quaternions, scales, opacity, config=None, with_laplacian=True):
    """Builds a scene from arrays; quaternions are (w, x, y, z)."""
    return _core.make_scene(
        np.asarray(means, dtype=float),
        np.asarray(quaternions, dtype=float),
        np.asarray(scales, dtype=float),
        np.asarray(opacity, dtype=float),
        _dump(config),
        with_laplacian,
    )


def deform(scene, handles, config=None):
    """Returns adapted kernels, displaced means and the parsed report."""
    out = _core.deform(scene, _dump(handles), _dump(config))
    out["report"] = json.loads(out.pop("report_json"))
    return out


def adapt(scene, displaced, config=None):
    return _core.adapt(scene, np.asarray(displaced, dtype=float), _dump(config))


def evaluate(scene, handles, config=None):
    return json.loads(_core.evaluate(scene, _dump(handles), _dump(config)))
