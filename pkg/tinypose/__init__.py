"""
TinyPose estimates the 6D poses of many object instances in one depth image.

Pose hypotheses are drawn per class by matching four-point bases of the
observed cloud against the object model, where the bases are kept from
straddling predicted object boundaries. Every hypothesis is described by
five alignment features and scored by a gradient boosted tree ensemble. A
scene-level selection then keeps the best-scoring set of poses that respects
per-class instance counts and does not let objects interpenetrate.

A synthetic bin scene simulator provides ground truth and simulated
prediction maps for training and evaluation.

Usage example:

>>> from tinypose import SceneSpec, generate_scene, simulate_predictions
>>> from tinypose.meshes import make_box
>>> spec = SceneSpec([make_box((0.05, 0.05, 0.05))], {1: 4}, seed=7)
>>> scene = generate_scene(spec)
>>> len(scene.placements)
4
>>> maps = simulate_predictions(scene)
>>> maps.num_classes
1
"""

from .config import Config, load_config
from .geometry import MeshModel, PointCloud, RigidTransform, adi_distance
from .pipeline import PoseEstimator
from .scenegen import SceneSpec, generate_scene, simulate_predictions
from .version import __version__

__all__ = ('Config', 'load_config', 'MeshModel', 'PointCloud',
           'RigidTransform', 'adi_distance', 'PoseEstimator', 'SceneSpec',
           'generate_scene', 'simulate_predictions')
