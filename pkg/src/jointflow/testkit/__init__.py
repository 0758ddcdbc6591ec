"""Synthetic scenes with exact ground truth and a reference energy evaluator."""
from .instances import RandomInstance, random_instance, random_segmentation, scene_state
from .oracle import oracle_energy
from .suite import SceneRun, SuiteConfig, run_scene
from .scenes import (Camera, Region, SceneSpec, SyntheticScene, TEMPLATES, make_scene,
                     scene_label_maps, template_scene)

__all__ = [
    "Camera", "Region", "SceneSpec", "SyntheticScene", "TEMPLATES", "make_scene",
    "oracle_energy", "RandomInstance", "random_instance", "random_segmentation", "scene_label_maps", "scene_state", "template_scene",
    "SceneRun", "SuiteConfig", "run_scene",
]
