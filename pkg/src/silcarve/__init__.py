"""silcarve: category-level 3D shape models from 2D silhouettes.

Learns robust TSDF visual-hull prototypes and deformable basis-shape
point clouds from masks, keypoints and estimated cameras, and
reconstructs dense shape for novel instances from a single silhouette
plus camera. Includes the evaluation metrics and a synthetic ground
truth generator that make every stage testable.
"""

from .basis import (
    BasisConfig,
    BasisShapeModel,
    FitConfig,
    InstanceFit,
    fit_instance,
    learn_basis,
    normal_smoothness,
    soft_visual_hull_init,
    total_energy,
)
from .camera import OrthoCamera, project
from .cloud import PointCloud, TriMesh, estimate_normals, knn_mean_sq_dist
from .errors import DataError, NumericalError, SilcarveError, UsageError
from .evaluation import DepthMap, hausdorff_norm, render_depth, silhouette_iou, zmae
from .instance import Instance, KeypointSet, mirror_augment
from .nrsfm import NrsfmConfig, NrsfmModel, em_step, fit_nrsfm
from .prototype import (
    PrototypeCluster,
    PrototypeModel,
    cluster_instances,
    cone_tsdf,
    infer_dense_shape,
    learn_prototype,
    view_weights,
)
from .silhouette import ChamferField, SilhouetteMask, chamfer_field
from .synthetic import CameraLaw, SceneSpec, make_dataset, make_shape, render_mask, sample_cameras
from .volume import GridSpec, TsdfVolume, cube_grid, extract_isosurface, occupancy

__version__ = "0.1.0"

__all__ = [
    "BasisConfig",
    "BasisShapeModel",
    "CameraLaw",
    "ChamferField",
    "DataError",
    "DepthMap",
    "FitConfig",
    "GridSpec",
    "Instance",
    "InstanceFit",
    "KeypointSet",
    "NrsfmConfig",
    "NrsfmModel",
    "NumericalError",
    "OrthoCamera",
    "PointCloud",
    "PrototypeCluster",
    "PrototypeModel",
    "SceneSpec",
    "SilcarveError",
    "SilhouetteMask",
    "TriMesh",
    "TsdfVolume",
    "UsageError",
    "chamfer_field",
    "cluster_instances",
    "cone_tsdf",
    "cube_grid",
    "em_step",
    "estimate_normals",
    "extract_isosurface",
    "fit_instance",
    "fit_nrsfm",
    "hausdorff_norm",
    "infer_dense_shape",
    "knn_mean_sq_dist",
    "learn_basis",
    "learn_prototype",
    "make_dataset",
    "make_shape",
    "mirror_augment",
    "normal_smoothness",
    "occupancy",
    "project",
    "render_depth",
    "render_mask",
    "sample_cameras",
    "silhouette_iou",
    "soft_visual_hull_init",
    "total_energy",
    "view_weights",
    "zmae",
]
