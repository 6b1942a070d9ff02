"""Neural signed distance fields from raw point clouds.

Fit an MLP distance field to a normal-free cloud with a pulling or
eikonal baseline plus a level set alignment term, extract triangle
meshes with marching cubes, and evaluate against ground truth.
"""

from .autodiff import FieldSample, ParamGradient, eval_field, loss_param_gradients
from .cloud import PointCloud, QueryBatch, knn, load_point_cloud, normalize, sample_queries
from .errors import (ConfigError, DegenerateBatchError, EvaluationError, GraphError,
                     ParseError, ProjectionError, SdfitError, TrainingError)
from .losses import (LossConfig, LossReport, adaptive_weight, alignment_loss,
                     consistency, eikonal_loss, neuralpull_loss, pull_projection,
                     total_loss)
from .metrics import (ConsistencyStats, EvalReport, FieldSlice, chamfer_l1,
                      consistency_stats, evaluate_reconstruction, normal_consistency,
                      slice_field)
from .model import ArchSpec, LinearField, SdfNetwork, init_network, load_network, save_network
from .shapes import AnalyticField, AnalyticShape, analytic_sdf, sample_surface, shape_from_name
from .surface import (GridSpec, TriangleMesh, export_mesh, extract_levels, field_of,
                      import_mesh, marching_cubes, sample_mesh)
from .training import Adam, FitResult, TrainConfig, TrainHistory, fit, step

__version__ = "0.1.0"

__all__ = [
    "AnalyticField", "AnalyticShape", "Adam", "ArchSpec", "ConfigError",
    "ConsistencyStats", "DegenerateBatchError", "EvalReport", "EvaluationError",
    "FieldSample", "FieldSlice", "FitResult", "GraphError", "GridSpec",
    "LinearField", "LossConfig", "LossReport", "ParamGradient", "ParseError",
    "PointCloud", "ProjectionError", "QueryBatch", "SdfNetwork", "SdfitError",
    "TrainConfig", "TrainHistory", "TrainingError", "TriangleMesh",
    "adaptive_weight", "alignment_loss", "analytic_sdf", "chamfer_l1",
    "consistency", "consistency_stats", "eikonal_loss", "eval_field",
    "evaluate_reconstruction", "export_mesh", "extract_levels", "field_of",
    "fit", "import_mesh", "init_network", "knn", "load_network",
    "load_point_cloud", "loss_param_gradients", "marching_cubes",
    "neuralpull_loss", "normal_consistency", "normalize", "pull_projection",
    "sample_mesh", "sample_queries", "sample_surface", "save_network",
    "shape_from_name", "slice_field", "step", "total_loss",
]
