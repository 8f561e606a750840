"""MPCA-based domain adaptation for CNN damage localisation on guided-wave images."""
from .dataset import PLATE_DIMS, DomainDataset
from .dist_metrics import MetricsReport, build_histogram, compute_all
from .mpca import JointFitResult, ModeBasis, fit_basis, fit_joint, project, reconstruct
from .pipeline import ExperimentConfig, ExperimentReport, SplitSpec, halve_target, rmse, run_procedure, split
from .signal_lab import PlateScenario, build_domain
from .tensor_core import ShapeError, Tensor3

__version__ = "0.1.0"

__all__ = [
    "PLATE_DIMS", "DomainDataset", "MetricsReport", "build_histogram", "compute_all", "JointFitResult",
    "ModeBasis", "fit_basis", "fit_joint", "project", "reconstruct", "ExperimentConfig", "ExperimentReport",
    "SplitSpec", "halve_target", "rmse", "run_procedure", "split", "PlateScenario", "build_domain",
    "ShapeError", "Tensor3",
]
