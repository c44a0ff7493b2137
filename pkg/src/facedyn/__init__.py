"""Facial expression recognition from 4D face scans via cross-domain dynamic images."""

__version__ = "0.1.0"

from .augmentation import AugmentationPlan, augment_dataset, augment_example, magnify_motion
from .classifier import ClassifierModel, load_checkpoint, predict_proba, save_checkpoint, train
from .collaboration import collaborate, evaluate, final_prediction, kfold_split
from .dynamic import DynamicImage, compute_dynamic_image, rank_pool_coefficients, rank_pool_exact
from .errors import FaceDynError, StageError
from .imageops import ImageSequence, clahe_enhance, cross_domain_fuse
from .mesh import Dataset, FaceMesh, LandmarkSet, ScanSequence, generate_views, load_mesh
from .render import CameraSpec, DomainImage, render_depth, render_texture
from .synthetic import SyntheticSpec, generate_dataset

__all__ = [
    "AugmentationPlan", "CameraSpec", "ClassifierModel", "Dataset", "DomainImage",
    "DynamicImage", "FaceDynError", "FaceMesh", "ImageSequence", "LandmarkSet",
    "ScanSequence", "StageError", "SyntheticSpec", "augment_dataset", "augment_example",
    "clahe_enhance", "collaborate", "compute_dynamic_image", "cross_domain_fuse", "evaluate",
    "final_prediction", "generate_dataset", "generate_views", "kfold_split", "load_checkpoint",
    "load_mesh", "magnify_motion", "predict_proba", "rank_pool_coefficients", "rank_pool_exact",
    "render_depth", "render_texture", "save_checkpoint", "train",
]
