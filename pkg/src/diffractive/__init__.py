"""Diffractive optical networks: linear-optics model, capacity analysis and training."""

from .capacity import (build_jacobian, estimate_dimension, generate_basis, predicted_dimension,
                       rank_case)
from .data import (DatasetSpec, DetectorLayout, gen_class_map, make_detector_layout,
                   make_spatial_dataset)
from .field import ApertureMap, ComplexGrid, GridSpec, PropagationOperator, propagate, restrict
from .learn import Metrics, TrainConfig, evaluate, train
from .network import NetworkSpec, SurfaceParams, assemble_operator, backward, forward

__version__ = "0.1.0"
