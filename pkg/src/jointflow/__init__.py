"""Joint piecewise-homography optical flow and temporally consistent labelling."""
from .energy import EnergyBreakdown, EnergyContext, Problem, total_energy
from .geometry import FundamentalMatrix, estimate_fundamental
from .inference import run_joint_estimation
from .model import (BoundaryLabel, EnergyConfig, FlowField, GrayImage, Homography, LabelProbMap,
                    MotionField, OcclusionState, SemanticClassTable, SuperpixelSegmentation,
                    dense_flow, validate_config)

__version__ = "0.1.0"
