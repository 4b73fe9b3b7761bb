"""Radar-inertial odometry with Gaussian scan models and an error-state EKF."""

from .dataset import Dataset, DatasetError, Trajectory, load_dataset, read_trajectory, write_dataset, write_trajectory
from .egovel import EgovelEstimate, EgovelocityError, RadarScan, RansacConfig, estimate_egovelocity
from .ekf import EkfState, ImuSample, NoiseParams, egovel_update, init_filter, kalman_update, propagate, scanmatch_update
from .evaluation import RelativeErrors, absolute_trajectory_error, evaluate_relative_errors
from .gaussian_model import FitConfig, GaussianModel, ModelFitError, fit_model, init_model, model_loss
from .geom import PoseSE3
from .odometry import OdometryConfig, OdometryResult, run_odometry
from .scan_match import KeyframeCriteria, MatchConfig, MatchResult, keyframe_due, match_loss, register_scan
from .synth import SynthConfig, generate_synthetic

__version__ = "0.1.0"
