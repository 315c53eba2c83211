"""Action recognition from dense-trajectory texture images.

Pipeline: variational optical flow -> particle advection -> per-segment
magnitude canvases -> small convolutional network.
"""

from .advect import AdvectParams, Trajectory, extract_trajectories, filter_trajectories
from .canvas import build_stack, normalize, render_canvas, resize_bilinear
from .cnn import CnnModel, NetworkConfig, extract_features, load_model, predict, save_model, train
from .dataset import SynthSpec, VideoRecord, load_video, plan_segments, split_dataset, synth_generate
from .errors import DataError, PipelineError
from .evaluation import ConfusionMatrix, evaluate, fit, report
from .flow import FlowField, FlowParams, compute_flow, flow_magnitude, warp_image
from .pipeline import PipelineConfig, load_config, run_pipeline

__version__ = "0.1.0"
