"""Gaze target tracking and gaze depth-level estimation for transparent displays."""

from .spatial_index import (GazePoint, Quadtree, QuadtreeConfig, Widget, WidgetError,
                            brute_force_hits, build, resolve_target)
from .gaze_geometry import (DepthLabel, GazeDataset, GeneratorConfig, generate_dataset,
                            intersect_plane, triangulate_depth)
from .depth_model import (DepthModelParams, TrainConfig, evaluate, forward, init_params,
                          load_weights, loss_and_grads, save_weights, train)
from .pipeline import GazePipeline, OutputRecord, UpdatePolicy, replay_from_file, run

__version__ = "0.1.0"
