"""stereoforge: end-to-end trainable 2D-to-3D stereo view synthesis.

A from-scratch reverse-mode autodiff engine, a differentiable
disparity-selection layer, classical depth-image-based rendering,
a configurable convolutional synthesizer, SGD training with bit-exact
checkpoint resume, synthetic stereo data with ground truth, an
evaluation harness, and stereo output formats.
"""

from .autodiff import (GraphError, NonFiniteError, ShapeError, Tensor,
                       no_grad)
from .data import (LayerSpec, SceneSpec, StereoDataset, StereoPair,
                   disparity_tint, load_stereo_dir, parse_scene_spec,
                   preprocess, synth_dataset, synth_stereo)
from .dibr import (CameraModel, block_match_disparity, depth_to_disparity,
                   disparity_render, fill_holes, fit_global_disparity,
                   gather_render)
from .estimators import BlockMatcher, GlobalShiftBaseline, StereoSynthesizer
from .evaluation import EvalReport, compare, mae, oracle_shift, worker_count
from .formats import anaglyph, side_by_side
from .imgio import bilinear_resize, read_image, to_uint8, write_image
from .network import (NetworkConfig, bilinear_deconv_kernel, build_network,
                      predict_right, synthesize_batches, upscale_full_res)
from .selection import (DisparityRange, DisparityVolume, expected_disparity,
                        logits_to_volume, selection_forward, shifted_stack)
from .training import (Checkpoint, CheckpointError, TrainConfig,
                       checkpoint_from_network, load_checkpoint, lr_schedule,
                       network_from_checkpoint, save_checkpoint, sgd_step,
                       train)

__version__ = "0.1.0"

__all__ = [
    "BlockMatcher", "CameraModel", "Checkpoint", "CheckpointError",
    "DisparityRange", "DisparityVolume", "EvalReport", "GlobalShiftBaseline",
    "GraphError", "LayerSpec", "NetworkConfig", "NonFiniteError", "SceneSpec",
    "ShapeError", "StereoDataset", "StereoPair", "StereoSynthesizer",
    "Tensor", "TrainConfig", "anaglyph", "bilinear_deconv_kernel",
    "bilinear_resize", "block_match_disparity", "build_network",
    "checkpoint_from_network", "compare", "depth_to_disparity",
    "disparity_render", "disparity_tint", "expected_disparity", "fill_holes",
    "fit_global_disparity", "gather_render", "load_checkpoint",
    "load_stereo_dir", "logits_to_volume", "lr_schedule", "mae", "no_grad",
    "oracle_shift", "parse_scene_spec", "predict_right", "preprocess",
    "read_image", "save_checkpoint", "selection_forward", "sgd_step",
    "shifted_stack", "side_by_side", "synth_dataset", "synth_stereo",
    "synthesize_batches", "to_uint8", "train", "upscale_full_res",
    "worker_count", "write_image",
]
