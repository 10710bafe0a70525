"""Sketch-guided text-to-video generation.

The pipeline plans a background, plans foreground object trajectories as
bounding boxes, composites segmented sprites into a per-frame video sketch,
and then steers a diffusion backbone by noising the sketch up to an
intermediate step and denoising from there. All neural models are external
services; this package owns the diffusion math, the planning protocol, the
compositing, and the orchestration.
"""

from .codec import LatentVideo, PixelVideo, decode, encode
from .compositor import Sprite, VideoSketch, assemble_sketch, extract_sprite, place_sprite
from .planner import (
    BBox,
    DetectedObject,
    FramePlan,
    LayoutPlan,
    build_background_prompt,
    build_plan_prompt,
    fallback_plan,
    interpolate_trajectory,
    parse_layout_plan,
    select_alpha,
    validate_plan,
)
from .schedule import (
    InversionConfig,
    NoiseSchedule,
    forward_noise,
    inversion_timestep,
    make_schedule,
)
from .solver import (
    Denoiser,
    GaussianDenoiser,
    SolverCoefficients,
    drift,
    sample_from,
    step_ddpm,
    step_dpmpp2,
)
from .gateway import ModelGateway, RemoteDenoiser, ServiceEndpoint, endpoints_from_env
from .manifest import verify_manifest
from .mockserver import MockConfig, MockModelServer
from .pipeline import Pipeline, RunConfig

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "DetectedObject",
    "Denoiser",
    "FramePlan",
    "GaussianDenoiser",
    "InversionConfig",
    "LatentVideo",
    "LayoutPlan",
    "MockConfig",
    "MockModelServer",
    "ModelGateway",
    "NoiseSchedule",
    "Pipeline",
    "PixelVideo",
    "RemoteDenoiser",
    "RunConfig",
    "ServiceEndpoint",
    "SolverCoefficients",
    "Sprite",
    "VideoSketch",
    "endpoints_from_env",
    "verify_manifest",
    "assemble_sketch",
    "build_background_prompt",
    "build_plan_prompt",
    "decode",
    "drift",
    "encode",
    "extract_sprite",
    "fallback_plan",
    "forward_noise",
    "interpolate_trajectory",
    "inversion_timestep",
    "make_schedule",
    "parse_layout_plan",
    "place_sprite",
    "sample_from",
    "select_alpha",
    "step_ddpm",
    "step_dpmpp2",
    "validate_plan",
]
