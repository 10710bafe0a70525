"""Three-stage orchestration: background, video sketch, guided generation.

Stage 1 asks the chat planner for a background-only description and renders
it (text-to-image then image-to-video by default, direct text-to-video as
the alternative). Stage 2 tags and detects the background, asks the planner
for per-frame foreground boxes conditioned on those detections, generates
one sprite per object ("An image of {name}."), segments it, and composites
the video sketch. Stage 3 encodes the sketch, pushes it to an intermediate
schedule step with seeded noise, and denoises from there.

Every stage hands its artifacts to the next one through disk (8-bit PNG
frames), so a cached stage and a fresh stage feed later stages bit-identical
inputs. Stage caching keys on the hash of the stage's config slice, template
IDs, and upstream artifact hashes; the manifest records everything needed to
audit or reproduce the run.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import (
    LatentVideo,
    PixelVideo,
    decode,
    encode,
    latent_shape,
    load_frames,
    save_frames,
)
from .compositor import (
    VideoSketch,
    assemble_sketch,
    extract_sprite,
    load_sketch,
    resample_nearest,
    save_sketch,
)
from .errors import ConfigError, PlanError
from .gateway import ModelGateway, RemoteDenoiser
from .manifest import ManifestBuilder, hash_paths, canonical_hash, verify_manifest
from .planner import (
    BBox,
    build_background_prompt,
    build_plan_prompt,
    derive_object_specs,
    fallback_plan,
    interpolate_trajectory,
    load_plan,
    parse_layout_plan,
    save_plan,
    select_alpha,
    template_id,
    validate_plan,
)
from .schedule import InversionConfig, forward_noise, inversion_timestep, make_schedule, stream_rng
from .solver import GaussianDenoiser, sample_from

logger = logging.getLogger(__name__)

BACKGROUND_STRATEGIES = ("t2i_then_i2v", "direct_t2v")
STATIC_CAMERA_SUFFIX = " Static camera."


@dataclass
class RunConfig:
    """Everything one run needs, mirrored verbatim into the manifest."""

    video_prompt: str
    frame_count: int = 16
    width: int = 64
    height: int = 64
    fps: float = 8.0
    background_strategy: str = "t2i_then_i2v"
    alpha: float | str = "llm_selected"
    backend_range: tuple[float, float] = (0.5, 0.8)
    solver: str = "dpmpp2"
    num_steps: int | None = None
    grid: str = "uniform_t"
    codec: str = "identity"
    seed: int = 0
    schedule_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    schedule_kind: str = "linear"
    denoiser: str = "gaussian"
    denoiser_mu: float = 0.0
    denoiser_sigma: float = 1.0
    use_fallback_planner: bool = False
    fallback_objects: list[tuple[str, int, str]] | None = None
    max_plan_step: float = 0.25
    sprite_parallelism: int = 4

    def __post_init__(self):
        if not str(self.video_prompt).strip():
            raise ConfigError("video prompt must be nonempty")
        if self.frame_count < 2:
            raise ConfigError(f"frame count must be >= 2, got {self.frame_count}")
        if self.width < 1 or self.height < 1:
            raise ConfigError("frame dimensions must be positive")
        if self.background_strategy not in BACKGROUND_STRATEGIES:
            raise ConfigError(
                f"background strategy must be one of {BACKGROUND_STRATEGIES}"
            )
        if self.solver not in ("dpmpp2", "ddpm"):
            raise ConfigError(f"solver must be dpmpp2 or ddpm, got {self.solver!r}")
        if self.denoiser not in ("gaussian", "remote"):
            raise ConfigError(f"denoiser must be gaussian or remote: {self.denoiser!r}")
        lo, hi = self.backend_range
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigError(f"backend range must lie inside (0, 1): [{lo}, {hi}]")
        if isinstance(self.alpha, str):
            if self.alpha not in ("llm_selected", "auto"):
                raise ConfigError(
                    f"alpha must be a number, 'llm_selected' or 'auto': {self.alpha!r}"
                )
            self.alpha = "llm_selected"
        elif not 0.0 < float(self.alpha) < 1.0:
            raise ConfigError(f"fixed alpha must lie in (0, 1): {self.alpha}")

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["backend_range"] = list(self.backend_range)
        if self.fallback_objects is not None:
            doc["fallback_objects"] = [list(t) for t in self.fallback_objects]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "backend_range" in doc:
            doc["backend_range"] = tuple(doc["backend_range"])
        if doc.get("fallback_objects") is not None:
            doc["fallback_objects"] = [
                (str(n), int(c), str(d)) for n, c, d in doc["fallback_objects"]
            ]
        return cls(**doc)


def _frame_rels(subdir: str, count: int) -> list[str]:
    return [f"{subdir}/frame_{i:05d}.png" for i in range(count)] \
        + [f"{subdir}/index.json"]


class Pipeline:
    """Runs the three stages against a configured gateway, with caching."""

    def __init__(self, cfg: RunConfig, gateway: ModelGateway,
                 out_dir: str | Path):
        self.cfg = cfg
        self.gateway = gateway
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.schedule = make_schedule(cfg.schedule_steps, cfg.beta_start,
                                      cfg.beta_end, cfg.schedule_kind)
        self.manifest = ManifestBuilder(
            self.out_dir, cfg.to_dict(),
            {name: template_id(name) for name in ("background", "plan", "alpha")},
        )
        self.manifest.doc["endpoints"] = {
            kind: ep.base_url for kind, ep in gateway.endpoints.items()
        }

    # -- plumbing -----------------------------------------------------------

    def _finish_record(self, name: str, input_hash: str, relpaths: list[str],
                       seeds: dict, started: float, call_mark: int,
                       consumed: list[str], extra: dict | None = None) -> dict:
        record = {
            "name": name,
            "input_hash": input_hash,
            "seeds": seeds,
            "cached": False,
            "elapsed_s": round(time.monotonic() - started, 6),
            "gateway_calls": [c.to_dict()
                              for c in self.gateway.call_log[call_mark:]],
            "consumed": {},
            "outputs": {},
        }
        for rel in consumed:
            self.manifest.consume(record, rel)
        record["outputs"] = hash_paths(self.out_dir, relpaths)
        if extra:
            record.update(extra)
        self.manifest.add(record)
        self.manifest.write()
        return record

    def _reuse(self, record: dict) -> None:
        logger.info("stage %s: inputs unchanged, reusing artifacts",
                    record["name"])
        self.manifest.add(record)
        self.manifest.write()

    def _chat(self, prompt: str, image=None) -> str:
        return self.gateway.ask(prompt, image=image)

    # -- stage 1: background --------------------------------------------------

    def stage1_background(self) -> PixelVideo:
        cfg = self.cfg
        input_hash = canonical_hash({
            "stage": "background",
            "prompt": cfg.video_prompt,
            "frame_count": cfg.frame_count,
            "size": [cfg.width, cfg.height],
            "strategy": cfg.background_strategy,
            "fps": cfg.fps,
            "seed": cfg.seed,
            "template": template_id("background"),
        })
        cached = self.manifest.cached_record("background", input_hash)
        if cached:
            self._reuse(cached)
            return load_frames(self.out_dir / "background")

        started = time.monotonic()
        mark = len(self.gateway.call_log)
        description = self._chat(build_background_prompt(cfg.video_prompt))
        render_prompt = description.strip() + STATIC_CAMERA_SUFFIX
        if cfg.background_strategy == "t2i_then_i2v":
            still = self.gateway.text_to_image(render_prompt, cfg.width,
                                               cfg.height, cfg.seed)
            video = self.gateway.image_to_video(still, render_prompt,
                                                cfg.frame_count, cfg.seed)
        else:
            video = self.gateway.text_to_video(render_prompt, cfg.frame_count,
                                               cfg.width, cfg.height, cfg.seed)
        video = PixelVideo(frames=video.frames, fps=cfg.fps)
        save_frames(video, self.out_dir / "background")
        self._finish_record(
            "background", input_hash,
            _frame_rels("background", cfg.frame_count),
            seeds={"seed": cfg.seed}, started=started, call_mark=mark,
            consumed=[], extra={"description": description},
        )
        return load_frames(self.out_dir / "background")

    # -- stage 2: video sketch ------------------------------------------------

    def _make_plan(self, background: PixelVideo):
        cfg = self.cfg
        if cfg.use_fallback_planner:
            specs = cfg.fallback_objects or derive_object_specs(cfg.video_prompt)
            raw = fallback_plan(cfg.video_prompt, cfg.frame_count, specs)
            response = None
        else:
            first = background.frames[0]
            labels = self.gateway.tag_image(first)
            detections = self.gateway.detect(first, labels)
            prompt = build_plan_prompt(cfg.video_prompt, detections,
                                       cfg.frame_count)
            response = self._chat(prompt, image=first)
            try:
                raw = parse_layout_plan(response, cfg.frame_count)
            except PlanError as exc:
                saved = self.out_dir / "plan_response.txt"
                saved.write_text(response)
                raise type(exc)(
                    f"{exc} (raw response saved to {saved})") from exc
        try:
            plan = validate_plan(raw, cfg.frame_count, cfg.max_plan_step)
        except PlanError as exc:
            if response is not None:
                saved = self.out_dir / "plan_response.txt"
                saved.write_text(response)
                raise type(exc)(
                    f"{exc} (raw response saved to {saved})") from exc
            raise
        return interpolate_trajectory(plan, cfg.frame_count)

    def _build_sprite(self, name: str, sprite_seed: int):
        cfg = self.cfg
        prompt = f"An image of {name}."
        image = self.gateway.text_to_image(prompt, cfg.width, cfg.height,
                                           sprite_seed)
        hits = self.gateway.detect(image, [name])
        box = hits[0].box if hits else BBox(0.0, 0.0, 1.0, 1.0)
        mask = self.gateway.segment(image, box)
        return extract_sprite(image, mask, source_prompt=prompt)

    def stage2_sketch(self, background: PixelVideo) -> VideoSketch:
        cfg = self.cfg
        bg_rels = _frame_rels("background", cfg.frame_count)
        input_hash = canonical_hash({
            "stage": "sketch",
            "prompt": cfg.video_prompt,
            "frame_count": cfg.frame_count,
            "fallback": cfg.use_fallback_planner,
            "fallback_objects": [list(t) for t in cfg.fallback_objects]
            if cfg.fallback_objects else None,
            "max_plan_step": cfg.max_plan_step,
            "seed": cfg.seed,
            "template": template_id("plan"),
            "background": hash_paths(self.out_dir, bg_rels),
        })
        cached = self.manifest.cached_record("sketch", input_hash)
        if cached:
            self._reuse(cached)
            return load_sketch(self.out_dir / "sketch")

        started = time.monotonic()
        mark = len(self.gateway.call_log)
        background = resample_nearest(background, cfg.frame_count)
        plan = self._make_plan(background)

        names = list(plan.objects)
        seeds = {name: cfg.seed + 101 + i for i, name in enumerate(names)}
        if names:
            workers = min(self.gateway.parallelism, cfg.sprite_parallelism,
                          len(names))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                built = list(pool.map(
                    lambda name: self._build_sprite(name, seeds[name]), names))
            sprites = dict(zip(names, built))
        else:
            sprites = {}

        sketch = assemble_sketch(background, sprites, plan)
        save_sketch(sketch, self.out_dir / "sketch")
        save_plan(plan, self.out_dir / "sketch" / "plan.json")
        rels = _frame_rels("sketch", cfg.frame_count) \
            + ["sketch/sketch.json", "sketch/plan.json"]
        self._finish_record(
            "sketch", input_hash, rels,
            seeds={"seed": cfg.seed, "sprites": seeds},
            started=started, call_mark=mark, consumed=bg_rels,
        )
        return load_sketch(self.out_dir / "sketch")

    # -- stage 3: guided generation -------------------------------------------

    def _resolve_alpha(self, alpha_override: float | None) -> tuple[str, float]:
        cfg = self.cfg
        if alpha_override is not None:
            return "fixed", float(alpha_override)
        if cfg.alpha == "llm_selected":
            value = select_alpha(cfg.video_prompt, cfg.backend_range,
                                 llm=self._chat)
            return "llm_selected", value
        return "fixed", float(cfg.alpha)

    def _denoiser(self):
        cfg = self.cfg
        if cfg.denoiser == "remote":
            return RemoteDenoiser(gateway=self.gateway)
        return GaussianDenoiser(schedule=self.schedule, mu=cfg.denoiser_mu,
                                sigma=cfg.denoiser_sigma)

    def stage3_generate(self, sketch: VideoSketch,
                        alpha_override: float | None = None,
                        subdir: str = "final",
                        record_name: str = "generate") -> PixelVideo:
        cfg = self.cfg
        sketch_rels = _frame_rels("sketch", cfg.frame_count) \
            + ["sketch/sketch.json", "sketch/plan.json"]
        input_hash = canonical_hash({
            "stage": record_name,
            "alpha": alpha_override if alpha_override is not None else cfg.alpha,
            "backend_range": list(cfg.backend_range),
            "solver": cfg.solver,
            "num_steps": cfg.num_steps,
            "grid": cfg.grid,
            "codec": cfg.codec,
            "seed": cfg.seed,
            "schedule": [cfg.schedule_steps, cfg.beta_start, cfg.beta_end,
                         cfg.schedule_kind],
            "denoiser": [cfg.denoiser, cfg.denoiser_mu, cfg.denoiser_sigma],
            "template": template_id("alpha"),
            "sketch": hash_paths(self.out_dir, sketch_rels),
        })
        cached = self.manifest.cached_record(record_name, input_hash)
        if cached:
            self._reuse(cached)
            if cached.get("alpha_resolved") is not None and subdir == "final":
                self.manifest.set_alpha(cached["alpha_mode"],
                                        cached["alpha_resolved"],
                                        cached["t_inv"], cfg.backend_range)
                self.manifest.write()
            return load_frames(self.out_dir / subdir)

        started = time.monotonic()
        mark = len(self.gateway.call_log)
        remote = self.gateway if cfg.codec == "remote" else None
        z0 = encode(sketch.frames, cfg.codec, gateway=remote)

        mode, requested = self._resolve_alpha(alpha_override)
        inversion = InversionConfig(alpha_ratio=requested,
                                    backend_range=cfg.backend_range,
                                    seed=cfg.seed)
        resolved = inversion.clamped_alpha
        t_inv = inversion_timestep(inversion, self.schedule)
        logger.info("%s: alpha %s -> %.3f, start step %d/%d", record_name,
                    mode, resolved, t_inv, self.schedule.num_steps)

        z_t = forward_noise(z0, t_inv, self.schedule, cfg.seed)
        z_hat = sample_from(z_t, t_inv, self._denoiser(), self.schedule,
                            kind=cfg.solver, seed=cfg.seed,
                            num_steps=cfg.num_steps, grid=cfg.grid,
                            conditioning=cfg.video_prompt)
        final = decode(z_hat, cfg.codec, gateway=remote, fps=cfg.fps)
        save_frames(final, self.out_dir / subdir)

        rels = _frame_rels(subdir, cfg.frame_count)
        if subdir == "final":
            plan, _ = load_plan(self.out_dir / "sketch" / "plan.json")
            save_plan(plan, self.out_dir / "plan.json", alpha=resolved)
            rels = rels + ["plan.json"]
            self.manifest.set_alpha(mode, resolved, t_inv, cfg.backend_range)
        self._finish_record(
            record_name, input_hash, rels,
            seeds={"seed": cfg.seed}, started=started, call_mark=mark,
            consumed=sketch_rels,
            extra={"alpha_mode": mode, "alpha_resolved": resolved,
                   "t_inv": t_inv},
        )
        return load_frames(self.out_dir / subdir)

    # -- entry points ---------------------------------------------------------

    def run(self) -> tuple[PixelVideo, dict]:
        background = self.stage1_background()
        sketch = self.stage2_sketch(background)
        final = self.stage3_generate(sketch)
        self.manifest.write()
        return final, self.manifest.doc

    def baseline(self) -> tuple[PixelVideo, dict]:
        """Direct generation: pure-noise initialization, no sketch guidance."""
        cfg = self.cfg
        if cfg.codec == "remote":
            raise ConfigError("baseline mode needs a local codec")
        input_hash = canonical_hash({
            "stage": "baseline",
            "frame_count": cfg.frame_count,
            "size": [cfg.width, cfg.height],
            "solver": cfg.solver,
            "num_steps": cfg.num_steps,
            "grid": cfg.grid,
            "codec": cfg.codec,
            "seed": cfg.seed,
            "schedule": [cfg.schedule_steps, cfg.beta_start, cfg.beta_end,
                         cfg.schedule_kind],
            "denoiser": [cfg.denoiser, cfg.denoiser_mu, cfg.denoiser_sigma],
        })
        cached = self.manifest.cached_record("baseline", input_hash)
        if cached:
            self._reuse(cached)
            return load_frames(self.out_dir / "final"), self.manifest.doc

        started = time.monotonic()
        mark = len(self.gateway.call_log)
        shape = latent_shape(cfg.frame_count, cfg.height, cfg.width, cfg.codec)
        data = np.empty(shape)
        for f in range(shape[0]):
            data[f] = stream_rng(cfg.seed, 2, f).standard_normal(shape[1:])
        z_init = LatentVideo(data=data, codec_id=cfg.codec)
        t_inv = self.schedule.num_steps
        z_hat = sample_from(z_init, t_inv, self._denoiser(), self.schedule,
                            kind=cfg.solver, seed=cfg.seed,
                            num_steps=cfg.num_steps, grid=cfg.grid,
                            conditioning=cfg.video_prompt)
        final = decode(z_hat, cfg.codec, fps=cfg.fps)
        save_frames(final, self.out_dir / "final")
        self._finish_record(
            "baseline", input_hash, _frame_rels("final", cfg.frame_count),
            seeds={"seed": cfg.seed}, started=started, call_mark=mark,
            consumed=[], extra={"t_inv": t_inv},
        )
        return load_frames(self.out_dir / "final"), self.manifest.doc

    def sweep(self, alphas: list[float]) -> dict:
        """Stage-3 ablation over a noising-ratio grid, sharing stages 1-2."""
        if not alphas:
            raise ConfigError("sweep needs at least one alpha")
        background = self.stage1_background()
        sketch = self.stage2_sketch(background)
        remote = self.gateway if self.cfg.codec == "remote" else None
        z_sketch = encode(sketch.frames, self.cfg.codec, gateway=remote)
        denom = float(np.linalg.norm(z_sketch.data))

        summary = {}
        for alpha in alphas:
            tag = f"{alpha:g}"
            final = self.stage3_generate(
                sketch, alpha_override=alpha,
                subdir=f"sweep/alpha_{tag}/final",
                record_name=f"generate[alpha={tag}]",
            )
            z_final = encode(final, self.cfg.codec, gateway=remote)
            distance = float(np.linalg.norm(z_final.data - z_sketch.data)) / denom
            inversion = InversionConfig(alpha_ratio=alpha,
                                        backend_range=self.cfg.backend_range,
                                        seed=self.cfg.seed)
            summary[tag] = {
                "alpha": inversion.clamped_alpha,
                "t_inv": inversion_timestep(inversion, self.schedule),
                "sketch_distance": distance,
            }
        import json as _json

        (self.out_dir / "sweep" / "sweep.json").write_text(
            _json.dumps(summary, indent=2))
        self.manifest.write()
        return summary

    def verify(self) -> dict:
        return verify_manifest(self.out_dir)
