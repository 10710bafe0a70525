"""Command-line interface: run, sweep, baseline, inspect."""

from __future__ import annotations

import contextlib
import json
import logging
import sys
from pathlib import Path

import click

from .errors import ManifestError, SketchvidError
from .gateway import ModelGateway, endpoints_from_env
from .manifest import verify_manifest
from .mockserver import MockConfig, MockModelServer
from .pipeline import Pipeline, RunConfig


def _load_config_file(path: str) -> dict:
    raw = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(raw.decode("utf-8"))
    return json.loads(raw.decode("utf-8"))


def _parse_size(value: str) -> tuple[int, int]:
    try:
        w, h = value.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise click.BadParameter(f"size must look like 64x64, got {value!r}") from exc


def _parse_alpha(value: str):
    if value in ("auto", "llm_selected"):
        return "llm_selected"
    try:
        return float(value)
    except ValueError as exc:
        raise click.BadParameter(f"alpha must be a number or 'auto': {value!r}") from exc


def _parse_objects(specs: tuple[str, ...]):
    out = []
    for spec in specs:
        parts = spec.split(":")
        if len(parts) != 3:
            raise click.BadParameter(
                f"object spec must be name:count:direction, got {spec!r}")
        out.append((parts[0], int(parts[1]), parts[2]))
    return out or None


_shared = [
    click.option("--prompt", help="video text prompt"),
    click.option("--frames", type=int, help="frame count"),
    click.option("--size", help="frame size as WxH, e.g. 64x64"),
    click.option("--alpha", "alpha_", help="noising ratio: number or 'auto'"),
    click.option("--alpha-range", help="backend range lo,hi"),
    click.option("--strategy", type=click.Choice(["t2i_i2v", "t2v"]),
                 help="background generator strategy"),
    click.option("--solver", type=click.Choice(["dpmpp2", "ddpm"])),
    click.option("--steps", type=int, help="solver step count"),
    click.option("--grid", type=click.Choice(["uniform_t", "uniform_logsnr"])),
    click.option("--codec", help="identity | patchify:p | remote"),
    click.option("--seed", type=int),
    click.option("--schedule-steps", type=int, help="total diffusion steps T"),
    click.option("--fallback-planner", is_flag=True, default=None,
                 help="use the deterministic planner instead of the chat model"),
    click.option("--object", "objects", multiple=True,
                 help="fallback object spec name:count:direction (repeatable)"),
    click.option("--mock", is_flag=True, default=False,
                 help="serve all models from the in-process mock server"),
    click.option("--base-url", help="base URL for all model services"),
    click.option("--out", "out_dir", default=None,
                 help="output directory [default: out]"),
    click.option("--config", "config_file", type=click.Path(exists=True),
                 help="TOML or JSON config file (flags override it)"),
    click.option("-v", "--verbose", is_flag=True, default=False),
]


def shared_options(fn):
    for opt in reversed(_shared):
        fn = opt(fn)
    return fn


def _build_config(kwargs) -> tuple[dict, dict]:
    """Merge config file and flags; returns (run config dict, cli settings)."""
    doc = {}
    if kwargs.get("config_file"):
        doc = _load_config_file(kwargs["config_file"])
    cli = {
        "mock": doc.pop("mock", False) or kwargs.get("mock", False),
        "base_url": kwargs.get("base_url") or doc.pop("base_url", None),
        "out_dir": kwargs.get("out_dir") or doc.pop("out", None) or "out",
    }
    strategy_map = {"t2i_i2v": "t2i_then_i2v", "t2v": "direct_t2v"}
    overrides = {
        "video_prompt": kwargs.get("prompt"),
        "frame_count": kwargs.get("frames"),
        "alpha": _parse_alpha(kwargs["alpha_"]) if kwargs.get("alpha_") else None,
        "backend_range": tuple(float(v) for v in kwargs["alpha_range"].split(","))
        if kwargs.get("alpha_range") else None,
        "background_strategy": strategy_map.get(kwargs.get("strategy")),
        "solver": kwargs.get("solver"),
        "num_steps": kwargs.get("steps"),
        "grid": kwargs.get("grid"),
        "codec": kwargs.get("codec"),
        "seed": kwargs.get("seed"),
        "schedule_steps": kwargs.get("schedule_steps"),
        "use_fallback_planner": kwargs.get("fallback_planner"),
        "fallback_objects": _parse_objects(kwargs.get("objects") or ()),
    }
    if kwargs.get("size"):
        overrides["width"], overrides["height"] = _parse_size(kwargs["size"])
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return doc, cli


@contextlib.contextmanager
def _gateway_for(cfg: RunConfig, cli: dict):
    if cli["mock"]:
        mock_cfg = MockConfig(
            schedule_steps=cfg.schedule_steps,
            beta_start=cfg.beta_start,
            beta_end=cfg.beta_end,
            schedule_kind=cfg.schedule_kind,
            denoiser_mu=cfg.denoiser_mu,
            denoiser_sigma=cfg.denoiser_sigma,
        )
        with MockModelServer(mock_cfg) as server:
            yield ModelGateway(server.endpoints())
    else:
        if not cli["base_url"]:
            raise click.UsageError("--base-url is required without --mock")
        yield ModelGateway(endpoints_from_env(cli["base_url"]))


def _configure_logging(verbose: bool):
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@click.group()
def main():
    """Sketch-guided text-to-video generation pipeline."""


@main.command(name="run")
@shared_options
def run_cmd(**kwargs):
    """Run all three stages end to end."""
    _configure_logging(kwargs.pop("verbose"))
    doc, cli = _build_config(kwargs)
    try:
        cfg = RunConfig.from_dict(doc)
        with _gateway_for(cfg, cli) as gateway:
            pipeline = Pipeline(cfg, gateway, cli["out_dir"])
            _, manifest = pipeline.run()
    except SketchvidError as exc:
        raise click.ClickException(str(exc)) from exc
    alpha = manifest["alpha"]
    click.echo(f"resolved alpha: {alpha['resolved']:.3f} "
               f"(mode {alpha['mode']}, start step {alpha['t_inv']})")
    for rec in manifest["stages"]:
        state = "cached" if rec["cached"] else f"{rec['elapsed_s']:.2f}s"
        click.echo(f"stage {rec['name']}: {state}, "
                   f"{len(rec['outputs'])} artifacts")
    click.echo(f"final frames: {Path(cli['out_dir']) / 'final'}")


@main.command(name="sweep")
@click.option("--alphas", required=True,
              help="comma-separated noising ratios, e.g. 0.5,0.7,0.9")
@shared_options
def sweep_cmd(alphas, **kwargs):
    """Run stages 1-2 once, then stage 3 for each noising ratio."""
    _configure_logging(kwargs.pop("verbose"))
    doc, cli = _build_config(kwargs)
    grid = [float(v) for v in alphas.split(",")]
    try:
        cfg = RunConfig.from_dict(doc)
        with _gateway_for(cfg, cli) as gateway:
            pipeline = Pipeline(cfg, gateway, cli["out_dir"])
            summary = pipeline.sweep(grid)
    except SketchvidError as exc:
        raise click.ClickException(str(exc)) from exc
    for tag, row in summary.items():
        click.echo(f"alpha {tag}: start step {row['t_inv']}, "
                   f"sketch distance {row['sketch_distance']:.4f}")
    click.echo(f"sweep summary: {Path(cli['out_dir']) / 'sweep' / 'sweep.json'}")


@main.command(name="baseline")
@shared_options
def baseline_cmd(**kwargs):
    """Direct generation from pure noise (no sketch guidance)."""
    _configure_logging(kwargs.pop("verbose"))
    doc, cli = _build_config(kwargs)
    try:
        cfg = RunConfig.from_dict(doc)
        with _gateway_for(cfg, cli) as gateway:
            pipeline = Pipeline(cfg, gateway, cli["out_dir"])
            _, manifest = pipeline.baseline()
    except SketchvidError as exc:
        raise click.ClickException(str(exc)) from exc
    rec = manifest["stages"][-1]
    click.echo(f"baseline: {len(rec['outputs'])} artifacts in "
               f"{Path(cli['out_dir']) / 'final'}")


@main.command(name="inspect")
@click.argument("manifest_path", type=click.Path(exists=True))
def inspect_cmd(manifest_path):
    """Verify a run manifest and print its stage summary."""
    path = Path(manifest_path)
    out_dir = path.parent if path.is_file() else path
    try:
        summary = verify_manifest(out_dir)
    except ManifestError as exc:
        click.echo(f"FAIL: {exc}", err=True)
        sys.exit(1)
    doc = json.loads((out_dir / "manifest.json").read_text())
    for rec in doc["stages"]:
        state = "cached" if rec.get("cached") else "fresh"
        click.echo(f"stage {rec['name']}: {state}, "
                   f"{len(rec.get('outputs', {}))} artifacts, "
                   f"{len(rec.get('gateway_calls', []))} calls")
    click.echo(f"OK: {summary['artifacts']} artifacts verified")
    if summary["alpha"]:
        click.echo(f"alpha {summary['alpha']['resolved']} "
                   f"(start step {summary['alpha']['t_inv']})")


if __name__ == "__main__":
    main()
