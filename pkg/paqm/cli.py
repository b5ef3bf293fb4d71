"""
paqm command line.

Exit codes: 0 success, 2 usage/config, 3 audio or file I/O, 4 pipeline.
Logs go to stderr; reports go to stdout or the requested files.
"""

import functools
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import click
import numpy as np
import pandas as pd
from PIL import Image
from pydantic import ValidationError

from paqm import __version__, config
from paqm.core.exceptions import AudioIOError, ConfigError, PaqmError
from paqm.core.utils import atomic_write_bytes, atomic_write_text, to_json
from paqm.database.manifest import load_manifest
from paqm.database.schemas import InteractionTableDocument, SalienceMappingModel
from paqm.services.evaluation import evaluate_db
from paqm.services.pipeline import analyze_manifest, analyze_pair, build_compare_report, heatmap_matrix
from paqm.services.salience_mapping import InteractionTable, analyze_interactions, load_model, train_mapping
from paqm.services.synthetic import synthesize_db
from paqm.settings import PipelineConfig, load_config, nested_overrides

logger = logging.getLogger(__name__)


def handle_errors(func):
    """Map PaqmError to its exit code with a one-line message on stderr"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except PaqmError as e:
            logger.debug("Command failed", exc_info=True)
            click.echo(f"Error: {e}", err=True)
            sys.exit(e.exit_code)
    return wrapper


def _config(ctx: click.Context, **flat: Any) -> PipelineConfig:
    return load_config(ctx.obj.get("config_path"), nested_overrides(flat))


def _comment_header(cfg: PipelineConfig) -> str:
    echo = cfg.echo()
    return (
        f"# {echo['tool']} {echo['version']}\n"
        f"# config: {json.dumps(echo['config'], sort_keys=True, separators=(',', ':'))}\n"
    )


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise AudioIOError(f"Cannot read {path}: {e}") from e


def _read_model(path: str) -> SalienceMappingModel:
    return load_model(_read_text(path))


def _read_interactions(path: str) -> InteractionTableDocument:
    text = _read_text(path)
    try:
        return InteractionTableDocument.model_validate(json.loads(text))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    except ValidationError as e:
        location = ".".join(str(part) for part in e.errors()[0]["loc"])
        raise ConfigError(f"{path}: invalid interactions document at '{location}': {e.errors()[0]['msg']}") from e


jobs_option = click.option("--jobs", "-j", type=int, default=None,
                           help="Parallel item pipelines (default: all cores).")


@click.group()
@click.version_option(__version__, prog_name=config.TOOL_NAME)
@click.option("--config", "config_path", type=str, default=None, envvar=config.CONFIG_ENV_VAR,
              help=f"Key-value config file (default: ${config.CONFIG_ENV_VAR}).")
@click.option("--verbose", "-v", count=True, help="-v for INFO, -vv for DEBUG.")
@click.pass_context
def main(ctx: click.Context, config_path: Optional[str], verbose: int):
    """Perceptual audio quality measurement with salience-gated cognitive effects."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr, force=True,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


@main.command()
@click.argument("ref_path")
@click.argument("sut_path")
@click.option("--model", "model_path", default=None, help="Trained mapping model for a BAQ prediction.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable report on stdout.")
@click.option("--align/--no-align", default=None, help="Cross-correlation lag alignment.")
@click.option("--match-gain/--no-match-gain", default=None, help="RMS level alignment of the SUT.")
@click.option("--settling", type=float, default=None, help="Settling interval in seconds.")
@click.pass_context
@handle_errors
def compare(ctx, ref_path, sut_path, model_path, as_json, align, match_gain, settling):
    """Compare a SUT recording against its REF."""
    cfg = _config(ctx, **{
        "alignment.align_lag": align,
        "alignment.match_gain": match_gain,
        "metrics.settling_interval": settling,
    })
    model = _read_model(model_path) if model_path else None
    analysis = analyze_pair(ref_path, sut_path, cfg)
    report = build_compare_report(analysis, cfg, model, ref_path=ref_path, sut_path=sut_path)

    if as_json:
        click.echo(to_json(report.model_dump(mode="json")), nl=False)
        return
    click.echo(f"REF {ref_path}\nSUT {sut_path}")
    click.echo(f"lag {report.alignment.lag_samples} samples, gain {report.alignment.gain_applied_db:+.2f} dB, "
               f"{report.alignment.n_frames} frames")
    for name, value in report.movs.items():
        click.echo(f"  {name:<14} {value:12.6f}")
    for name, value in report.cems.items():
        click.echo(f"  {config.CEM_LABELS.get(name, name):<14} {value:12.6f}")
    if report.baq is not None:
        click.echo(f"  {'BAQ':<14} {report.baq:12.2f}")


@main.command("analyze-interactions")
@click.argument("manifest_path")
@click.option("--out-dir", "-o", required=True, help="Directory for interactions.csv and interactions.json.")
@click.option("--threshold", type=float, default=None, help="Selection threshold on |r| (default 0.6).")
@jobs_option
@click.pass_context
@handle_errors
def analyze_interactions_cmd(ctx, manifest_path, out_dir, threshold, jobs):
    """CEM x DM salience correlation table and selected interactions."""
    cfg = _config(ctx, **{"mapping.threshold": threshold})
    features = analyze_manifest(load_manifest(manifest_path), cfg, jobs=jobs)
    table = analyze_interactions(features, cfg.mapping, cfg.dm_names())

    out_dir = Path(out_dir)
    matrix = pd.DataFrame(table.r, index=[config.CEM_LABELS.get(c, c) for c in table.cems], columns=table.dms)
    matrix.index.name = "CEM"
    atomic_write_text(out_dir / "interactions.csv",
                      _comment_header(cfg) + matrix.to_csv(float_format="%.6f", lineterminator="\n"))
    document = table.to_document(cfg.mapping.threshold, cfg.echo())
    atomic_write_text(out_dir / "interactions.json", to_json(document.model_dump(mode="json")))

    click.echo(matrix.round(3).to_string())
    click.echo(f"Selected (|r| >= {cfg.mapping.threshold}):")
    for s in table.selected:
        click.echo(f"  {config.CEM_LABELS.get(s.cem, s.cem)} -> {s.dm} ({'+' if s.sign > 0 else '-'}, r={s.r:.3f})")


@main.command()
@click.argument("manifest_path")
@click.option("--interactions", "interactions_path", required=True, help="interactions.json from analyze-interactions.")
@click.option("--out", "out_path", required=True, help="Model file to write.")
@click.option("--variant", type=click.Choice(sorted(config.VARIANT_CEMS)), default=None,
              help="Which cognitive effects may gate the mapping.")
@jobs_option
@click.pass_context
@handle_errors
def train(ctx, manifest_path, interactions_path, out_path, variant, jobs):
    """Train the salience-gated BAQ mapping."""
    cfg = _config(ctx, **{"mapping.variant": variant})
    document = _read_interactions(interactions_path)
    features = analyze_manifest(load_manifest(manifest_path), cfg, jobs=jobs)
    selected = InteractionTable.from_document(document).selected
    model = train_mapping(features, selected, cfg.mapping, cfg.dm_names(), metadata=cfg.echo())
    atomic_write_text(out_path, to_json(model.model_dump(mode="json")))
    click.echo(f"Wrote {out_path}: {len(model.gates)} gates, training RMSE {model.training.rmse:.3f}, "
               f"{'converged' if model.training.converged else 'NOT converged'} after {model.training.rounds} rounds")


@main.command()
@click.argument("manifest_path")
@click.option("--model", "model_paths", multiple=True, required=True, help="Model file; repeat to compare systems.")
@click.option("--pool-conditions/--per-item", default=None, help="Correlate per-condition means instead of items.")
@click.option("--out", "out_path", default=None, help="Write the JSON report here.")
@click.option("--json", "as_json", is_flag=True, help="JSON report on stdout.")
@jobs_option
@click.pass_context
@handle_errors
def evaluate(ctx, manifest_path, model_paths, pool_conditions, out_path, as_json, jobs):
    """Correlate predicted BAQ with MUSHRA scores after cubic pre-mapping."""
    cfg = _config(ctx, **{"mapping.pool_conditions": pool_conditions})
    models: Dict[str, SalienceMappingModel] = {}
    for path in model_paths:
        name = Path(path).stem
        while name in models:
            name += "_"
        models[name] = _read_model(path)
    report = evaluate_db(load_manifest(manifest_path), models, cfg, jobs=jobs)
    document = to_json(report.model_dump(mode="json"))
    if out_path:
        atomic_write_text(out_path, document)
    if as_json:
        click.echo(document, nl=False)
        return

    click.echo(f"{'system':<24} {'R':>7} {'CI95':>17} {'R raw':>7} {'n':>5}")
    for system in report.systems:
        click.echo(f"{system.system:<24} {system.r:7.4f} [{system.ci95[0]:6.3f}, {system.ci95[1]:6.3f}] "
                   f"{system.r_raw:7.4f} {system.n_items:5d}")
        for condition in system.conditions:
            click.echo(f"    {condition.condition:<20} n={condition.n_items:<4} "
                       f"MUSHRA {condition.subjective:6.2f}  predicted {condition.mapped:6.2f}")


def _pgm_bytes(matrix: np.ndarray, comment: str) -> bytes:
    """Min-max normalized 8-bit PGM, highest band on top"""
    low, high = float(np.min(matrix)), float(np.max(matrix))
    scaled = np.zeros_like(matrix) if high <= low else (matrix - low) / (high - low)
    pixels = np.flipud(np.round(scaled * 255.0)).astype(np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(pixels).save(buffer, format="PPM")
    magic, rest = buffer.getvalue().split(b"\n", 1)
    return magic + b"\n" + comment.encode("ascii", "replace") + rest


@main.command("export-heatmap")
@click.argument("ref_path")
@click.argument("sut_path")
@click.option("--metric", "which", type=click.Choice(config.HEATMAP_METRICS), required=True)
@click.option("--out", "out_path", required=True, help="CSV matrix, one row per band (lowest first).")
@click.option("--image", "image_path", default=None, help="Also write a grayscale PGM image.")
@click.option("--align/--no-align", default=None, help="Cross-correlation lag alignment.")
@click.pass_context
@handle_errors
def export_heatmap(ctx, ref_path, sut_path, which, out_path, image_path, align):
    """Export a band x frame time/frequency matrix of one metric."""
    cfg = _config(ctx, **{"alignment.align_lag": align})
    analysis = analyze_pair(ref_path, sut_path, cfg)
    matrix = heatmap_matrix(analysis, which)
    header = _comment_header(cfg) + f"# metric: {which}; rows: bands low to high; columns: frames\n"
    body = pd.DataFrame(matrix).to_csv(header=False, index=False, float_format="%.9g", lineterminator="\n")
    atomic_write_text(out_path, header + body)
    if image_path:
        atomic_write_bytes(image_path, _pgm_bytes(matrix, header))
    click.echo(f"Wrote {matrix.shape[0]}x{matrix.shape[1]} {which} matrix to {out_path}")


@main.command()
@click.argument("out_dir")
@click.option("--items", "n_items", type=int, default=40, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--duration", type=float, default=2.0, show_default=True, help="Seconds per item.")
@click.option("--sample-rate", type=click.Choice(["44100", "48000"]), default="48000", show_default=True)
@click.option("--gate-weight", type=float, default=-0.35, show_default=True,
              help="True beta-VAR gate weight on EHS.")
@click.option("--noise-sigma", type=float, default=3.0, show_default=True, help="Rating noise (MUSHRA points).")
@jobs_option
@click.pass_context
@handle_errors
def synthesize(ctx, out_dir, n_items, seed, duration, sample_rate, gate_weight, noise_sigma, jobs):
    """Generate a synthetic listening-test database with known ground truth."""
    cfg = _config(ctx)
    path = synthesize_db(out_dir, n_items=n_items, seed=seed, sample_rate=int(sample_rate), duration=duration,
                         gate_weight=gate_weight, noise_sigma=noise_sigma, cfg=cfg, jobs=jobs)
    click.echo(f"Wrote {path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.pass_context
@handle_errors
def serve(ctx, host, port):
    """Serve the HTTP API."""
    import uvicorn

    from paqm.main import create_app

    uvicorn.run(create_app(_config(ctx)), host=host, port=port)


if __name__ == "__main__":
    main()
