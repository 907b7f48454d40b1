"""Command-line entry point for the auto-labeling pipeline.

Exit codes: 0 on success, 2 on validation/configuration errors, 3 on
numerical failures inside the estimation code.
"""

from __future__ import annotations

import json
import logging
import sys

import click

from .io import (
    ConfigError,
    ObjectScript,
    ParseError,
    SynthConfig,
    ValidationError,
    generate_scenario,
)
from .metrics import UndefinedMetricError, format_report
from .session import (
    Session,
    apply_supervision,
    decision_from_dict,
    run_stage,
)
from .stats import DegenerateMatrixError
from .tracker.filter import NumericalFailure
from .types import ObjectClass

log = logging.getLogger(__name__)

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

_VALIDATION_ERRORS = (ValidationError, ConfigError, ParseError, ValueError,
                      KeyError, FileNotFoundError, json.JSONDecodeError)
_NUMERICAL_ERRORS = (NumericalFailure, DegenerateMatrixError,
                     UndefinedMetricError, FloatingPointError)


def _guarded(fn):
    """Translate known failure classes into the documented exit codes."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _NUMERICAL_ERRORS as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)
        except _VALIDATION_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def synth_config_from_dict(obj: dict, seed: int | None) -> SynthConfig:
    """Build a generator config from the "synth" section of a config file."""
    synth = dict(obj.get("synth", {}))
    objects = []
    for spec in synth.pop("objects", []):
        spec = dict(spec)
        objects.append(ObjectScript(
            ObjectClass(spec.pop("class")),
            spec.pop("birth_t"), spec.pop("death_t"),
            tuple(tuple(w) for w in spec.pop("waypoints")),
            lam=spec.pop("lam", 4.0),
            size=tuple(spec["size"]) if spec.pop("size", None) else None))
    if "ego_waypoints" in synth and synth["ego_waypoints"] is not None:
        synth["ego_waypoints"] = tuple(tuple(w) for w in synth["ego_waypoints"])
    if seed is not None:
        synth["seed"] = seed
    try:
        return SynthConfig(objects=tuple(objects), **synth)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


session_option = click.option("--session", "session_dir", required=True,
                              type=click.Path(), help="Session directory.")
config_option = click.option("--config", "config_path", default=None,
                             type=click.Path(exists=True),
                             help="JSON config file.")
seed_option = click.option("--seed", default=None, type=int,
                           help="Random seed override.")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose):
    """Offline auto-labeling workbench for radar detections."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING)


@main.command()
@session_option
@config_option
@seed_option
@_guarded
def synth(session_dir, config_path, seed):
    """Generate a synthetic recording into a new session."""
    cfg = _load_json(config_path) if config_path else {}
    scfg = synth_config_from_dict(cfg, seed)
    recording, labels, gt = generate_scenario(scfg)
    Session.create(session_dir, recording, labels=labels, gt=gt,
                   config={k: v for k, v in cfg.items() if k != "synth"})
    click.echo(f"session created at {session_dir} "
               f"({len(recording.scans)} scans, {len(gt)} objects)")


def _stage_command(name, stage, help_text):
    @main.command(name=name, help=help_text)
    @session_option
    @config_option
    @seed_option
    @_guarded
    def cmd(session_dir, config_path, seed):
        del seed  # stages are deterministic; seeding applies to synth only
        session = Session.load(session_dir)
        overrides = None
        if config_path:
            section = "tracker" if stage == "track" else "annotate"
            overrides = _load_json(config_path).get(section)
        run_stage(session, stage, overrides)
        click.echo(f"stage {stage} complete")
    cmd.__name__ = name.replace("-", "_")
    return cmd


_stage_command("track", "track", "Run the tracker over the session recording.")
_stage_command("finalize", "finalize",
               "Finalize trajectories from the supervision decision.")
_stage_command("annotate", "annotate",
               "Annotate all detections against the finalized objects.")
_stage_command("eval", "evaluate", "Score every pipeline stage.")


@main.command("supervise-import")
@session_option
@click.option("--decision", "decision_path", required=True,
              type=click.Path(exists=True), help="Decision JSON file.")
@_guarded
def supervise_import(session_dir, decision_path):
    """Import a supervision decision from a JSON file."""
    session = Session.load(session_dir)
    decision = decision_from_dict(_load_json(decision_path))
    apply_supervision(session, decision)
    click.echo(f"decision stored ({len(decision.units())} objects)")


@main.command()
@session_option
@_guarded
def report(session_dir):
    """Print the evaluation report table."""
    session = Session.load(session_dir)
    click.echo(format_report(session.report()))


@main.command()
@session_option
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8420, show_default=True, type=int)
@_guarded
def serve(session_dir, host, port):
    """Serve the supervision HTTP API for one session."""
    import uvicorn

    from .service import create_app

    app = create_app(Session.load(session_dir))
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
