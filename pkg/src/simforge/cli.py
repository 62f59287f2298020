"""Command-line front end: build catalogs, describe scenes, generate and
refine tasks, run experiments, and render world states.

Exit codes: 0 success, 2 config error, 3 stage failure, 4 tests never
passed within budget.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import dsl
from .catalog import build_catalog, load_catalog, save_catalog
from .config import ForgeConfig, apply_overrides, load_config
from .correspond import MatchMode, correspond_scene
from .dsl import DslError, ScriptKind, parse
from .errors import ConfigError, ForgeError, StageError
from .generation import gen_sim_script, gen_task_definition, gen_test_script
from .llm import PrecomputedEmbeddings, open_provider
from .pipeline import experiment_run, pipeline_run, rebuild_reports
from .router import RouterMode, run_tests
from .scene import NO_OBJECT, SceneDescription, build_scene_description, load_bundle
from .sim import SimEnvironment, run_oracle_episode

MODE_CHOICES = tuple(m.value.replace("_", "-") for m in RouterMode)


def _fail(code: int, message: str):
    click.echo(message, err=True)
    sys.exit(code)


def _guarded(fn):
    """Map domain errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(2, f"config error: {exc}")
        except StageError as exc:
            _fail(3, f"failed {exc}")
        except (ForgeError, DslError) as exc:
            _fail(3, f"error: {exc}")

    return wrapper


def _config_option(fn):
    return click.option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="TOML config file; flags given here override its values.",
    )(fn)


def _llm_options(fn):
    opts = [
        click.option("--model", default=None, help="Chat model identifier."),
        click.option(
            "--llm",
            "llm_mode",
            type=click.Choice(["live", "record", "replay"]),
            default=None,
            help="Provider mode; record and replay need --cassette.",
        ),
        click.option(
            "--cassette",
            type=click.Path(),
            default=None,
            help="Recorded-reply store used by record and replay modes.",
        ),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _match_options(fn):
    opts = [
        click.option(
            "--match-mode",
            type=click.Choice([m.value for m in MatchMode]),
            default=None,
            help="How crops are matched to assets.",
        ),
        click.option(
            "--embeddings",
            "embeddings_path",
            type=click.Path(exists=True, dir_okay=False),
            default=None,
            help="Precomputed embedding table (embedding match mode).",
        ),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _config(config_path, **overrides) -> ForgeConfig:
    return apply_overrides(load_config(config_path), **overrides)


def _embeddings_for(cfg: ForgeConfig) -> PrecomputedEmbeddings | None:
    if cfg.match_mode != "embedding":
        return None
    if not cfg.embeddings:
        raise ConfigError("embedding match mode needs an embeddings table (--embeddings)")
    return PrecomputedEmbeddings.load(cfg.embeddings)


def _parse_script(path: str, kind: ScriptKind):
    return parse(Path(path).read_text(encoding="utf-8"), kind)


def _parse_modes(csv: str) -> list[RouterMode]:
    modes = []
    for name in csv.split(","):
        name = name.strip()
        if not name:
            continue
        try:
            modes.append(RouterMode.from_cli(name))
        except ValueError:
            raise ConfigError(f"unknown mode {name!r}; choose from {', '.join(MODE_CHOICES)}")
    if not modes:
        raise ConfigError("at least one mode is required")
    return modes


def _load_size_table(path: str | None) -> dict[str, tuple[float, float, float]]:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad size table {path}: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("size table must be a JSON object mapping urdf to [x, y, z]")
    table = {}
    for key, value in data.items():
        if not (isinstance(value, list) and len(value) == 3):
            raise ConfigError(f"size for {key!r} must be a 3-element list")
        table[key] = tuple(float(v) for v in value)
    return table


@click.group()
def main():
    """Turn one tabletop observation into a validated simulation task."""


# --- catalog ---------------------------------------------------------------


@main.group()
def catalog():
    """Asset catalog commands."""


@catalog.command("build")
@click.option(
    "--assets",
    "assets_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="JSONL of asset records to describe.",
)
@click.option(
    "--out",
    "out_path",
    required=True,
    type=click.Path(dir_okay=False),
    help="Destination catalog JSONL.",
)
@_config_option
@_llm_options
@_guarded
def catalog_build(assets_path, out_path, config_path, model, llm_mode, cassette):
    """Describe every asset's renders with the vision model."""
    cfg = _config(config_path, model=model, llm_mode=llm_mode, cassette=cassette)
    base = load_catalog(assets_path)
    provider = open_provider(cfg.llm_mode, cfg.cassette)
    built, failures = build_catalog(provider, list(base), cfg.model)
    save_catalog(built, out_path)
    for line in failures:
        click.echo(f"describe failed: {line}", err=True)
    click.echo(f"described {len(built) - len(failures)}/{len(built)} assets -> {out_path}")


# --- scene -----------------------------------------------------------------


@main.group()
def scene():
    """Scene comprehension commands."""


@scene.command("describe")
@click.option(
    "--bundle",
    "bundle_dir",
    required=True,
    type=click.Path(exists=True, file_okay=False),
    help="Scene bundle directory (image, depth, masks, calibration).",
)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option(
    "--clip-fraction",
    type=float,
    default=None,
    help="Symmetric quantile clipped from each axis when fitting boxes.",
)
@_config_option
@_guarded
def scene_describe(bundle_dir, out_dir, clip_fraction, config_path):
    """Project masks to 3D boxes and export per-object crops."""
    cfg = _config(config_path, clip_fraction=clip_fraction)
    bundle = load_bundle(bundle_dir)
    desc = build_scene_description(bundle, out_dir, cfg.clip_fraction)
    out_path = Path(out_dir) / "scene.json"
    desc.save(out_path)
    click.echo(f"{len(desc.objects)} objects -> {out_path}")


# --- correspondence --------------------------------------------------------


@main.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--out",
    "out_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="Matched scene destination (default: overwrite the input scene).",
)
@_match_options
@_config_option
@_llm_options
@_guarded
def correspond(
    scene_path, catalog_path, out_path, match_mode, embeddings_path,
    config_path, model, llm_mode, cassette,
):
    """Match every scene object to a catalog asset or NO_OBJECT."""
    cfg = _config(
        config_path, match_mode=match_mode, embeddings=embeddings_path,
        model=model, llm_mode=llm_mode, cassette=cassette,
    )
    scn = SceneDescription.load(scene_path)
    cat = load_catalog(catalog_path)
    mode = MatchMode(cfg.match_mode)
    embeddings = _embeddings_for(cfg)
    provider = None if mode is MatchMode.EMBEDDING else open_provider(cfg.llm_mode, cfg.cassette)
    matched, results = correspond_scene(
        scn, cat, mode, provider=provider, embeddings=embeddings, model=cfg.model
    )
    dest = Path(out_path or scene_path)
    matched.save(dest)
    matches_path = dest.with_name("matches.json")
    matches_path.write_text(
        json.dumps([r.to_json() for r in results], indent=2) + "\n", encoding="utf-8"
    )
    n = sum(1 for o in matched.objects if o.matched_asset not in (None, NO_OBJECT))
    click.echo(f"matched {n}/{len(matched.objects)} objects -> {dest}")


# --- generation ------------------------------------------------------------


@main.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option(
    "--image",
    "image_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Scene photo for prompts (default: the scene's recorded image).",
)
@_config_option
@_llm_options
@_guarded
def gen(scene_path, catalog_path, out_dir, image_path, config_path, model, llm_mode, cassette):
    """Generate the task definition, simulation script, and test battery."""
    cfg = _config(config_path, model=model, llm_mode=llm_mode, cassette=cassette)
    scn = SceneDescription.load(scene_path)
    cat = load_catalog(catalog_path)
    provider = open_provider(cfg.llm_mode, cfg.cassette)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw_dir = out / "raw"

    image = image_path
    if image is None and scn.image_ref and Path(scn.image_ref).exists():
        image = scn.image_ref

    taskdef = gen_task_definition(scn, cat, provider, cfg.model, image_path=image, raw_dir=raw_dir)
    taskdef.save(out / "taskdef.json")
    sim = gen_sim_script(taskdef, scn, cat, provider, cfg.model, image_path=image, raw_dir=raw_dir)
    (out / "sim.task").write_text(sim.source, encoding="utf-8")
    tests = gen_test_script(taskdef, sim.source, provider, cfg.model, raw_dir=raw_dir)
    (out / "tests.tests").write_text(tests.source, encoding="utf-8")
    click.echo(f"{taskdef.task_name} -> {out}")


# --- direct script execution -----------------------------------------------


@main.command()
@click.option("--sim", "sim_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--tests", "tests_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--fuel", type=int, default=None)
@click.option(
    "--size-table",
    "size_table_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON object mapping urdf strings to [x, y, z] sizes in meters.",
)
@_config_option
@_guarded
def run(sim_path, tests_path, seed, fuel, size_table_path, config_path):
    """Run a test battery against a simulation script and print the report."""
    cfg = _config(config_path, seed=seed, fuel=fuel)
    sim = _parse_script(sim_path, ScriptKind.SIMULATION)
    tests = _parse_script(tests_path, ScriptKind.TEST_BATTERY)
    size_table = _load_size_table(size_table_path)
    report = run_tests(
        sim, tests, lambda: SimEnvironment(size_table=dict(size_table)),
        seed=cfg.seed, fuel=cfg.fuel,
    )
    click.echo(report.render())
    if not report.passed:
        sys.exit(4)


@main.command("eval")
@click.option("--sim", "sim_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--runs", "n_runs", type=int, default=None, help="Oracle episodes to run.")
@click.option("--seed", type=int, default=None)
@click.option("--fuel", type=int, default=None)
@click.option(
    "--size-table",
    "size_table_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON object mapping urdf strings to [x, y, z] sizes in meters.",
)
@click.option(
    "--save-state",
    "state_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="Write the last clean episode's final world state JSON here.",
)
@_config_option
@_guarded
def eval_cmd(sim_path, n_runs, seed, fuel, size_table_path, state_path, config_path):
    """Run seeded oracle episodes on a simulation script and report rewards."""
    cfg = _config(config_path, oracle_runs=n_runs, seed=seed, fuel=fuel)
    sim = _parse_script(sim_path, ScriptKind.SIMULATION)
    size_table = _load_size_table(size_table_path)

    rewards: list[float] = []
    errors: list[str] = []
    last_clean: SimEnvironment | None = None
    for i in range(cfg.oracle_runs):
        env = SimEnvironment(size_table=dict(size_table))
        outcome = dsl.run(sim, env, fuel=cfg.fuel, seed=cfg.seed + i)
        if not outcome.ok:
            errors.append(f"run {i}: setup: {outcome.message}")
            continue
        trace = run_oracle_episode(env)
        if trace.error:
            errors.append(f"run {i}: {trace.error}")
            continue
        rewards.append(trace.total)
        last_clean = env
        click.echo(f"run {i}: reward {trace.total:.3f} in {trace.steps} steps")

    for line in errors:
        click.echo(line, err=True)
    if rewards:
        mean = sum(rewards) / len(rewards)
        click.echo(f"mean reward {mean:.3f} over {len(rewards)} runs ({len(errors)} excluded)")
    else:
        click.echo("no clean runs")
    if state_path and last_clean is not None:
        last_clean.save_state(state_path)
        click.echo(f"state -> {state_path}")


# --- pipeline and experiments ----------------------------------------------


@main.command()
@click.option(
    "--scene",
    "scene_dir",
    required=True,
    type=click.Path(exists=True, file_okay=False),
    help="Scene bundle directory.",
)
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", "mode_name", type=click.Choice(list(MODE_CHOICES)), default="ours", show_default=True)
@click.option("--budget", type=int, default=None, help="Fix attempts per generation.")
@click.option("--generations", type=int, default=None, help="Task generations to attempt.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_root", type=click.Path(file_okay=False), default=None)
@_match_options
@_config_option
@_llm_options
@_guarded
def refine(
    scene_dir, catalog_path, mode_name, budget, generations, seed, out_root,
    match_mode, embeddings_path, config_path, model, llm_mode, cassette,
):
    """Run the full pipeline for one scene: generate, refine, evaluate."""
    cfg = _config(
        config_path, budget=budget, generations=generations, seed=seed,
        out_dir=out_root, match_mode=match_mode, embeddings=embeddings_path,
        model=model, llm_mode=llm_mode, cassette=cassette,
    )
    cat = load_catalog(catalog_path)
    mode = RouterMode.from_cli(mode_name)
    provider = open_provider(cfg.llm_mode, cfg.cassette)
    embeddings = _embeddings_for(cfg)

    successes = 0
    for g in range(cfg.generations):
        manifest = pipeline_run(
            scene_dir, cat, cfg, mode, provider, cfg.out_dir,
            generation=g, embeddings=embeddings,
        )
        reward = "-" if manifest.mean_reward is None else f"{manifest.mean_reward:.3f}"
        mark = "ok" if manifest.success else "tests failing"
        click.echo(f"{manifest.run_id}: {mark}, mean reward {reward}, fixes {manifest.fixes_used}")
        successes += bool(manifest.success)
    if successes == 0:
        _fail(4, "no generation passed its test battery within budget")


@main.command()
@click.option(
    "--scenes",
    "scene_dirs",
    required=True,
    multiple=True,
    type=click.Path(exists=True, file_okay=False),
    help="Scene bundle directory (repeatable).",
)
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--modes",
    "modes_csv",
    default="llm-only,no-fix,no-router,ours",
    show_default=True,
    help="Comma-separated ablation modes.",
)
@click.option("--generations", type=int, default=None)
@click.option("--budget", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None, help="Parallel pipeline workers.")
@click.option("--out", "out_root", type=click.Path(file_okay=False), default=None)
@_match_options
@_config_option
@_llm_options
@_guarded
def experiment(
    scene_dirs, catalog_path, modes_csv, generations, budget, seed, jobs, out_root,
    match_mode, embeddings_path, config_path, model, llm_mode, cassette,
):
    """Run the scenes x modes x generations grid and write summary reports."""
    cfg = _config(
        config_path, generations=generations, budget=budget, seed=seed, jobs=jobs,
        out_dir=out_root, match_mode=match_mode, embeddings=embeddings_path,
        model=model, llm_mode=llm_mode, cassette=cassette,
    )
    cat = load_catalog(catalog_path)
    modes = _parse_modes(modes_csv)
    provider = open_provider(cfg.llm_mode, cfg.cassette)
    embeddings = _embeddings_for(cfg)

    result = experiment_run(
        list(scene_dirs), modes, cfg, cat, provider, cfg.out_dir, embeddings=embeddings
    )
    for failure in result.failures:
        click.echo(f"cell failed: {failure}", err=True)
    click.echo(f"{len(result.manifests)} runs -> {result.report_text}")
    if result.failures:
        sys.exit(3)


@main.command()
@click.option(
    "--runs",
    "out_root",
    required=True,
    type=click.Path(exists=True, file_okay=False),
    help="Experiment output directory holding run subdirectories.",
)
@_guarded
def report(out_root):
    """Rebuild summary reports from persisted run manifests."""
    text_path, csv_path = rebuild_reports(out_root)
    click.echo(f"wrote {text_path} and {csv_path}")


@main.command()
@click.option("--state", "state_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_guarded
def render(state_path, out_path):
    """Draw a top-down view of a saved world state to a PNG."""
    from .render import render_state  # defer matplotlib

    env = SimEnvironment.load_state(state_path)
    path = render_state(env, out_path)
    click.echo(str(path))


if __name__ == "__main__":
    main()
