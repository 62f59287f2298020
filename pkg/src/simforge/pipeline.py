"""End-to-end orchestration: one observation in, one evaluated task out.

A pipeline run owns a run directory and persists every stage output, so an
interrupted run resumes from its manifest instead of repeating work. An
experiment fans pipeline runs over a scene/mode/generation grid in a
worker pool and reduces the results to reports.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .catalog import AssetCatalog, TEMPLATE_ASSETS
from .config import ForgeConfig
from .correspond import MatchMode, MatchResult, correspond_scene
from .errors import StageError
from .generation import (
    TaskDefinition,
    gen_sim_script,
    gen_task_definition,
    gen_test_script,
)
from .llm import ChatProvider, PrecomputedEmbeddings
from .router import RouterMode, refine
from .scene import SceneDescription, build_scene_description, load_bundle
from .sim import RewardTrace, SimEnvironment, run_oracle_episode
from .stats import RunSample, aggregate_rewards, confusion_from_matches, f1, render_report
from . import dsl

STAGES = ("scene", "correspond", "gen", "refine", "eval", "report")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    run_id: str
    scene_id: str
    mode: str
    seed: int
    cassette: str | None = None
    oracle_runs: int = 3
    created_at: str = field(default_factory=_now)
    updated_at: str = ""
    artifacts: dict = field(default_factory=dict)  # name -> path relative to run dir
    stages_done: list = field(default_factory=list)
    error: str | None = None
    success: bool | None = None  # did the battery ever pass
    mean_reward: float | None = None
    eval_errors: int = 0
    fixes_used: int = 0
    sim_fixes: int = 0
    test_fixes: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, data: dict) -> "RunManifest":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})

    def save(self, run_dir: Path):
        self.updated_at = _now()
        (run_dir / "manifest.json").write_text(
            json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, run_dir: Path) -> "RunManifest | None":
        p = run_dir / "manifest.json"
        if not p.exists():
            return None
        return cls.from_json(json.loads(p.read_text(encoding="utf-8")))

    def has(self, run_dir: Path, artifact: str) -> bool:
        rel = self.artifacts.get(artifact)
        return rel is not None and (run_dir / rel).exists()


def build_size_table(
    scene: SceneDescription, catalog: AssetCatalog, taskdef: TaskDefinition | None = None
) -> dict[str, tuple[float, float, float]]:
    """Physical size per urdf: catalog nominals overridden by observed boxes."""
    table: dict[str, tuple[float, float, float]] = {}
    for rec in list(catalog) + list(TEMPLATE_ASSETS):
        if rec.size is not None:
            table[rec.urdf_path] = tuple(rec.size)
    for obj in scene.objects:
        asset = obj.matched_asset
        if asset is None or obj.bbox is None or asset not in catalog:
            continue
        size = obj.bbox.size
        if all(s > 0 for s in size):
            table[catalog.get(asset).urdf_path] = size
    return table


def run_id_for(scene_id: str, mode: RouterMode, generation: int) -> str:
    return f"{scene_id}-{mode.value.replace('_', '-')}-g{generation:02d}"


def pipeline_run(
    bundle_dir: Path | str,
    catalog: AssetCatalog,
    config: ForgeConfig,
    mode: RouterMode,
    provider: ChatProvider,
    out_root: Path | str,
    generation: int = 0,
    embeddings: PrecomputedEmbeddings | None = None,
) -> RunManifest:
    """Scene comprehension -> matching -> generation -> refinement -> eval.

    Every stage output is written under the run directory; an existing
    manifest makes completed stages load from disk instead of re-running.
    The llm_only mode omits the scene image from generation prompts and
    skips the refinement loop.
    """
    bundle_dir = Path(bundle_dir)
    scene_id = bundle_dir.name
    run_id = run_id_for(scene_id, mode, generation)
    run_dir = Path(out_root) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)

    manifest = RunManifest.load(run_dir) or RunManifest(
        run_id=run_id,
        scene_id=scene_id,
        mode=mode.value,
        seed=config.seed + generation,
        cassette=config.cassette,
        oracle_runs=config.oracle_runs,
    )
    seed = manifest.seed
    image_path: str | None = None
    scene: SceneDescription | None = None
    taskdef: TaskDefinition | None = None

    def stage(name):
        """Immediately run the decorated stage body unless already done."""

        def wrap(fn):
            if name in manifest.stages_done:
                return
            try:
                fn()
            except Exception as exc:
                manifest.error = f"{name}: {exc}"
                manifest.save(run_dir)
                raise StageError(name, str(exc)) from exc
            manifest.stages_done.append(name)
            manifest.error = None
            manifest.save(run_dir)

        return wrap

    # 1. scene comprehension
    @stage("scene")
    def _scene():
        bundle = load_bundle(bundle_dir)
        desc = build_scene_description(bundle, run_dir, clip_fraction=config.clip_fraction)
        desc.save(run_dir / "scene.json")
        manifest.artifacts["scene"] = "scene.json"

    scene = SceneDescription.load(run_dir / "scene.json")
    image_path = scene.image_ref

    # 2. correspondence
    @stage("correspond")
    def _correspond():
        matched, results = correspond_scene(
            scene,
            catalog,
            MatchMode(config.match_mode),
            provider=provider,
            embeddings=embeddings,
            model=config.model,
        )
        matched.save(run_dir / "scene.json")
        (run_dir / "matches.json").write_text(
            json.dumps([r.to_json() for r in results], indent=2) + "\n", encoding="utf-8"
        )
        manifest.artifacts["matches"] = "matches.json"

    scene = SceneDescription.load(run_dir / "scene.json")

    # 3. generation
    include_image = mode is not RouterMode.LLM_ONLY
    raw_dir = run_dir / "raw"

    @stage("gen")
    def _gen():
        td = gen_task_definition(
            scene, catalog, provider, config.model,
            image_path=image_path if include_image else None,
            raw_dir=raw_dir,
        )
        td.save(run_dir / "taskdef.json")
        sim = gen_sim_script(
            td, scene, catalog, provider, config.model,
            image_path=image_path if include_image else None,
            raw_dir=raw_dir,
        )
        (run_dir / "sim.task").write_text(sim.source, encoding="utf-8")
        tests = gen_test_script(td, sim.source, provider, config.model, raw_dir=raw_dir)
        (run_dir / "tests.tests").write_text(tests.source, encoding="utf-8")
        manifest.artifacts["taskdef"] = "taskdef.json"
        manifest.artifacts["sim"] = "sim.task"
        manifest.artifacts["tests"] = "tests.tests"

    taskdef = TaskDefinition.load(run_dir / "taskdef.json")
    size_table = build_size_table(scene, catalog, taskdef)

    def env_factory() -> SimEnvironment:
        return SimEnvironment(size_table=dict(size_table))

    # 4. refinement
    @stage("refine")
    def _refine():
        sim = dsl.parse((run_dir / "sim.task").read_text(encoding="utf-8"), dsl.ScriptKind.SIMULATION)
        tests = dsl.parse(
            (run_dir / "tests.tests").read_text(encoding="utf-8"), dsl.ScriptKind.TEST_BATTERY
        )
        state = refine(
            taskdef, sim, tests, mode, provider, config.model, env_factory,
            budget=config.budget, seed=seed, fuel=config.fuel,
            image_path=image_path if include_image else None,
            out_dir=run_dir / "refine",
        )
        (run_dir / "sim.task").write_text(state.sim.source, encoding="utf-8")
        (run_dir / "tests.tests").write_text(state.tests.source, encoding="utf-8")
        manifest.artifacts["refine"] = "refine/history.json"
        manifest.success = state.success
        manifest.fixes_used = state.fixes_used
        manifest.sim_fixes = sum(1 for h in state.history if h.decision == "fix_code")
        manifest.test_fixes = sum(1 for h in state.history if h.decision == "fix_test")

    # 5. oracle evaluation
    @stage("eval")
    def _eval():
        sim = dsl.parse((run_dir / "sim.task").read_text(encoding="utf-8"), dsl.ScriptKind.SIMULATION)
        eval_dir = run_dir / "eval"
        eval_dir.mkdir(exist_ok=True)
        rewards: list[float] = []
        errors = 0
        for i in range(config.oracle_runs):
            env = env_factory()
            outcome = dsl.run(sim, env, fuel=config.fuel, seed=seed + i)
            if outcome.ok:
                trace = run_oracle_episode(env)
            else:
                trace = RewardTrace(error=f"setup: {outcome.message}")
            (eval_dir / f"trace_{i}.json").write_text(
                json.dumps(trace.to_json(), indent=2) + "\n", encoding="utf-8"
            )
            if trace.error is not None:
                errors += 1
            else:
                rewards.append(trace.total)
        summary = {
            "rewards": rewards,
            "errors": errors,
            "mean": sum(rewards) / len(rewards) if rewards else None,
        }
        (eval_dir / "summary.json").write_text(
            json.dumps(summary, indent=2) + "\n", encoding="utf-8"
        )
        manifest.artifacts["eval"] = "eval/summary.json"
        manifest.eval_errors = errors
        manifest.mean_reward = summary["mean"]

    # 6. per-run report row
    @stage("report")
    def _report():
        sample = run_sample(manifest)
        report = render_report(aggregate_rewards([sample]), title=f"Run {run_id}")
        (run_dir / "report.csv").write_text(report.csv, encoding="utf-8")
        (run_dir / "report.txt").write_text(report.text, encoding="utf-8")
        manifest.artifacts["report"] = "report.csv"

    manifest.save(run_dir)
    return manifest


def run_sample(manifest: RunManifest) -> RunSample:
    """Reduce one run to a reward sample; all-error evals count as errored."""
    errored = manifest.mean_reward is None
    return RunSample(
        condition=manifest.mode,
        scene_id=manifest.scene_id,
        reward=0.0 if errored else float(manifest.mean_reward),
        runtime_error=errored,
    )


@dataclass
class ExperimentResult:
    manifests: list[RunManifest]
    failures: list[str]  # cells that raised, as "run_id: error"
    report_text: Path
    report_csv: Path
    fixes_csv: Path
    matching_csv: Path | None


def experiment_run(
    scene_dirs: list[Path | str],
    modes: list[RouterMode],
    config: ForgeConfig,
    catalog: AssetCatalog,
    provider: ChatProvider,
    out_root: Path | str,
    generations: int | None = None,
    embeddings: PrecomputedEmbeddings | None = None,
) -> ExperimentResult:
    """Grid over scenes x modes x generations, then reduce to reports.

    Cell failures are recorded and the grid keeps going. Reports carry no
    timestamps: identical inputs and cassettes give identical bytes.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    gens = generations if generations is not None else config.generations

    cells = [
        (scene_dir, mode, g)
        for scene_dir in scene_dirs
        for mode in modes
        for g in range(gens)
    ]

    manifests: list[RunManifest] = []
    failures: list[str] = []

    def run_cell(cell):
        scene_dir, mode, g = cell
        return pipeline_run(
            scene_dir, catalog, config, mode, provider, out_root,
            generation=g, embeddings=embeddings,
        )

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            futures = {pool.submit(run_cell, cell): cell for cell in cells}
            for future, cell in futures.items():
                scene_dir, mode, g = cell
                try:
                    manifests.append(future.result())
                except Exception as exc:
                    failures.append(f"{run_id_for(Path(scene_dir).name, mode, g)}: {exc}")
    else:
        for cell in cells:
            scene_dir, mode, g = cell
            try:
                manifests.append(run_cell(cell))
            except Exception as exc:
                failures.append(f"{run_id_for(Path(scene_dir).name, mode, g)}: {exc}")

    manifests.sort(key=lambda m: m.run_id)
    samples = [run_sample(m) for m in manifests]
    report = render_report(aggregate_rewards(samples))

    report_csv = out_root / "report.csv"
    report_text = out_root / "report.txt"
    text = report.text
    if failures:
        text += "\nfailed cells:\n" + "\n".join(f"  {f}" for f in sorted(failures)) + "\n"
    report_csv.write_text(report.csv, encoding="utf-8")
    report_text.write_text(text, encoding="utf-8")

    fixes_csv = out_root / "fixes.csv"
    fixes_csv.write_text(_fixes_summary(manifests), encoding="utf-8")

    matching_csv = out_root / "matching.csv"
    matching = _matching_summary(scene_dirs, out_root, manifests)
    if matching is None:
        matching_csv = None
    else:
        matching_csv.write_text(matching, encoding="utf-8")

    return ExperimentResult(
        manifests=manifests,
        failures=sorted(failures),
        report_text=report_text,
        report_csv=report_csv,
        fixes_csv=fixes_csv,
        matching_csv=matching_csv,
    )


def _fixes_summary(manifests: list[RunManifest]) -> str:
    """Per-mode success rate and mean fix counts, split by artifact."""
    from .stats import CONDITION_ORDER

    by_mode: dict[str, list[RunManifest]] = {}
    for m in manifests:
        by_mode.setdefault(m.mode, []).append(m)
    order = [c for c in CONDITION_ORDER if c in by_mode] + sorted(
        c for c in by_mode if c not in CONDITION_ORDER
    )
    lines = ["mode,runs,success_rate,mean_fixes,mean_sim_fixes,mean_test_fixes"]
    for mode in order:
        group = by_mode[mode]
        n = len(group)
        successes = sum(1 for m in group if m.success)
        lines.append(
            f"{mode},{n},{successes / n:.6f},"
            f"{sum(m.fixes_used for m in group) / n:.6f},"
            f"{sum(m.sim_fixes for m in group) / n:.6f},"
            f"{sum(m.test_fixes for m in group) / n:.6f}"
        )
    return "\n".join(lines) + "\n"


def _matching_summary(
    scene_dirs: list[Path | str], out_root: Path, manifests: list[RunManifest]
) -> str | None:
    """Per-scene matching F1 against bundle ground truth, when it exists."""
    truths: dict[str, dict[str, str]] = {}
    for scene_dir in scene_dirs:
        p = Path(scene_dir) / "truth.json"
        if p.exists():
            truths[Path(scene_dir).name] = json.loads(p.read_text(encoding="utf-8"))
    if not truths:
        return None

    lines = ["scene,tp,fp,fn,f1"]
    for scene_id in sorted(truths):
        manifest = next((m for m in manifests if m.scene_id == scene_id), None)
        if manifest is None:
            continue
        matches_path = out_root / manifest.run_id / "matches.json"
        if not matches_path.exists():
            continue
        results = [
            MatchResult.from_json(r)
            for r in json.loads(matches_path.read_text(encoding="utf-8"))
        ]
        predictions = {r.crop_id: r.predicted for r in results}
        counts = confusion_from_matches(predictions, truths[scene_id])
        lines.append(
            f"{scene_id},{counts.tp},{counts.fp},{counts.fn},{f1(counts):.6f}"
        )
    return "\n".join(lines) + "\n"


def rebuild_reports(out_root: Path | str) -> tuple[Path, Path]:
    """Regenerate the grid reports from persisted manifests only."""
    out_root = Path(out_root)
    manifests = []
    for manifest_path in sorted(out_root.glob("*/manifest.json")):
        manifests.append(RunManifest.from_json(json.loads(manifest_path.read_text(encoding="utf-8"))))
    if not manifests:
        raise StageError("report", f"no run manifests under {out_root}")
    samples = [run_sample(m) for m in manifests]
    report = render_report(aggregate_rewards(samples))
    csv_path = out_root / "report.csv"
    text_path = out_root / "report.txt"
    csv_path.write_text(report.csv, encoding="utf-8")
    text_path.write_text(report.text, encoding="utf-8")
    (out_root / "fixes.csv").write_text(_fixes_summary(manifests), encoding="utf-8")
    return text_path, csv_path
