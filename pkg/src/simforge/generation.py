"""Generate the task definition, simulation script, and test battery.

Each generator builds a prompt from the scene context, calls the provider,
and validates the reply against a hard schema (JSON keys for the task
definition, a parsing script for the other two). Validation never rewrites
model output: a bad reply gets exactly one re-ask with the error attached,
and every raw reply can be persisted verbatim for the refinement loop.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .catalog import TEMPLATE_ASSETS, TEMPLATE_ASSET_IDS, AssetCatalog
from .dsl import DslParseError, Scope, ScriptKind, builtin_reference, parse
from .errors import SchemaError
from .llm import ChatMessage, ChatProvider, ChatRequest, MessagePart, TEMP_GENERATE
from .scene import SceneDescription

GEN_TASKDEF_TAG = "gen_taskdef"
GEN_SIM_TAG = "gen_sim"
GEN_TESTS_TAG = "gen_tests"

_KEBAB = re.compile(r"^[a-z0-9]+(-[a-z0-9]+)*$")
_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)

GRAMMAR_REFERENCE = """\
Scripts are written in a small sandboxed language. Rules:
- A script is a list of procedures: proc name(params) { statements }
- Statements: let x = expr | x = expr | if expr { } else { } | while expr { }
  | repeat n { } | for x in list { } | return expr | a call
- Expressions: numbers, strings in double quotes, true/false/none, lists
  like [1, 2, 3], indexing xs[0], arithmetic + - * / %, comparisons
  == != < <= > >=, boolean and/or/not. Comments start with #.
- There are no imports and no attribute access; the only callable names
  are the builtins listed below and procedures defined in the script.
"""

ORACLE_LOOP_REFERENCE = """\
A test drives the episode with the oracle policy like this:
    reset()
    while not done() {
        let act = oracle_act()
        if act == none {
            return
        }
        step(act)
    }
Then assert on total_reward(). The oracle solves any well-formed task, so
a test battery should at minimum assert the oracle reaches full reward.
"""


@dataclass(frozen=True)
class TaskDefinition:
    task_name: str
    task_description: str
    assets_used: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "task-name": self.task_name,
            "task-description": self.task_description,
            "assets-used": list(self.assets_used),
        }

    @classmethod
    def from_json(cls, data: dict) -> "TaskDefinition":
        for key in ("task-name", "task-description", "assets-used"):
            if key not in data:
                raise SchemaError(f"task definition missing key {key!r}", field=key)
        name = data["task-name"]
        if not isinstance(name, str) or not _KEBAB.match(name):
            raise SchemaError(f"task-name must be kebab-case, got {name!r}", field="task-name")
        desc = data["task-description"]
        if not isinstance(desc, str) or not desc.strip():
            raise SchemaError("task-description must be a non-empty string", field="task-description")
        assets = data["assets-used"]
        if not isinstance(assets, list) or not assets or not all(isinstance(a, str) for a in assets):
            raise SchemaError("assets-used must be a non-empty list of asset ids", field="assets-used")
        return cls(task_name=name, task_description=desc, assets_used=tuple(assets))

    def save(self, path: Path | str):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "TaskDefinition":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def validate_assets_used(
    taskdef: TaskDefinition, scene: SceneDescription, catalog: AssetCatalog
) -> None:
    """A task may use any subset of scene-matched assets plus the templates."""
    allowed = set(scene.matched_assets()) | set(TEMPLATE_ASSET_IDS)
    for asset_id in taskdef.assets_used:
        if asset_id not in allowed:
            raise SchemaError(
                f"asset {asset_id!r} is neither matched in the scene nor a template",
                field="assets-used",
            )
        if asset_id not in catalog and asset_id not in TEMPLATE_ASSET_IDS:
            raise SchemaError(f"asset {asset_id!r} not in catalog", field="assets-used")


def extract_code_block(reply: str) -> str | None:
    """Content of the last fenced code block, or None if there is none."""
    blocks = _FENCE.findall(reply)
    if not blocks:
        return None
    return blocks[-1]


def _persist_raw(raw_dir: Path | str | None, tag: str, attempt: int, text: str):
    if raw_dir is None:
        return
    d = Path(raw_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / f"{tag}.attempt{attempt}.txt").write_text(text, encoding="utf-8")


def _fewshot_dir():
    return resources.files("simforge").joinpath("data/fewshot")


def fewshot_names() -> list[str]:
    return sorted(
        p.name.removesuffix(".json")
        for p in _fewshot_dir().iterdir()
        if p.name.endswith(".json")
    )


def load_fewshot(name: str) -> tuple[str, str, str]:
    """(taskdef json, sim source, tests source) of one shipped example."""
    d = _fewshot_dir()
    return (
        d.joinpath(f"{name}.json").read_text(encoding="utf-8"),
        d.joinpath(f"{name}.task").read_text(encoding="utf-8"),
        d.joinpath(f"{name}.tests").read_text(encoding="utf-8"),
    )


def _fewshot_sims() -> str:
    parts = []
    for name in fewshot_names():
        taskdef, sim, _tests = load_fewshot(name)
        parts.append(f"Example task definition:\n{taskdef}\nExample simulation script:\n```\n{sim}```")
    return "\n\n".join(parts)


def _fewshot_tests() -> str:
    parts = []
    for name in fewshot_names():
        _taskdef, sim, tests = load_fewshot(name)
        parts.append(
            f"Example simulation script:\n```\n{sim}```\nExample test battery:\n```\n{tests}```"
        )
    return "\n\n".join(parts)


def _scene_summary(scene: SceneDescription, catalog: AssetCatalog) -> str:
    lines = []
    for obj in scene.objects:
        asset = obj.matched_asset
        if asset is None or asset not in catalog:
            continue
        rec = catalog.get(asset)
        pos = size = "unknown"
        if obj.bbox is not None:
            pos = "({:.3f}, {:.3f}, {:.3f})".format(*obj.bbox.center)
            size = "({:.3f}, {:.3f}, {:.3f})".format(*obj.bbox.size)
        lines.append(
            f"- {asset} (urdf \"{rec.urdf_path}\"): center {pos} m, size {size} m. {rec.description}"
        )
    for rec in TEMPLATE_ASSETS:
        lines.append(
            f"- {rec.asset_id} (template \"{rec.urdf_path}\", nominal size "
            f"({rec.size[0]:.3f}, {rec.size[1]:.3f}, {rec.size[2]:.3f}) m): {rec.description}"
        )
    return "\n".join(lines)


def gen_task_definition(
    scene: SceneDescription,
    catalog: AssetCatalog,
    provider: ChatProvider,
    model: str,
    image_path: str | None = None,
    raw_dir: Path | str | None = None,
) -> TaskDefinition:
    """Ask for a task grounded in the matched scene objects.

    The reply must be a JSON object with task-name (kebab-case),
    task-description, and assets-used drawn from the scene and template
    assets; one re-ask on a schema violation, then the error propagates.
    """
    if not scene.matched_assets():
        raise SchemaError("scene has no matched objects to build a task from")

    prompt = (
        "You design pick-and-place tasks for a tabletop robot simulator.\n"
        "Observed objects (matched against the asset library) and always-available "
        "template assets:\n"
        f"{_scene_summary(scene, catalog)}\n\n"
        "Invent one contextually sensible task using a subset of these assets. "
        "Reply with exactly one JSON object in a fenced code block, with keys "
        '"task-name" (kebab-case), "task-description" (one or two sentences), '
        'and "assets-used" (list of asset ids from the list above).'
    )
    parts = [MessagePart.from_text(prompt)]
    if image_path is not None:
        parts.append(MessagePart.from_image(image_path))

    messages: list[ChatMessage] = [ChatMessage.user(*parts)]
    last_error: SchemaError | None = None
    for attempt in (1, 2):
        req = ChatRequest(
            model=model,
            messages=tuple(messages),
            temperature=TEMP_GENERATE,
            request_tag=GEN_TASKDEF_TAG,
        )
        reply = provider.complete(req)
        _persist_raw(raw_dir, GEN_TASKDEF_TAG, attempt, reply)
        try:
            block = extract_code_block(reply)
            text = block if block is not None else reply
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"reply is not valid JSON: {exc}")
            taskdef = TaskDefinition.from_json(data)
            validate_assets_used(taskdef, scene, catalog)
            return taskdef
        except SchemaError as exc:
            last_error = exc
            messages.append(ChatMessage(role="assistant", parts=(MessagePart.from_text(reply),)))
            messages.append(
                ChatMessage.user_text(
                    f"That reply was rejected: {exc}. Reply again with only the "
                    "corrected JSON object in a fenced code block."
                )
            )
    raise last_error


def _gen_script(
    prompt_parts: list[MessagePart],
    kind: ScriptKind,
    tag: str,
    provider: ChatProvider,
    model: str,
    raw_dir: Path | str | None,
):
    messages: list[ChatMessage] = [ChatMessage.user(*prompt_parts)]
    last_error: DslParseError | None = None
    for attempt in (1, 2):
        req = ChatRequest(
            model=model, messages=tuple(messages), temperature=TEMP_GENERATE, request_tag=tag
        )
        reply = provider.complete(req)
        _persist_raw(raw_dir, tag, attempt, reply)
        block = extract_code_block(reply)
        if block is None:
            last_error = DslParseError("reply contains no fenced code block")
        else:
            try:
                return parse(block, kind)
            except DslParseError as exc:
                last_error = exc
        messages.append(ChatMessage(role="assistant", parts=(MessagePart.from_text(reply),)))
        messages.append(
            ChatMessage.user_text(
                f"That script was rejected: {last_error}. Reply again with the "
                "corrected script in a single fenced code block."
            )
        )
    raise last_error


def gen_sim_script(
    taskdef: TaskDefinition,
    scene: SceneDescription,
    catalog: AssetCatalog,
    provider: ChatProvider,
    model: str,
    image_path: str | None = None,
    raw_dir: Path | str | None = None,
):
    """Generate the simulation script; it must parse, poses are its own call.

    The model may rearrange objects and positions freely; only parseability
    and the setup(env) contract are enforced here. Solvability is the test
    battery's and refinement loop's job.
    """
    prompt = (
        "Write a simulation script for this tabletop pick-and-place task.\n\n"
        f"Task definition:\n{json.dumps(taskdef.to_json(), indent=2)}\n\n"
        f"Scene objects and templates:\n{_scene_summary(scene, catalog)}\n\n"
        f"{GRAMMAR_REFERENCE}\n"
        f"Builtins available in setup:\n{builtin_reference(Scope.SETUP)}\n\n"
        f"{_fewshot_sims()}\n\n"
        "Rules: define proc setup(env); reference assets by their urdf strings; "
        "the step_max_reward values of all goals must sum to 1.0; call "
        "set_max_steps with a sensible limit. Reply with the script in a "
        "single fenced code block."
    )
    parts = [MessagePart.from_text(prompt)]
    if image_path is not None:
        parts.append(MessagePart.from_image(image_path))
    return _gen_script(parts, ScriptKind.SIMULATION, GEN_SIM_TAG, provider, model, raw_dir)


def gen_test_script(
    taskdef: TaskDefinition,
    sim_source: str,
    provider: ChatProvider,
    model: str,
    raw_dir: Path | str | None = None,
):
    """Generate the test battery for a simulation script."""
    prompt = (
        "Write a test battery for this tabletop simulation.\n\n"
        f"Task definition:\n{json.dumps(taskdef.to_json(), indent=2)}\n\n"
        f"Simulation script:\n```\n{sim_source}```\n\n"
        f"{GRAMMAR_REFERENCE}\n"
        f"Builtins available in tests:\n{builtin_reference(Scope.TEST)}\n\n"
        f"{ORACLE_LOOP_REFERENCE}\n"
        f"{_fewshot_tests()}\n\n"
        "Rules: define one or more procedures named test_*; each takes no "
        "parameters; use the assert builtins with clear messages. Reply with "
        "the script in a single fenced code block."
    )
    parts = [MessagePart.from_text(prompt)]
    return _gen_script(parts, ScriptKind.TEST_BATTERY, GEN_TESTS_TAG, provider, model, raw_dir)
