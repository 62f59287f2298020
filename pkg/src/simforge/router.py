"""Test-driven refinement loop over generated simulation and test scripts.

Run the test battery; while anything fails and fix budget remains, ask the
model whether the simulation or the tests are at fault, apply the chosen
fix, and evaluate again. The three ablation arms degrade this loop: forced
simulation fixes (no_router), a single evaluation with no fixes (no_fix),
and plain one-shot generation (llm_only).
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import dsl
from .dsl import RunStatus, Script, ScriptKind, builtin_reference
from .errors import BudgetExhaustedError
from .generation import GRAMMAR_REFERENCE, TaskDefinition, extract_code_block
from .llm import ChatMessage, ChatProvider, ChatRequest, MessagePart, TEMP_CLASSIFY, TEMP_GENERATE
from .sim import SimEnvironment

ROUTE_TAG = "route"
FIX_CODE_TAG = "fix_code"
FIX_TEST_TAG = "fix_test"

DEFAULT_BUDGET = 10


class RouterMode(enum.Enum):
    OURS = "ours"
    NO_ROUTER = "no_router"
    NO_FIX = "no_fix"
    LLM_ONLY = "llm_only"

    @classmethod
    def from_cli(cls, value: str) -> "RouterMode":
        return cls(value.replace("-", "_"))


class FixChoice(enum.Enum):
    FIX_CODE = "fix_code"
    FIX_TEST = "fix_test"


@dataclass(frozen=True)
class RouterDecision:
    choice: FixChoice
    rationale: str
    defaulted: bool = False  # parse failed twice, fell back to fix_code


@dataclass(frozen=True)
class TestResult:
    name: str
    status: RunStatus
    message: str
    fuel_used: int
    final_reward: float | None
    stage: str  # "setup" | "test"

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "status": self.status.value,
            "message": self.message,
            "fuel_used": self.fuel_used,
            "final_reward": self.final_reward,
            "stage": self.stage,
        }


@dataclass(frozen=True)
class TestReport:
    results: tuple[TestResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.status is RunStatus.OK for r in self.results)

    def render(self) -> str:
        """Deterministic text form, interpolated into router and fix prompts."""
        lines = []
        for r in self.results:
            lines.append(f"{r.name}: {r.status.value}")
            if r.message:
                where = "setup failed: " if r.stage == "setup" else ""
                lines.append(f"  {where}{r.message}")
            if r.final_reward is not None:
                lines.append(f"  final reward: {r.final_reward:.3f}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {"passed": self.passed, "results": [r.to_json() for r in self.results]}


def run_tests(
    sim: Script,
    tests: Script,
    env_factory: Callable[[], SimEnvironment],
    seed: int = 0,
    fuel: int = dsl.DEFAULT_FUEL,
) -> TestReport:
    """Run every test procedure against a fresh environment built by setup.

    A setup failure is recorded once per test (the test never ran); nothing
    here raises, all failures are report content.
    """
    results: list[TestResult] = []
    for name in tests.test_names():
        env = env_factory()
        setup_outcome = dsl.run(sim, env, fuel=fuel, seed=seed)
        if not setup_outcome.ok:
            results.append(
                TestResult(
                    name=name,
                    status=setup_outcome.status,
                    message=setup_outcome.message,
                    fuel_used=setup_outcome.fuel_used,
                    final_reward=None,
                    stage="setup",
                )
            )
            continue
        outcome = dsl.run(tests, env, fuel=fuel, proc=name)
        results.append(
            TestResult(
                name=name,
                status=outcome.status,
                message=outcome.message,
                fuel_used=outcome.fuel_used,
                final_reward=env.accumulated_reward,
                stage="test",
            )
        )
    return TestReport(results=tuple(results))


_ROUTE_PROMPT = """\
You are refining a generated robot simulation task and its unit tests.

Task definition:
{task}

Running the unit tests against the simulation gave these results:
{test_results}

Should the next fix change the simulation code or the unit test code?
Consider whether the tests report a genuine defect in the simulation or
whether the tests themselves are wrong or too strict. Explain briefly,
then end your reply with a fenced code block containing exactly one of
the following values:
fix_code
fix_test
where fix_code means repair the simulation and fix_test means repair the
tests.
"""


def _parse_decision(reply: str) -> FixChoice | None:
    block = extract_code_block(reply)
    if block is None:
        return None
    token = block.strip()
    if token == "fix_code":
        return FixChoice.FIX_CODE
    if token == "fix_test":
        return FixChoice.FIX_TEST
    return None


def route(
    taskdef: TaskDefinition,
    report: TestReport,
    provider: ChatProvider,
    model: str,
) -> RouterDecision:
    """Ask which artifact to fix; one re-ask, then default to fix_code."""
    prompt = _ROUTE_PROMPT.format(
        task=json.dumps(taskdef.to_json(), indent=2), test_results=report.render()
    )
    messages: list[ChatMessage] = [ChatMessage.user_text(prompt)]
    req = ChatRequest(
        model=model, messages=tuple(messages), temperature=TEMP_CLASSIFY, request_tag=ROUTE_TAG
    )
    reply = provider.complete(req)
    choice = _parse_decision(reply)
    if choice is not None:
        return RouterDecision(choice=choice, rationale=reply)

    messages.append(ChatMessage(role="assistant", parts=(MessagePart.from_text(reply),)))
    messages.append(
        ChatMessage.user_text(
            "End your reply with a fenced code block containing exactly "
            "fix_code or fix_test, nothing else."
        )
    )
    retry = ChatRequest(
        model=model, messages=tuple(messages), temperature=TEMP_CLASSIFY, request_tag=ROUTE_TAG
    )
    second = provider.complete(retry)
    choice = _parse_decision(second)
    if choice is not None:
        return RouterDecision(choice=choice, rationale=second)
    return RouterDecision(choice=FixChoice.FIX_CODE, rationale=second, defaulted=True)


@dataclass
class HistoryEntry:
    iteration: int
    report: TestReport
    decision: str | None = None  # fix applied after this evaluation, if any
    decision_defaulted: bool = False
    fix_parsed: bool = True
    sim_hash: str = ""
    tests_hash: str = ""

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "report": self.report.to_json(),
            "decision": self.decision,
            "decision_defaulted": self.decision_defaulted,
            "fix_parsed": self.fix_parsed,
            "sim_hash": self.sim_hash,
            "tests_hash": self.tests_hash,
        }


@dataclass
class RefinementState:
    taskdef: TaskDefinition
    sim: Script
    tests: Script
    mode: RouterMode
    budget: int = DEFAULT_BUDGET
    fixes_used: int = 0
    history: list[HistoryEntry] = field(default_factory=list)
    success: bool = False

    def history_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "budget": self.budget,
            "fixes_used": self.fixes_used,
            "success": self.success,
            "iterations": [h.to_json() for h in self.history],
        }


def script_hash(script: Script) -> str:
    return hashlib.sha256(script.source.encode("utf-8")).hexdigest()[:16]


def _fix_prompt(state: RefinementState, choice: FixChoice, report: TestReport) -> str:
    task_json = json.dumps(state.taskdef.to_json(), indent=2)
    if choice is FixChoice.FIX_CODE:
        return (
            "The unit tests failed against this simulation script. Repair the "
            "simulation so the task is well-formed and the oracle can solve it.\n\n"
            f"Task definition:\n{task_json}\n\n"
            f"Simulation script:\n```\n{state.sim.source}```\n\n"
            f"Test results:\n{report.render()}\n\n"
            f"{GRAMMAR_REFERENCE}\n"
            f"Builtins available in setup:\n{builtin_reference(dsl.Scope.SETUP)}\n\n"
            "Reply with the complete corrected simulation script in a single "
            "fenced code block."
        )
    return (
        "The unit tests failed against this simulation script, and the tests "
        "themselves are judged to be at fault. Repair the test battery; add "
        "diagnostics where that helps.\n\n"
        f"Task definition:\n{task_json}\n\n"
        f"Simulation script:\n```\n{state.sim.source}```\n\n"
        f"Current tests:\n```\n{state.tests.source}```\n\n"
        f"Test results:\n{report.render()}\n\n"
        f"{GRAMMAR_REFERENCE}\n"
        f"Builtins available in tests:\n{builtin_reference(dsl.Scope.TEST)}\n\n"
        "Reply with the complete corrected test battery in a single fenced "
        "code block."
    )


def apply_fix(
    state: RefinementState,
    decision: RouterDecision,
    report: TestReport,
    provider: ChatProvider,
    model: str,
    image_path: str | None = None,
    raw_dir: Path | str | None = None,
) -> bool:
    """Replace the chosen artifact with a re-generated script.

    Consumes one unit of budget whether or not the fix parses; an
    unparseable fix (after one re-ask) leaves the artifact unchanged.
    Returns True when the artifact was actually replaced.
    """
    if state.fixes_used >= state.budget:
        raise BudgetExhaustedError(
            f"fix budget of {state.budget} already spent"
        )
    choice = decision.choice
    tag = FIX_CODE_TAG if choice is FixChoice.FIX_CODE else FIX_TEST_TAG
    kind = ScriptKind.SIMULATION if choice is FixChoice.FIX_CODE else ScriptKind.TEST_BATTERY

    parts = [MessagePart.from_text(_fix_prompt(state, choice, report))]
    if choice is FixChoice.FIX_CODE and image_path is not None:
        parts.append(MessagePart.from_image(image_path))
    messages: list[ChatMessage] = [ChatMessage.user(*parts)]

    state.fixes_used += 1
    new_script: Script | None = None
    for attempt in (1, 2):
        req = ChatRequest(
            model=model, messages=tuple(messages), temperature=TEMP_GENERATE, request_tag=tag
        )
        reply = provider.complete(req)
        if raw_dir is not None:
            d = Path(raw_dir)
            d.mkdir(parents=True, exist_ok=True)
            (d / f"{tag}.fix{state.fixes_used}.attempt{attempt}.txt").write_text(
                reply, encoding="utf-8"
            )
        block = extract_code_block(reply)
        error = "reply contains no fenced code block"
        if block is not None:
            try:
                new_script = dsl.parse(block, kind)
                break
            except dsl.DslParseError as exc:
                error = str(exc)
        messages.append(ChatMessage(role="assistant", parts=(MessagePart.from_text(reply),)))
        messages.append(
            ChatMessage.user_text(
                f"That script was rejected: {error}. Reply again with the "
                "corrected script in a single fenced code block."
            )
        )

    if new_script is None:
        return False
    if choice is FixChoice.FIX_CODE:
        state.sim = new_script
    else:
        state.tests = new_script
    return True


def refine(
    taskdef: TaskDefinition,
    sim: Script,
    tests: Script,
    mode: RouterMode,
    provider: ChatProvider,
    model: str,
    env_factory: Callable[[], SimEnvironment],
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
    fuel: int = dsl.DEFAULT_FUEL,
    image_path: str | None = None,
    out_dir: Path | str | None = None,
) -> RefinementState:
    """Iterate evaluate-and-fix until the battery passes or budget runs out.

    no_fix and llm_only stop after the first evaluation. History gets one
    entry per evaluation; the entry's decision is the fix applied after
    that evaluation, so a successful run ends with a decision-free entry.
    """
    state = RefinementState(taskdef=taskdef, sim=sim, tests=tests, mode=mode, budget=budget)

    iteration = 0
    while True:
        iteration += 1
        report = run_tests(state.sim, state.tests, env_factory, seed=seed, fuel=fuel)
        entry = HistoryEntry(
            iteration=iteration,
            report=report,
            sim_hash=script_hash(state.sim),
            tests_hash=script_hash(state.tests),
        )
        state.history.append(entry)
        if out_dir is not None:
            _snapshot_iteration(out_dir, iteration, state, report)

        if report.passed:
            state.success = True
            break
        if mode in (RouterMode.NO_FIX, RouterMode.LLM_ONLY):
            break
        if state.fixes_used >= state.budget:
            break

        if mode is RouterMode.NO_ROUTER:
            decision = RouterDecision(choice=FixChoice.FIX_CODE, rationale="forced by mode")
        else:
            decision = route(state.taskdef, report, provider, model)

        changed = apply_fix(
            state, decision, report, provider, model,
            image_path=image_path,
            raw_dir=None if out_dir is None else Path(out_dir) / "raw",
        )
        entry.decision = decision.choice.value
        entry.decision_defaulted = decision.defaulted
        entry.fix_parsed = changed

    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "history.json").write_text(
            json.dumps(state.history_json(), indent=2) + "\n", encoding="utf-8"
        )
    return state


def _snapshot_iteration(out_dir: Path | str, iteration: int, state: RefinementState, report: TestReport):
    d = Path(out_dir) / f"iter_{iteration}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "sim.task").write_text(state.sim.source, encoding="utf-8")
    (d / "tests.tests").write_text(state.tests.source, encoding="utf-8")
    (d / "report.json").write_text(
        json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8"
    )
