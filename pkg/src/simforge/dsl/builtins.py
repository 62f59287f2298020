"""The audited builtin table: every callable a script can reach.

This table is the whole capability surface of the language. Nothing in it
touches the filesystem, network, clock, or process state; the safety test
enumerates it. Parse-time symbol checking and the prompt-facing reference
text are both generated from here so they cannot drift apart.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Scope(enum.Enum):
    SETUP = "setup"  # available while a simulation's setup(env) runs
    TEST = "test"  # available inside test procedures
    ANY = "any"


@dataclass(frozen=True)
class BuiltinSpec:
    name: str
    min_args: int
    max_args: int | None  # None = unbounded
    scope: Scope
    signature: str
    doc: str


_SPECS = [
    # simulation setup
    BuiltinSpec("add_object", 2, 2, Scope.SETUP, "add_object(urdf, pose)",
                "Add a movable object at the pose; returns its object id."),
    BuiltinSpec("add_fixed", 2, 2, Scope.SETUP, "add_fixed(urdf, pose)",
                "Add an immovable object (container, fixture); returns its object id."),
    BuiltinSpec("fill_template", 2, 2, Scope.SETUP, "fill_template(template, dims)",
                "Instantiate a parametric template with [x, y, z] dimensions in meters; returns a urdf reference."),
    BuiltinSpec("get_random_pose", 2, 2, Scope.SETUP, "get_random_pose(env, size)",
                "Sample a free resting pose for an object of [x, y, z] size; returns none if the workspace is too full."),
    BuiltinSpec("add_goal", 5, 6, Scope.SETUP,
                'add_goal(objs, targ_poses, metric, step_max_reward, language_goal)',
                'Register a goal: move the listed objects to the target poses. metric is "pose" or "zone"; '
                "step_max_reward is this goal's share of the total reward (all goals must sum to 1.0); "
                "an optional sixth argument gives the zone [x, y, z] size for the zone metric."),
    BuiltinSpec("set_max_steps", 1, 1, Scope.SETUP, "set_max_steps(n)",
                "Limit the episode to n pick-and-place steps."),
    BuiltinSpec("set_sixdof", 1, 1, Scope.SETUP, "set_sixdof(flag)",
                "When true, pose-metric goals also require matching orientation."),
    # test battery
    BuiltinSpec("reset", 0, 0, Scope.TEST, "reset()",
                "Rebuild the episode; returns the list of [object_id, x, y, z] observations."),
    BuiltinSpec("oracle_act", 0, 0, Scope.TEST, "oracle_act()",
                "Ask the oracle policy for the next action; returns none when it has nothing to do."),
    BuiltinSpec("step", 1, 1, Scope.TEST, "step(act)",
                "Execute one action (or none to waste a step); returns the reward gained."),
    BuiltinSpec("total_reward", 0, 0, Scope.TEST, "total_reward()",
                "Accumulated reward so far, between 0 and 1."),
    BuiltinSpec("done", 0, 0, Scope.TEST, "done()",
                "True once the episode is complete or out of steps."),
    # assertions
    BuiltinSpec("assert_true", 2, 2, Scope.ANY, "assert_true(cond, msg)",
                "Fail the run with msg unless cond is true."),
    BuiltinSpec("assert_greater", 3, 3, Scope.ANY, "assert_greater(a, b, msg)",
                "Fail the run with msg unless a > b."),
    BuiltinSpec("assert_almost_equal", 4, 4, Scope.ANY, "assert_almost_equal(a, b, delta, msg)",
                "Fail the run with msg unless |a - b| <= delta."),
    # utilities
    BuiltinSpec("pose", 3, 7, Scope.ANY, "pose(x, y, z, qx, qy, qz, qw)",
                "Build a pose; the quaternion defaults to identity (0, 0, 0, 1)."),
    BuiltinSpec("len", 1, 1, Scope.ANY, "len(x)", "Length of a list or string."),
    BuiltinSpec("range", 1, 2, Scope.ANY, "range(n) or range(a, b)",
                "List of integers 0..n-1, or a..b-1."),
    BuiltinSpec("abs", 1, 1, Scope.ANY, "abs(x)", "Absolute value."),
    BuiltinSpec("min", 1, 8, Scope.ANY, "min(a, b, ...)", "Smallest argument, or smallest element of a single list."),
    BuiltinSpec("max", 1, 8, Scope.ANY, "max(a, b, ...)", "Largest argument, or largest element of a single list."),
    BuiltinSpec("append", 2, 2, Scope.ANY, "append(list, item)", "Append item to list in place."),
    BuiltinSpec("log", 1, 1, Scope.ANY, "log(msg)", "Record a diagnostic message in the run output."),
]

BUILTIN_TABLE: dict[str, BuiltinSpec] = {s.name: s for s in _SPECS}

# Implemented inside the interpreter; everything else is bound by the host.
NATIVE_NAMES = frozenset(
    ["len", "range", "abs", "min", "max", "append", "log",
     "assert_true", "assert_greater", "assert_almost_equal"]
)


def builtin_reference(scope: Scope) -> str:
    """Human-readable builtin list for prompts: the given scope plus ANY."""
    lines = []
    for spec in _SPECS:
        if spec.scope in (scope, Scope.ANY):
            lines.append(f"- {spec.signature}: {spec.doc}")
    return "\n".join(lines)
