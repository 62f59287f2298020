"""Deterministic tabletop world: posed boxes, goals, rewards, oracle policy.

There is no rigid-body physics. Objects are axis-aligned boxes resting on
the table (z at half height); a pick-and-place action teleports the object
grasped near pose0 to pose1. Goals latch once matched, reward is normalized
so 1.0 means every goal element is satisfied, and the scripted oracle reads
goals directly, which makes it the ground truth for task solvability.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import NoGoalsError, SimError
from .scene import Bbox3D

POS_TOL = 0.05  # meters
ROT_TOL_DEG = 15.0  # applied only when sixdof is on
GRASP_TOL = 0.03  # meters from object center

DEFAULT_BOUNDS = Bbox3D((0.25, -0.5, 0.0), (0.75, 0.5, 0.3))
DEFAULT_MAX_STEPS = 20
DEFAULT_OBJECT_SIZE = (0.05, 0.05, 0.05)
DEFAULT_ZONE_SIZE = (0.2, 0.2, 0.2)
RANDOM_POSE_ATTEMPTS = 100

_DONE_EPS = 1e-6
_REWARD_EPS = 1e-9


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    qx: float = 0.0
    qy: float = 0.0
    qz: float = 0.0
    qw: float = 1.0

    @property
    def position(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    @property
    def quaternion(self) -> tuple[float, float, float, float]:
        return (self.qx, self.qy, self.qz, self.qw)

    def distance_to(self, other: "Pose") -> float:
        return math.dist(self.position, other.position)

    def rotation_angle_to(self, other: "Pose") -> float:
        """Relative rotation angle in degrees between the two quaternions."""
        dot = (
            self.qx * other.qx + self.qy * other.qy + self.qz * other.qz + self.qw * other.qw
        )
        na = math.sqrt(sum(q * q for q in self.quaternion))
        nb = math.sqrt(sum(q * q for q in other.quaternion))
        if na == 0 or nb == 0:
            raise SimError("zero-length quaternion")
        cos_half = min(1.0, abs(dot) / (na * nb))
        return math.degrees(2.0 * math.acos(cos_half))

    def to_json(self) -> list[float]:
        return [self.x, self.y, self.z, self.qx, self.qy, self.qz, self.qw]

    @classmethod
    def from_json(cls, data) -> "Pose":
        return cls(*[float(v) for v in data])


def _require_pose(value, what: str) -> Pose:
    if not isinstance(value, Pose):
        raise SimError(f"{what} must be a pose, got {type(value).__name__}")
    return value


@dataclass
class ObjectRecord:
    object_id: str
    urdf: str
    pose: Pose
    initial_pose: Pose
    size: tuple[float, float, float]
    fixed: bool = False

    def to_json(self) -> dict:
        return {
            "object_id": self.object_id,
            "urdf": self.urdf,
            "pose": self.pose.to_json(),
            "initial_pose": self.initial_pose.to_json(),
            "size": list(self.size),
            "fixed": self.fixed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ObjectRecord":
        return cls(
            object_id=data["object_id"],
            urdf=data["urdf"],
            pose=Pose.from_json(data["pose"]),
            initial_pose=Pose.from_json(data["initial_pose"]),
            size=tuple(data["size"]),
            fixed=bool(data["fixed"]),
        )


class Metric:
    POSE = "pose"
    ZONE = "zone"


@dataclass
class Goal:
    object_ids: list[str]
    target_poses: list[Pose]
    metric: str
    step_max_reward: float
    language_goal: str
    zone_size: tuple[float, float, float] = DEFAULT_ZONE_SIZE
    matched: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.object_ids:
            raise SimError("goal needs at least one object")
        if len(self.object_ids) != len(self.target_poses):
            raise SimError(
                f"goal has {len(self.object_ids)} objects but "
                f"{len(self.target_poses)} target poses"
            )
        if self.metric not in (Metric.POSE, Metric.ZONE):
            raise SimError(f'goal metric must be "pose" or "zone", got {self.metric!r}')
        if not (0 < self.step_max_reward <= 1 + _REWARD_EPS):
            raise SimError(f"step_max_reward must be in (0, 1], got {self.step_max_reward}")
        if not self.matched:
            self.matched = [False] * len(self.object_ids)

    def to_json(self) -> dict:
        return {
            "object_ids": list(self.object_ids),
            "target_poses": [p.to_json() for p in self.target_poses],
            "metric": self.metric,
            "step_max_reward": self.step_max_reward,
            "language_goal": self.language_goal,
            "zone_size": list(self.zone_size),
            "matched": list(self.matched),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Goal":
        return cls(
            object_ids=list(data["object_ids"]),
            target_poses=[Pose.from_json(p) for p in data["target_poses"]],
            metric=data["metric"],
            step_max_reward=float(data["step_max_reward"]),
            language_goal=data["language_goal"],
            zone_size=tuple(data["zone_size"]),
            matched=list(data["matched"]),
        )


@dataclass(frozen=True)
class Action:
    pose0: Pose  # pick
    pose1: Pose  # place

    def to_json(self) -> dict:
        return {"pose0": self.pose0.to_json(), "pose1": self.pose1.to_json()}


@dataclass
class RewardTrace:
    """Per-step rewards of one episode."""

    deltas: list[float] = field(default_factory=list)
    total: float = 0.0
    steps: int = 0
    done: bool = False
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "deltas": self.deltas,
            "total": self.total,
            "steps": self.steps,
            "done": self.done,
            "error": self.error,
        }


class SimEnvironment:
    """One tabletop episode: build it via the setup builtins, then step it."""

    def __init__(
        self,
        bounds: Bbox3D = DEFAULT_BOUNDS,
        size_table: dict[str, tuple[float, float, float]] | None = None,
        rng_seed: int = 0,
    ):
        self.bounds = bounds
        self.size_table = dict(size_table or {})
        self.rng = random.Random(rng_seed)
        self.objects: dict[str, ObjectRecord] = {}
        self.goals: list[Goal] = []
        self.max_steps = DEFAULT_MAX_STEPS
        self.sixdof = False
        self.step_count = 0
        self.accumulated_reward = 0.0
        self._counter = 0
        self._last_fixed: str | None = None

    def seed(self, n: int):
        self.rng = random.Random(n)

    # --- construction (setup builtins) ------------------------------------

    def _size_for(self, urdf: str) -> tuple[float, float, float]:
        return self.size_table.get(urdf, DEFAULT_OBJECT_SIZE)

    def _add(self, urdf: str, pose, fixed: bool) -> str:
        p = _require_pose(pose, "object pose")
        if not isinstance(urdf, str) or not urdf:
            raise SimError(f"urdf reference must be a non-empty string, got {urdf!r}")
        self._counter += 1
        object_id = f"{'fixed' if fixed else 'obj'}_{self._counter}"
        self.objects[object_id] = ObjectRecord(
            object_id=object_id,
            urdf=urdf,
            pose=p,
            initial_pose=p,
            size=self._size_for(urdf),
            fixed=fixed,
        )
        if fixed:
            self._last_fixed = object_id
        return object_id

    def add_object(self, urdf: str, pose) -> str:
        return self._add(urdf, pose, fixed=False)

    def add_fixed(self, urdf: str, pose) -> str:
        return self._add(urdf, pose, fixed=True)

    def fill_template(self, template: str, dims) -> str:
        if not isinstance(template, str) or not template:
            raise SimError("template must be a non-empty string")
        if not isinstance(dims, list) or len(dims) != 3:
            raise SimError("dims must be a list of three numbers")
        sizes = []
        for d in dims:
            if not isinstance(d, (int, float)) or isinstance(d, bool) or d <= 0:
                raise SimError(f"template dimensions must be positive numbers, got {d!r}")
            sizes.append(float(d))
        urdf = f"{template}@{sizes[0]:.4f}x{sizes[1]:.4f}x{sizes[2]:.4f}"
        self.size_table[urdf] = (sizes[0], sizes[1], sizes[2])
        return urdf

    def add_goal(
        self,
        objs,
        targ_poses,
        metric: str,
        step_max_reward,
        language_goal: str,
        zone_size=None,
    ):
        if not isinstance(objs, list) or not isinstance(targ_poses, list):
            raise SimError("add_goal needs a list of objects and a list of target poses")
        ids: list[str] = []
        for obj in objs:
            if obj not in self.objects:
                raise SimError(f"unknown object {obj!r} in goal")
            if self.objects[obj].fixed:
                raise SimError(f"goal object {obj!r} is fixed and cannot be moved")
            ids.append(obj)
        poses = [_require_pose(p, "goal target") for p in targ_poses]
        if not isinstance(step_max_reward, (int, float)) or isinstance(step_max_reward, bool):
            raise SimError("step_max_reward must be a number")
        if not isinstance(language_goal, str):
            raise SimError("language_goal must be a string")

        if zone_size is None:
            if self._last_fixed is not None:
                size = self.objects[self._last_fixed].size
            else:
                size = DEFAULT_ZONE_SIZE
        else:
            if not isinstance(zone_size, list) or len(zone_size) != 3:
                raise SimError("zone_size must be a list of three numbers")
            size = tuple(float(v) for v in zone_size)

        goal = Goal(
            object_ids=ids,
            target_poses=poses,
            metric=metric,
            step_max_reward=float(step_max_reward),
            language_goal=language_goal,
            zone_size=size,
        )
        total = sum(g.step_max_reward for g in self.goals) + goal.step_max_reward
        if total > 1 + _REWARD_EPS:
            raise SimError(
                f"goal rewards sum to {total:.6f}; they must not exceed 1.0"
            )
        self.goals.append(goal)

    def set_max_steps(self, n):
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            raise SimError(f"max_steps must be a positive integer, got {n!r}")
        self.max_steps = n

    def set_sixdof(self, flag):
        self.sixdof = bool(flag)

    def get_random_pose(self, _env, size):
        """Collision-free resting pose for the given [x, y, z] size, or None.

        At most a fixed number of uniform draws inside the shrunken bounds;
        the attempt bound, not the script, guarantees termination.
        """
        if not isinstance(size, list) or len(size) != 3:
            raise SimError("size must be a list of three numbers")
        sx, sy, sz = (float(v) for v in size)
        if sx <= 0 or sy <= 0 or sz <= 0:
            raise SimError(f"size must be positive, got {size!r}")
        (x0, y0, _z0) = self.bounds.min_corner
        (x1, y1, _z1) = self.bounds.max_corner
        lo_x, hi_x = x0 + sx / 2, x1 - sx / 2
        lo_y, hi_y = y0 + sy / 2, y1 - sy / 2
        if lo_x > hi_x or lo_y > hi_y:
            return None
        for _ in range(RANDOM_POSE_ATTEMPTS):
            x = self.rng.uniform(lo_x, hi_x)
            y = self.rng.uniform(lo_y, hi_y)
            if not self._footprint_overlaps(x, y, sx, sy):
                return Pose(x, y, sz / 2)
        return None

    def _footprint_overlaps(self, x: float, y: float, sx: float, sy: float) -> bool:
        for rec in self.objects.values():
            ox, oy = rec.pose.x, rec.pose.y
            if abs(x - ox) < (sx + rec.size[0]) / 2 and abs(y - oy) < (sy + rec.size[1]) / 2:
                return True
        return False

    # --- episode -----------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.accumulated_reward >= 1 - _DONE_EPS or self.step_count >= self.max_steps

    def observation(self) -> list:
        return [
            [rec.object_id, rec.pose.x, rec.pose.y, rec.pose.z]
            for rec in self.objects.values()
            if not rec.fixed
        ]

    def reset(self) -> list:
        if not self.goals:
            raise NoGoalsError("simulation registered no goals")
        self.step_count = 0
        self.accumulated_reward = 0.0
        for rec in self.objects.values():
            rec.pose = rec.initial_pose
        for goal in self.goals:
            goal.matched = [False] * len(goal.object_ids)
        return self.observation()

    def _element_matched(self, goal: Goal, i: int) -> bool:
        obj = self.objects[goal.object_ids[i]]
        target = goal.target_poses[i]
        if goal.metric == Metric.POSE:
            if obj.pose.distance_to(target) > POS_TOL:
                return False
            if self.sixdof and obj.pose.rotation_angle_to(target) > ROT_TOL_DEG:
                return False
            return True
        half = [s / 2 for s in goal.zone_size]
        return all(
            abs(c - t) <= h
            for c, t, h in zip(obj.pose.position, target.position, half)
        )

    def _evaluate_goals(self) -> float:
        delta = 0.0
        for goal in self.goals:
            newly = 0
            for i in range(len(goal.object_ids)):
                if goal.matched[i]:
                    continue
                if self._element_matched(goal, i):
                    goal.matched[i] = True
                    newly += 1
            if newly:
                delta += goal.step_max_reward * (newly / len(goal.object_ids))
        return delta

    def step(self, action) -> tuple[list, float, bool, dict]:
        """Apply one pick-and-place action (or None to waste the step)."""
        if self.done:
            raise SimError("episode is done; call reset")
        info: dict = {}
        if action is not None:
            if not isinstance(action, Action):
                raise SimError(f"step needs an action or none, got {type(action).__name__}")
            if not (
                self.bounds.contains(action.pose0.position)
                and self.bounds.contains(action.pose1.position)
            ):
                info["out_of_bounds"] = True
                action = None
        if action is not None:
            grasped = self._nearest_movable(action.pose0)
            if grasped is None:
                info["no_grasp"] = True
            else:
                grasped.pose = action.pose1
        delta = self._evaluate_goals()
        self.accumulated_reward = min(self.accumulated_reward + delta, 1.0 + _REWARD_EPS)
        self.step_count += 1
        return self.observation(), delta, self.done, info

    def _nearest_movable(self, pick: Pose) -> ObjectRecord | None:
        best: ObjectRecord | None = None
        best_dist = GRASP_TOL
        for rec in self.objects.values():
            if rec.fixed:
                continue
            d = rec.pose.distance_to(pick)
            if d <= best_dist:
                best, best_dist = rec, d
        return best

    def oracle_act(self) -> Action | None:
        """Expert action for the first unmatched goal element, if any."""
        for goal in self.goals:
            for i, matched in enumerate(goal.matched):
                if matched:
                    continue
                obj = self.objects[goal.object_ids[i]]
                target = goal.target_poses[i]
                if goal.metric == Metric.POSE:
                    place = target
                else:
                    place = self._zone_placement(goal, i, obj)
                return Action(pose0=obj.pose, pose1=place)
        return None

    def _zone_placement(self, goal: Goal, i: int, obj: ObjectRecord) -> Pose:
        """Deterministic free spot inside the zone: scan a coarse grid.

        Falls back to the zone center when every cell is occupied; the zone
        membership test only needs the center inside the box either way.
        """
        target = goal.target_poses[i]
        hx, hy = goal.zone_size[0] / 2, goal.zone_size[1] / 2
        sx, sy = obj.size[0], obj.size[1]
        steps = 3
        for iy in range(steps):
            for ix in range(steps):
                x = target.x - hx + (ix + 0.5) * (2 * hx / steps)
                y = target.y - hy + (iy + 0.5) * (2 * hy / steps)
                clash = False
                for other in self.objects.values():
                    if other.fixed or other.object_id == obj.object_id:
                        continue
                    if (
                        abs(x - other.pose.x) < (sx + other.size[0]) / 2
                        and abs(y - other.pose.y) < (sy + other.size[1]) / 2
                    ):
                        clash = True
                        break
                if not clash:
                    return Pose(x, y, target.z)
        return Pose(target.x, target.y, target.z)

    # --- DSL bindings --------------------------------------------------------

    def setup_builtins(self) -> dict:
        return {
            "add_object": self.add_object,
            "add_fixed": self.add_fixed,
            "fill_template": self.fill_template,
            "get_random_pose": self.get_random_pose,
            "add_goal": self.add_goal,
            "set_max_steps": self.set_max_steps,
            "set_sixdof": self.set_sixdof,
            "pose": make_pose,
        }

    def test_builtins(self) -> dict:
        def step_delta(act):
            _obs, delta, _done, _info = self.step(act)
            return delta

        return {
            "reset": self.reset,
            "oracle_act": self.oracle_act,
            "step": step_delta,
            "total_reward": lambda: self.accumulated_reward,
            "done": lambda: self.done,
            "pose": make_pose,
        }

    # --- persistence --------------------------------------------------------

    def state_json(self) -> dict:
        return {
            "bounds": self.bounds.to_json(),
            "objects": [rec.to_json() for rec in self.objects.values()],
            "goals": [g.to_json() for g in self.goals],
            "max_steps": self.max_steps,
            "sixdof": self.sixdof,
            "step_count": self.step_count,
            "accumulated_reward": self.accumulated_reward,
        }

    def save_state(self, path: Path | str):
        Path(path).write_text(json.dumps(self.state_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_state_json(cls, data: dict) -> "SimEnvironment":
        env = cls(bounds=Bbox3D.from_json(data["bounds"]))
        for obj_data in data["objects"]:
            rec = ObjectRecord.from_json(obj_data)
            env.objects[rec.object_id] = rec
            if rec.fixed:
                env._last_fixed = rec.object_id
        env.goals = [Goal.from_json(g) for g in data["goals"]]
        env.max_steps = int(data["max_steps"])
        env.sixdof = bool(data["sixdof"])
        env.step_count = int(data["step_count"])
        env.accumulated_reward = float(data["accumulated_reward"])
        env._counter = len(env.objects)
        return env

    @classmethod
    def load_state(cls, path: Path | str) -> "SimEnvironment":
        return cls.from_state_json(json.loads(Path(path).read_text(encoding="utf-8")))


def make_pose(x, y, z, qx=0.0, qy=0.0, qz=0.0, qw=1.0) -> Pose:
    for v in (x, y, z, qx, qy, qz, qw):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise SimError(f"pose components must be numbers, got {v!r}")
    return Pose(float(x), float(y), float(z), float(qx), float(qy), float(qz), float(qw))


def run_oracle_episode(env: SimEnvironment) -> RewardTrace:
    """Reset and drive the environment with the oracle until done.

    Breaks out early if the oracle has no action left, so it terminates
    even on tasks whose rewards cannot reach 1.
    """
    trace = RewardTrace()
    try:
        env.reset()
        while not env.done:
            act = env.oracle_act()
            if act is None:
                break
            _obs, delta, _done, _info = env.step(act)
            trace.deltas.append(delta)
        trace.total = env.accumulated_reward
        trace.steps = env.step_count
        trace.done = env.done
    except Exception as exc:  # noqa: BLE001 - an errored episode is data, not a crash
        trace.error = str(exc)
    return trace
