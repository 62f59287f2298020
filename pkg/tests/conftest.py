"""Shared fixtures: synthetic scene bundles, a small asset catalog,
scripted chat replies, and hand-authored task scripts."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from simforge.catalog import AssetCatalog, AssetRecord, save_catalog
from simforge.llm import ScriptedChatProvider

# Small camera keeps bundle fixtures fast; principal point inside the image.
CAM = {
    "fx": 40.0,
    "fy": 40.0,
    "cx": 16.0,
    "cy": 12.0,
    "width": 32,
    "height": 24,
    "depth_scale": 1.0,
}

IDENTITY_CALIB = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
]


def write_png(path: Path, color, size=(4, 4)):
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.zeros((size[1], size[0], 3), dtype=np.uint8)
    arr[:, :] = color
    Image.fromarray(arr).save(path)
    return path


def rect_rle(u0: int, v0: int, u1: int, v1: int, width: int = CAM["width"]):
    """Row-major runs for the half-open pixel rectangle [u0,u1) x [v0,v1)."""
    return [[v * width + u0, u1 - u0] for v in range(v0, v1)]


def write_bundle(root: Path, scene_id: str, objects, calib=None, truth=None):
    """Create a scene bundle directory.

    objects: list of dicts with crop_id, rect (u0, v0, u1, v1), depth.
    truth: crop_id -> asset id (or NO_OBJECT); omitted means no truth.json.
    """
    bundle = root / scene_id
    bundle.mkdir(parents=True, exist_ok=True)
    w, h = CAM["width"], CAM["height"]

    depth = np.zeros((h, w), dtype=np.float32)
    image = np.full((h, w, 3), 40, dtype=np.uint8)
    masks = []
    palette = [(220, 200, 40), (200, 60, 50), (70, 90, 210), (90, 200, 90)]
    for i, obj in enumerate(objects):
        u0, v0, u1, v1 = obj["rect"]
        depth[v0:v1, u0:u1] = obj["depth"]
        image[v0:v1, u0:u1] = palette[i % len(palette)]
        masks.append(
            {
                "crop_id": obj["crop_id"],
                "rle": rect_rle(u0, v0, u1, v1, w),
                "bbox2d": [u0, v0, u1 - 1, v1 - 1],  # inclusive corners
            }
        )

    meta = dict(CAM)
    meta["calib"] = calib if calib is not None else IDENTITY_CALIB
    (bundle / "meta.json").write_text(json.dumps(meta), encoding="utf-8")
    depth.tofile(bundle / "depth.f32")
    Image.fromarray(image).save(bundle / "image.png")
    (bundle / "masks.json").write_text(json.dumps(masks), encoding="utf-8")
    if truth is not None:
        (bundle / "truth.json").write_text(json.dumps(truth), encoding="utf-8")
    return bundle


DEFAULT_OBJECTS = [
    {"crop_id": "crop_0", "rect": (4, 4, 10, 12), "depth": 0.8},
    {"crop_id": "crop_1", "rect": (18, 8, 26, 16), "depth": 0.6},
]


@pytest.fixture
def bundle_dir(tmp_path):
    return write_bundle(
        tmp_path, "scene-a", DEFAULT_OBJECTS,
        truth={"crop_0": "food/banana", "crop_1": "food/soup-can"},
    )


@pytest.fixture(scope="session")
def catalog_dir(tmp_path_factory):
    """Catalog JSONL plus render PNGs for three described assets."""
    root = tmp_path_factory.mktemp("catalog")
    specs = [
        ("food/banana", (230, 210, 60), "a ripe yellow banana with brown speckles"),
        ("food/soup-can", (190, 40, 40), "a red and white soup can with a paper label"),
        ("kitchen/mug", (60, 80, 200), "a glossy blue ceramic mug with a round handle"),
    ]
    records = []
    for asset_id, color, description in specs:
        stem = asset_id.replace("/", "_")
        renders = [
            str(write_png(root / "renders" / f"{stem}_{i}.png", color)) for i in range(2)
        ]
        records.append(
            AssetRecord(
                asset_id=asset_id,
                urdf_path=f"assets/{asset_id}.urdf",
                render_paths=tuple(renders),
                description=description,
                size=(0.05, 0.05, 0.08),
            )
        )
    catalog = AssetCatalog(records=records)
    path = root / "catalog.jsonl"
    save_catalog(catalog, path)
    return path


@pytest.fixture
def small_catalog(catalog_dir):
    from simforge.catalog import load_catalog

    return load_catalog(catalog_dir)


def scripted(replies_by_tag, default: str | None = None) -> ScriptedChatProvider:
    return ScriptedChatProvider(replies_by_tag, default=default)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print acceptance verdicts collected during the run, if any."""
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)


# --- hand-authored task scripts ---------------------------------------------

# Seven movable items packed into a fixed crate, one goal per item worth 1/7.
# Random start poses can never pre-satisfy a goal: the crate footprint keeps
# spawns at least 0.06 m from any target, beyond the 0.05 m pose tolerance.
PACK_FOOD_SIM = """\
# Pack seven grocery items into the crate at the workspace center.

proc setup(env) {
    let crate = fill_template("template/container.urdf", [0.28, 0.2, 0.06])
    add_fixed(crate, pose(0.5, 0.0, 0.03))

    let targets = [
        pose(0.42, -0.04, 0.02), pose(0.5, -0.04, 0.02), pose(0.58, -0.04, 0.02),
        pose(0.42, 0.04, 0.02), pose(0.5, 0.04, 0.02), pose(0.58, 0.04, 0.02),
        pose(0.5, 0.0, 0.08)
    ]
    let item_urdf = fill_template("template/cube.urdf", [0.04, 0.04, 0.04])
    let i = 0
    repeat 7 {
        let start = get_random_pose(env, [0.04, 0.04, 0.04])
        assert_true(start != none, "no free space for an item")
        let item = add_object(item_urdf, start)
        add_goal([item], [targets[i]], "pose", 1.0 / 7.0, "pack the item into the crate")
        i = i + 1
    }
    set_max_steps(10)
}
"""

PACK_FOOD_TESTS = """\
# The oracle must pack all seven items, one placement each.

proc drive_oracle() {
    reset()
    while not done() {
        let act = oracle_act()
        if act == none {
            return
        }
        step(act)
    }
}

proc test_oracle_packs_everything() {
    drive_oracle()
    assert_almost_equal(total_reward(), 1.0, 0.01, "oracle did not pack every item")
}

proc test_seven_placements_suffice() {
    reset()
    let moves = 0
    while not done() {
        let act = oracle_act()
        if act == none {
            return
        }
        step(act)
        moves = moves + 1
    }
    assert_true(moves <= 7, "expected one placement per item")
}

proc test_reset_clears_reward() {
    drive_oracle()
    reset()
    assert_almost_equal(total_reward(), 0.0, 0.0001, "reset must zero the reward")
}
"""


@pytest.fixture
def pack_food(tmp_path):
    sim = tmp_path / "pack-food.task"
    tests = tmp_path / "pack-food.tests"
    sim.write_text(PACK_FOOD_SIM, encoding="utf-8")
    tests.write_text(PACK_FOOD_TESTS, encoding="utf-8")
    return sim, tests


# --- golden generation replies ----------------------------------------------

# One constant reply per request tag lets the same cassette serve every cell
# of an experiment grid: identical fingerprints always saw identical replies.
GOLDEN_TASKDEF_REPLY = """\
Here is the task.

```
{
  "task-name": "pack-the-banana",
  "task-description": "Place the banana into the container at the center of the table.",
  "assets-used": ["food/banana", "template/container"]
}
```
"""

GOLDEN_SIM_REPLY = """\
```
proc setup(env) {
    let box = fill_template("template/container.urdf", [0.16, 0.16, 0.06])
    add_fixed(box, pose(0.5, 0.0, 0.03))
    let start = get_random_pose(env, [0.04, 0.04, 0.04])
    assert_true(start != none, "no free start pose")
    let item = add_object("assets/food/banana.urdf", start)
    add_goal([item], [pose(0.5, 0.0, 0.08)], "pose", 1.0, "put the banana in the container")
    set_max_steps(4)
}
```
"""

GOLDEN_TESTS_REPLY = """\
```
proc drive_oracle() {
    reset()
    while not done() {
        let act = oracle_act()
        if act == none {
            return
        }
        step(act)
    }
}

proc test_oracle_solves_task() {
    drive_oracle()
    assert_almost_equal(total_reward(), 1.0, 0.01, "oracle should solve the task")
}
```
"""

GOLDEN_REPLIES = {
    "describe_crop": ["a small bright yellow object"],
    "match_crop": ["1"],
    "gen_taskdef": [GOLDEN_TASKDEF_REPLY],
    "gen_sim": [GOLDEN_SIM_REPLY],
    "gen_tests": [GOLDEN_TESTS_REPLY],
}


@pytest.fixture
def golden_provider():
    return ScriptedChatProvider({tag: list(v) for tag, v in GOLDEN_REPLIES.items()})
