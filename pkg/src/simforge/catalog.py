"""Asset catalog: multi-view visual descriptions of the simulator's objects.

Each simulatable asset ships a URDF plus one or more pre-rendered views.
A vision model turns those views into a text description used later to
match scene crops against the catalog. The catalog persists as JSONL, one
asset per line, ordered by asset id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .errors import DuplicateIdError, SchemaError
from .llm import ChatMessage, ChatProvider, ChatRequest, MessagePart, TEMP_CLASSIFY

DESCRIBE_ASSET_TAG = "describe_asset"

_DESCRIBE_PROMPT = (
    "These images show one object from several viewpoints. Describe the "
    "object in two or three sentences covering its shape, colors, any "
    "branding or text, and surface patterns. Mention only what is visible."
)


@dataclass(frozen=True)
class AssetRecord:
    """One simulatable asset: URDF, renders, and a visual description."""

    asset_id: str
    urdf_path: str
    render_paths: tuple[str, ...]
    description: str = ""
    size: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not self.asset_id:
            raise SchemaError("asset_id must be non-empty", field="asset_id")
        if not self.render_paths:
            raise SchemaError(
                f"asset {self.asset_id!r} has no renders", field="render_paths"
            )

    def to_json(self) -> dict:
        out = {
            "asset_id": self.asset_id,
            "urdf_path": self.urdf_path,
            "render_paths": list(self.render_paths),
            "description": self.description,
        }
        if self.size is not None:
            out["size"] = list(self.size)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "AssetRecord":
        try:
            size = data.get("size")
            return cls(
                asset_id=data["asset_id"],
                urdf_path=data["urdf_path"],
                render_paths=tuple(data["render_paths"]),
                description=data.get("description", ""),
                size=tuple(size) if size is not None else None,
            )
        except KeyError as exc:
            raise SchemaError(f"asset record missing key {exc.args[0]!r}", field=exc.args[0])


@dataclass
class AssetCatalog:
    records: list[AssetRecord] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.asset_id in seen:
                raise DuplicateIdError(f"duplicate asset_id {rec.asset_id!r}")
            seen.add(rec.asset_id)
        self.records = sorted(self.records, key=lambda r: r.asset_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def ids(self) -> list[str]:
        return [r.asset_id for r in self.records]

    def get(self, asset_id: str) -> AssetRecord:
        for rec in self.records:
            if rec.asset_id == asset_id:
                return rec
        raise KeyError(asset_id)

    def __contains__(self, asset_id: str) -> bool:
        return any(r.asset_id == asset_id for r in self.records)


def describe_asset(provider: ChatProvider, asset: AssetRecord, model: str) -> str:
    """One chat call per asset, all renders attached."""
    parts = [MessagePart.from_text(_DESCRIBE_PROMPT)]
    parts.extend(MessagePart.from_image(p) for p in asset.render_paths)
    req = ChatRequest(
        model=model,
        messages=(ChatMessage.user(*parts),),
        temperature=TEMP_CLASSIFY,
        request_tag=DESCRIBE_ASSET_TAG,
    )
    return provider.complete(req).strip()


def build_catalog(
    provider: ChatProvider, assets: Sequence[AssetRecord], model: str
) -> tuple[AssetCatalog, list[str]]:
    """Describe every asset; failures are reported, not fatal.

    Returns the catalog (failed assets keep an empty description) and a
    list of human-readable failure summaries.
    """
    described: list[AssetRecord] = []
    failures: list[str] = []
    for asset in sorted(assets, key=lambda a: a.asset_id):
        try:
            text = describe_asset(provider, asset, model)
            described.append(replace(asset, description=text))
        except Exception as exc:  # noqa: BLE001 - collect, don't abort the batch
            failures.append(f"{asset.asset_id}: {exc}")
            described.append(asset)
    return AssetCatalog(records=described), failures


def save_catalog(catalog: AssetCatalog, path: Path | str) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as fh:
        for rec in catalog.records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def load_catalog(path: Path | str) -> AssetCatalog:
    records: list[AssetRecord] = []
    seen: dict[str, int] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"bad JSON in catalog: {exc}", line=lineno)
            rec = AssetRecord.from_json(data)
            if rec.asset_id in seen:
                raise DuplicateIdError(
                    f"asset_id {rec.asset_id!r} on line {lineno} "
                    f"already defined on line {seen[rec.asset_id]}",
                    line=lineno,
                )
            seen[rec.asset_id] = lineno
            records.append(rec)
    return AssetCatalog(records=records)


# Parameterizable assets the generator may always use, beyond what was
# matched in the scene. Sizes are nominal dimensions in meters.
TEMPLATE_ASSETS: tuple[AssetRecord, ...] = (
    AssetRecord(
        asset_id="template/container",
        urdf_path="template/container.urdf",
        render_paths=("template/container.png",),
        description="An open-top rectangular container; dimensions are set per task.",
        size=(0.12, 0.12, 0.06),
    ),
    AssetRecord(
        asset_id="template/cube_red",
        urdf_path="template/cube.urdf",
        render_paths=("template/cube_red.png",),
        description="A small red cube.",
        size=(0.04, 0.04, 0.04),
    ),
    AssetRecord(
        asset_id="template/cube_green",
        urdf_path="template/cube.urdf",
        render_paths=("template/cube_green.png",),
        description="A small green cube.",
        size=(0.04, 0.04, 0.04),
    ),
    AssetRecord(
        asset_id="template/cube_blue",
        urdf_path="template/cube.urdf",
        render_paths=("template/cube_blue.png",),
        description="A small blue cube.",
        size=(0.04, 0.04, 0.04),
    ),
)

TEMPLATE_ASSET_IDS: frozenset[str] = frozenset(a.asset_id for a in TEMPLATE_ASSETS)
