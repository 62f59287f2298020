"""Match scene crops against the asset catalog.

Four modes: the chat-based matcher can see the crop image plus catalog
descriptions (full), images on both sides (image_only), or text on both
sides (text_only); the embedding baseline scores cosine similarity between
precomputed vectors and applies a fixed acceptance threshold. A crop that
matches nothing is assigned the NO_OBJECT sentinel.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .catalog import AssetCatalog
from .errors import UnparseableReplyError
from .llm import (
    ChatMessage,
    ChatProvider,
    ChatRequest,
    EmbeddingSource,
    MessagePart,
    TEMP_CLASSIFY,
)
from .scene import NO_OBJECT, SceneDescription, SceneObject

DESCRIBE_CROP_TAG = "describe_crop"
MATCH_CROP_TAG = "match_crop"

EMBED_ACCEPT_THRESHOLD = 0.5

_DESCRIBE_CROP_PROMPT = (
    "Describe the object in this image crop in one or two sentences: its "
    "shape, colors, any branding or text, and surface patterns. The gray "
    "background is not part of the object."
)

_NO_MATCH_SYNONYMS = {"no_object", "no object", "none", "nothing", "no match"}

_STRICT_REMINDER = (
    "Answer with exactly one candidate number from the list, or the single "
    "token NO_OBJECT. No other words."
)


class MatchMode(enum.Enum):
    FULL = "full"
    IMAGE_ONLY = "image_only"
    TEXT_ONLY = "text_only"
    EMBEDDING = "embedding"


@dataclass(frozen=True)
class MatchResult:
    crop_id: str
    predicted: str  # asset_id or NO_OBJECT
    similarity: float | None = None
    raw_reply: str | None = None
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "crop_id": self.crop_id,
            "predicted": self.predicted,
            "similarity": self.similarity,
            "raw_reply": self.raw_reply,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, data: dict) -> "MatchResult":
        return cls(
            crop_id=data["crop_id"],
            predicted=data["predicted"],
            similarity=data.get("similarity"),
            raw_reply=data.get("raw_reply"),
            error=data.get("error"),
        )


def describe_crop(provider: ChatProvider, crop_path: str, model: str) -> str:
    req = ChatRequest(
        model=model,
        messages=(
            ChatMessage.user(
                MessagePart.from_text(_DESCRIBE_CROP_PROMPT),
                MessagePart.from_image(crop_path),
            ),
        ),
        temperature=TEMP_CLASSIFY,
        request_tag=DESCRIBE_CROP_TAG,
    )
    return provider.complete(req).strip()


def parse_match_reply(reply: str, catalog_ids: Sequence[str]) -> str:
    """Strictly parse a matcher reply into an asset id or NO_OBJECT.

    Accepts a bare 1-based candidate number or a no-match token. Anything
    else, including an out-of-range number, is an UnparseableReplyError.
    """
    text = reply.strip()
    if text.lower().rstrip(".") in _NO_MATCH_SYNONYMS:
        return NO_OBJECT
    m = re.fullmatch(r"(\d+)\.?", text)
    if m:
        idx = int(m.group(1))
        if 1 <= idx <= len(catalog_ids):
            return catalog_ids[idx - 1]
        raise UnparseableReplyError(
            f"candidate number {idx} out of range 1..{len(catalog_ids)}"
        )
    raise UnparseableReplyError(f"expected a candidate number or NO_OBJECT, got {text!r}")


def _match_prompt_parts(
    obj: SceneObject, catalog: AssetCatalog, mode: MatchMode
) -> list[MessagePart]:
    header = (
        "Decide which catalog object, if any, is shown in the query crop. "
        "Reply with exactly one candidate number, or NO_OBJECT if none of "
        "the candidates is the same object."
    )
    parts: list[MessagePart] = [MessagePart.from_text(header)]

    if mode in (MatchMode.FULL, MatchMode.IMAGE_ONLY):
        parts.append(MessagePart.from_text("Query crop:"))
        parts.append(MessagePart.from_image(obj.crop_image_ref))
    if mode in (MatchMode.FULL, MatchMode.TEXT_ONLY):
        desc = obj.description or "(no description available)"
        parts.append(MessagePart.from_text(f"Query description: {desc}"))

    parts.append(MessagePart.from_text("Candidates:"))
    for i, rec in enumerate(catalog, start=1):
        if mode == MatchMode.IMAGE_ONLY:
            parts.append(MessagePart.from_text(f"{i}:"))
            parts.append(MessagePart.from_image(rec.render_paths[0]))
        else:
            parts.append(MessagePart.from_text(f"{i}: {rec.description or rec.asset_id}"))
    return parts


def match_crop(
    provider: ChatProvider,
    obj: SceneObject,
    catalog: AssetCatalog,
    mode: MatchMode,
    model: str,
) -> MatchResult:
    """One matcher call with a single strict re-ask on a bad reply."""
    if mode == MatchMode.EMBEDDING:
        raise ValueError("embedding mode is handled by embedding_match")
    ids = catalog.ids()
    parts = _match_prompt_parts(obj, catalog, mode)
    req = ChatRequest(
        model=model,
        messages=(ChatMessage.user(*parts),),
        temperature=TEMP_CLASSIFY,
        request_tag=MATCH_CROP_TAG,
    )
    reply = provider.complete(req)
    try:
        return MatchResult(crop_id=obj.crop_id, predicted=parse_match_reply(reply, ids), raw_reply=reply)
    except UnparseableReplyError:
        pass

    retry = ChatRequest(
        model=model,
        messages=(
            ChatMessage.user(*parts),
            ChatMessage(role="assistant", parts=(MessagePart.from_text(reply),)),
            ChatMessage.user_text(_STRICT_REMINDER),
        ),
        temperature=TEMP_CLASSIFY,
        request_tag=MATCH_CROP_TAG,
    )
    second = provider.complete(retry)
    predicted = parse_match_reply(second, ids)  # raises if still bad
    return MatchResult(crop_id=obj.crop_id, predicted=predicted, raw_reply=second)


def embedding_match(
    crop_vec: np.ndarray, asset_vecs: dict[str, np.ndarray]
) -> tuple[str, float]:
    """Cosine best match over unit vectors; ties break to the smaller id.

    Returns (asset_id or NO_OBJECT, best similarity). A best score below
    the acceptance threshold yields NO_OBJECT.
    """
    best_id = NO_OBJECT
    best_sim = -np.inf
    for asset_id in sorted(asset_vecs):
        sim = float(np.dot(crop_vec, asset_vecs[asset_id]))
        if sim > best_sim:
            best_sim = sim
            best_id = asset_id
    if best_sim < EMBED_ACCEPT_THRESHOLD:
        return NO_OBJECT, best_sim
    return best_id, best_sim


def correspond_scene(
    scene: SceneDescription,
    catalog: AssetCatalog,
    mode: MatchMode,
    provider: ChatProvider | None = None,
    embeddings: EmbeddingSource | None = None,
    model: str = "",
) -> tuple[SceneDescription, list[MatchResult]]:
    """Assign matched_asset to every scene object.

    Per-object failures are recorded in the result and flag the object;
    they never abort the scene. In embedding mode crops are keyed by
    crop_id and assets by asset_id in the embedding source.
    """
    results: list[MatchResult] = []
    new_objects: list[SceneObject] = []

    asset_vecs: dict[str, np.ndarray] = {}
    if mode == MatchMode.EMBEDDING:
        if embeddings is None:
            raise ValueError("embedding mode needs an embedding source")
        ids = catalog.ids()
        vecs = embeddings.embed(ids)
        asset_vecs = dict(zip(ids, vecs))

    for obj in scene.objects:
        try:
            if mode == MatchMode.EMBEDDING:
                (crop_vec,) = embeddings.embed([obj.crop_id])
                predicted, sim = embedding_match(crop_vec, asset_vecs)
                result = MatchResult(crop_id=obj.crop_id, predicted=predicted, similarity=sim)
            else:
                if provider is None:
                    raise ValueError("chat modes need a provider")
                work = obj
                if mode in (MatchMode.FULL, MatchMode.TEXT_ONLY) and not obj.description:
                    work = replace(obj, description=describe_crop(provider, obj.crop_image_ref, model))
                result = match_crop(provider, work, catalog, mode, model)
                obj = work
        except Exception as exc:  # noqa: BLE001 - isolate per-object failures
            result = MatchResult(crop_id=obj.crop_id, predicted=NO_OBJECT, error=str(exc))
            obj = replace(obj, flags=[*obj.flags, "match_error"])
        results.append(result)
        new_objects.append(replace(obj, matched_asset=result.predicted))

    new_scene = replace(scene, objects=new_objects)
    return new_scene, results
