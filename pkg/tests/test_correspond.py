"""Crop-to-asset matching: reply parsing, chat modes, embedding baseline."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_best_match
from simforge.correspond import (
    EMBED_ACCEPT_THRESHOLD,
    MatchMode,
    MatchResult,
    correspond_scene,
    embedding_match,
    match_crop,
    parse_match_reply,
)
from simforge.errors import UnparseableReplyError
from simforge.llm import ScriptedChatProvider, normalize_embedding
from simforge.scene import NO_OBJECT, SceneDescription, SceneObject

IDS = ["food/banana", "food/soup-can", "kitchen/mug"]


class TestParseReply:
    @pytest.mark.parametrize(
        "reply,expected",
        [
            ("1", "food/banana"),
            (" 3 ", "kitchen/mug"),
            ("2.", "food/soup-can"),
            ("NO_OBJECT", NO_OBJECT),
            ("no object", NO_OBJECT),
            ("None", NO_OBJECT),
            ("nothing", NO_OBJECT),
            ("no match", NO_OBJECT),
        ],
    )
    def test_accepted_forms(self, reply, expected):
        assert parse_match_reply(reply, IDS) == expected

    @pytest.mark.parametrize("reply", ["0", "4", "yes", "items 1 and 2", ""])
    def test_rejected_forms(self, reply):
        with pytest.raises(UnparseableReplyError):
            parse_match_reply(reply, IDS)


def crop_object(tmp_path, crop_id="crop_0", description="a yellow fruit"):
    from conftest import write_png

    path = write_png(tmp_path / f"{crop_id}.png", (220, 210, 40))
    return SceneObject(
        crop_id=crop_id, bbox=None, crop_image_ref=str(path), description=description
    )


class TestMatchCrop:
    def test_direct_index(self, tmp_path, small_catalog):
        provider = ScriptedChatProvider({"match_crop": ["1"]})
        obj = crop_object(tmp_path)
        result = match_crop(provider, obj, small_catalog, MatchMode.FULL, "m")
        assert result.predicted == "food/banana"
        assert result.error is None

    def test_reask_once_then_succeeds(self, tmp_path, small_catalog):
        provider = ScriptedChatProvider({"match_crop": ["well, maybe the 2nd?", "2"]})
        obj = crop_object(tmp_path)
        result = match_crop(provider, obj, small_catalog, MatchMode.FULL, "m")
        assert result.predicted == "food/soup-can"
        assert len(provider.calls) == 2
        # The re-ask carries the rejected reply back as assistant context.
        roles = [m.role for m in provider.calls[1].messages]
        assert roles.count("assistant") == 1

    def test_reask_failure_propagates(self, tmp_path, small_catalog):
        provider = ScriptedChatProvider({"match_crop": ["hmm", "still prose"]})
        obj = crop_object(tmp_path)
        with pytest.raises(UnparseableReplyError):
            match_crop(provider, obj, small_catalog, MatchMode.FULL, "m")

    def test_image_only_sends_renders(self, tmp_path, small_catalog):
        provider = ScriptedChatProvider({"match_crop": ["3"]})
        obj = crop_object(tmp_path, description=None)
        result = match_crop(provider, obj, small_catalog, MatchMode.IMAGE_ONLY, "m")
        assert result.predicted == "kitchen/mug"
        (req,) = provider.calls
        image_parts = [p for m in req.messages for p in m.parts if p.kind == "image"]
        # crop image plus one render per candidate asset
        assert len(image_parts) == 1 + len(small_catalog)

    def test_text_only_sends_no_images(self, tmp_path, small_catalog):
        provider = ScriptedChatProvider({"match_crop": ["no object"]})
        obj = crop_object(tmp_path)
        result = match_crop(provider, obj, small_catalog, MatchMode.TEXT_ONLY, "m")
        assert result.predicted == NO_OBJECT
        (req,) = provider.calls
        assert all(p.kind == "text" for m in req.messages for p in m.parts)


def unit(v):
    return normalize_embedding(np.asarray(v, dtype=float))


class TestEmbeddingMatch:
    def test_picks_highest_cosine(self):
        assets = {"a": unit([1, 0]), "b": unit([0, 1])}
        predicted, sim = embedding_match(unit([0.9, 0.1]), assets)
        assert predicted == "a"
        assert sim == pytest.approx(np.dot(unit([0.9, 0.1]), unit([1, 0])))

    def test_below_threshold_is_no_object(self):
        assets = {"a": unit([1, 0])}
        predicted, sim = embedding_match(unit([-1, 0]), assets)
        assert predicted == NO_OBJECT
        assert sim < EMBED_ACCEPT_THRESHOLD

    def test_exactly_at_threshold_accepts(self):
        # cos(60 deg) = 0.5 exactly in these coordinates.
        assets = {"a": unit([1.0, 0.0])}
        query = np.array([0.5, np.sqrt(3.0) / 2.0])
        predicted, sim = embedding_match(query, assets)
        assert sim == pytest.approx(0.5, abs=1e-12)
        assert predicted == ("a" if sim >= 0.5 else NO_OBJECT)

    def test_tie_breaks_to_smaller_id(self):
        v = unit([1, 1])
        assets = {"zebra": v, "apple": v, "mango": v}
        predicted, _ = embedding_match(v, assets)
        assert predicted == "apple"

    @given(
        st.integers(1, 6),
        st.integers(2, 5),
        st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=80, deadline=None)
    def test_matches_brute_force_cosine(self, n_assets, dim, seed):
        rng = np.random.default_rng(seed)
        raw = {f"asset_{i:02d}": rng.normal(size=dim) for i in range(n_assets)}
        raw = {k: v for k, v in raw.items() if np.linalg.norm(v) > 1e-9}
        if not raw:
            return
        query_raw = rng.normal(size=dim)
        if np.linalg.norm(query_raw) < 1e-9:
            return
        assets = {k: unit(v) for k, v in raw.items()}
        query = unit(query_raw)
        predicted, sim = embedding_match(query, assets)
        oracle_id, oracle_sim = brute_force_best_match(
            query.tolist(), {k: v.tolist() for k, v in assets.items()}, EMBED_ACCEPT_THRESHOLD
        )
        assert predicted == (oracle_id if oracle_id is not None else NO_OBJECT)
        assert sim == pytest.approx(oracle_sim, abs=1e-9)


class TestCorrespondScene:
    def scene_with(self, tmp_path, n=2):
        objects = [crop_object(tmp_path, f"crop_{i}") for i in range(n)]
        return SceneDescription(scene_id="s", image_ref="none.png", objects=objects)

    def test_chat_mode_assigns_all(self, tmp_path, small_catalog):
        provider = ScriptedChatProvider({"match_crop": ["1", "NO_OBJECT"]})
        scene = self.scene_with(tmp_path)
        matched, results = correspond_scene(scene, small_catalog, MatchMode.FULL, provider=provider, model="m")
        assert [o.matched_asset for o in matched.objects] == ["food/banana", NO_OBJECT]
        assert matched.matched_assets() == ["food/banana"]
        assert len(results) == 2

    def test_describes_missing_descriptions(self, tmp_path, small_catalog):
        provider = ScriptedChatProvider(
            {"describe_crop": ["a red can"], "match_crop": ["2"]}
        )
        scene = self.scene_with(tmp_path, n=1)
        scene.objects[0].description = None
        matched, _ = correspond_scene(scene, small_catalog, MatchMode.FULL, provider=provider, model="m")
        assert matched.objects[0].description == "a red can"
        tags = [c.request_tag for c in provider.calls]
        assert tags == ["describe_crop", "match_crop"]

    def test_match_errors_flag_object(self, tmp_path, small_catalog):
        provider = ScriptedChatProvider({"match_crop": ["prose", "more prose"]})
        scene = self.scene_with(tmp_path, n=1)
        matched, results = correspond_scene(scene, small_catalog, MatchMode.FULL, provider=provider, model="m")
        assert matched.objects[0].matched_asset == NO_OBJECT
        assert "match_error" in matched.objects[0].flags
        assert results[0].error is not None

    def test_embedding_mode(self, tmp_path, small_catalog):
        scene = self.scene_with(tmp_path)

        class Table:
            def embed(self, keys):
                vecs = {
                    "food/banana": unit([1, 0]),
                    "food/soup-can": unit([0, 1]),
                    "kitchen/mug": unit([1, 1]),
                    "crop_0": unit([0.9, 0.05]),
                    "crop_1": unit([-1, -1]),
                }
                return [vecs[k] for k in keys]

        matched, results = correspond_scene(
            scene, small_catalog, MatchMode.EMBEDDING, embeddings=Table()
        )
        assert matched.objects[0].matched_asset == "food/banana"
        assert matched.objects[1].matched_asset == NO_OBJECT
        assert results[0].similarity is not None

    def test_result_json_round_trip(self):
        r = MatchResult(crop_id="c", predicted=NO_OBJECT, similarity=0.4, raw_reply="x")
        assert MatchResult.from_json(r.to_json()) == r
