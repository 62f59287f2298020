"""Asset catalog: records, persistence, and VLM descriptions."""

import pytest

from simforge.catalog import (
    TEMPLATE_ASSET_IDS,
    TEMPLATE_ASSETS,
    AssetCatalog,
    AssetRecord,
    build_catalog,
    describe_asset,
    load_catalog,
    save_catalog,
)
from simforge.errors import DuplicateIdError, ProviderError, SchemaError
from simforge.llm import ScriptedChatProvider


def record(asset_id, renders=("r.png",)):
    return AssetRecord(asset_id=asset_id, urdf_path=f"{asset_id}.urdf", render_paths=tuple(renders))


class TestRecords:
    def test_requires_render(self):
        with pytest.raises(SchemaError):
            AssetRecord(asset_id="a", urdf_path="a.urdf", render_paths=())

    def test_requires_id(self):
        with pytest.raises(SchemaError):
            AssetRecord(asset_id="", urdf_path="a.urdf", render_paths=("r.png",))

    def test_json_round_trip(self):
        rec = AssetRecord(
            asset_id="food/banana",
            urdf_path="food/banana.urdf",
            render_paths=("a.png", "b.png"),
            description="yellow",
            size=(0.05, 0.05, 0.18),
        )
        assert AssetRecord.from_json(rec.to_json()) == rec

    def test_missing_key_rejected(self):
        with pytest.raises(SchemaError):
            AssetRecord.from_json({"asset_id": "a"})


class TestCatalog:
    def test_sorted_and_indexed(self):
        cat = AssetCatalog(records=[record("b"), record("a")])
        assert cat.ids() == ["a", "b"]
        assert cat.get("a").asset_id == "a"
        assert "b" in cat and "zzz" not in cat
        assert len(cat) == 2

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DuplicateIdError):
            AssetCatalog(records=[record("a"), record("a")])

    def test_save_load_round_trip(self, tmp_path, small_catalog):
        path = tmp_path / "cat.jsonl"
        save_catalog(small_catalog, path)
        loaded = load_catalog(path)
        assert loaded.ids() == small_catalog.ids()
        assert loaded.get("kitchen/mug") == small_catalog.get("kitchen/mug")

    def test_load_reports_duplicate_line(self, tmp_path):
        path = tmp_path / "cat.jsonl"
        line = '{"asset_id": "a", "urdf_path": "a.urdf", "render_paths": ["r.png"]}\n'
        path.write_text(line + line, encoding="utf-8")
        with pytest.raises(DuplicateIdError) as err:
            load_catalog(path)
        assert "line 2" in str(err.value)

    def test_template_assets_known(self):
        ids = {a.asset_id for a in TEMPLATE_ASSETS}
        assert ids == set(TEMPLATE_ASSET_IDS)
        assert "template/container" in ids
        for asset in TEMPLATE_ASSETS:
            assert asset.size is not None


class TestDescribe:
    def test_describe_asset_sends_all_renders(self, small_catalog):
        provider = ScriptedChatProvider({"describe_asset": ["a yellow fruit"]})
        asset = small_catalog.get("food/banana")
        text = describe_asset(provider, asset, "test-model")
        assert text == "a yellow fruit"
        (req,) = provider.calls
        image_parts = [p for m in req.messages for p in m.parts if p.kind == "image"]
        assert len(image_parts) == len(asset.render_paths)

    def test_build_catalog_collects_failures(self, small_catalog):
        class Flaky:
            def __init__(self):
                self.n = 0

            def complete(self, req):
                self.n += 1
                if self.n == 2:
                    raise ProviderError("boom")
                return f"description {self.n}"

        built, failures = build_catalog(Flaky(), list(small_catalog), "m")
        assert len(built) == 3
        assert len(failures) == 1
        described = [a for a in built if a.description.startswith("description")]
        assert len(described) == 2
        failed_id = failures[0].split(":")[0]
        assert "boom" in failures[0]
        # The failed asset keeps whatever description it already had (none here).
        assert not built.get(failed_id).description.startswith("description")

    def test_build_catalog_orders_by_id(self, small_catalog):
        provider = ScriptedChatProvider({}, default="same text")
        built, failures = build_catalog(provider, list(small_catalog), "m")
        assert failures == []
        assert built.ids() == sorted(built.ids())
        assert all(a.description == "same text" for a in built)
