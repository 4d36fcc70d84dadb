"""Tests for the annotation service: store, HTTP API, export."""

import base64
import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from vinebud.corpus import load_manifest, rasterize_polygon
from vinebud.errors import FormatError
from vinebud.imaging import Rect
from vinebud.service import AnnotationStore, create_app

SQUARE_10 = [[5, 5], [15, 5], [15, 15], [5, 15]]
TRIANGLE = [[2, 2], [20, 4], [6, 18]]
REGION_300 = [[10, 10], [310, 10], [310, 310], [10, 310]]


def _write_png(path, size, value=128):
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.full((size[1], size[0]), value, np.uint8)
    Image.fromarray(data, mode="L").save(path)


@pytest.fixture
def root(tmp_path):
    _write_png(tmp_path / "images" / "small.png", (64, 64))
    _write_png(tmp_path / "images" / "wide.png", (350, 350), value=90)
    _write_png(tmp_path / "plain.jpg", (32, 16), value=200)
    return tmp_path


@pytest.fixture
def client(root):
    return TestClient(create_app(root))


def _post_bud(client, points=SQUARE_10, image="images/small.png", **extra):
    body = {"image": image, "kind": "bud-polygon", "points": points, **extra}
    return client.post("/annotations", json=body)


def _post_region(client, points=REGION_300, image="images/wide.png", **extra):
    body = {"image": image, "kind": "nonbud-region", "points": points, **extra}
    return client.post("/annotations", json=body)


class TestImages:
    def test_empty_root_lists_nothing(self, tmp_path):
        client = TestClient(create_app(tmp_path))
        assert client.get("/images").json() == {"images": []}

    def test_catalog_reports_dims(self, client):
        images = {e["id"]: e for e in client.get("/images").json()["images"]}
        assert set(images) == {"images/small.png", "images/wide.png", "plain.jpg"}
        assert images["images/small.png"]["width"] == 64
        assert images["plain.jpg"]["height"] == 16
        assert images["images/wide.png"]["thumb"] == "/images/images/wide.png/thumb"

    def test_undecodable_file_skipped_with_warning(self, root, caplog):
        (root / "broken.png").write_bytes(b"not a png at all")
        client = TestClient(create_app(root))
        with caplog.at_level("WARNING"):
            listed = {e["id"] for e in client.get("/images").json()["images"]}
        assert "broken.png" not in listed
        assert any("broken.png" in r.message for r in caplog.records)

    def test_masks_directory_not_listed(self, root):
        _write_png(root / "masks" / "m.png", (8, 8))
        client = TestClient(create_app(root))
        listed = {e["id"] for e in client.get("/images").json()["images"]}
        assert "masks/m.png" not in listed

    def test_image_bytes_served_immutable(self, client):
        resp = client.get("/images/images/small.png")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert "immutable" in resp.headers["cache-control"]
        assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_unknown_image_is_404(self, client):
        resp = client.get("/images/images/nope.png")
        assert resp.status_code == 404
        assert resp.json()["code"] == "not-found"

    def test_traversal_rejected(self, client, root):
        (root.parent / "secret.png").write_bytes(b"x")
        resp = client.get("/images/../secret.png")
        assert resp.status_code == 404

    def test_thumbnail_is_bounded_png(self, client):
        resp = client.get("/images/images/wide.png/thumb")
        assert resp.status_code == 200
        thumb = Image.open(io.BytesIO(resp.content))
        assert max(thumb.size) <= 256
        again = client.get("/images/images/wide.png/thumb")
        assert again.content == resp.content


class TestAnnotations:
    def test_square_polygon_stores_mask_area_100(self, client):
        resp = _post_bud(client)
        assert resp.status_code == 200
        data = resp.json()
        assert data["id"] == "a-000001"
        assert data["version"] == 1
        derived = data["derived"]
        assert derived["rect"] == {"x": 5, "y": 5, "w": 10, "h": 10}
        assert derived["area"] == 100
        mask = Image.open(io.BytesIO(base64.b64decode(derived["mask_png"])))
        assert mask.size == (10, 10)
        assert np.asarray(mask).sum() == 100

    def test_derived_mask_matches_rasterizer_exactly(self, client):
        data = _post_bud(client, points=TRIANGLE).json()
        rect = data["derived"]["rect"]
        expected = rasterize_polygon(
            TRIANGLE, Rect(rect["x"], rect["y"], rect["w"], rect["h"])
        )
        mask = np.asarray(
            Image.open(io.BytesIO(base64.b64decode(data["derived"]["mask_png"])))
        )
        assert np.array_equal(mask, expected)
        assert data["derived"]["area"] == int(expected.sum())

    def test_two_point_polygon_rejected(self, client):
        resp = _post_bud(client, points=[[1, 1], [5, 5]])
        assert resp.status_code == 422
        assert resp.json()["code"] == "validation"

    def test_out_of_bounds_point_rejected(self, client):
        resp = _post_bud(client, points=[[1, 1], [70, 5], [5, 9]])
        assert resp.status_code == 422

    def test_point_on_edge_allowed(self, client):
        resp = _post_bud(client, points=[[0, 0], [64, 0], [0, 64]])
        assert resp.status_code == 200

    def test_unknown_kind_rejected(self, client):
        body = {"image": "images/small.png", "kind": "scribble", "points": TRIANGLE}
        assert client.post("/annotations", json=body).status_code == 422

    def test_subcategory_on_bud_rejected(self, client):
        resp = _post_bud(client, subcategory="wire")
        assert resp.status_code == 422

    def test_unknown_subcategory_rejected(self, client):
        resp = _post_region(client, subcategory="fence")
        assert resp.status_code == 422
        assert "fence" in resp.json()["detail"]

    def test_unknown_quality_rejected(self, client):
        resp = _post_bud(client, quality="shaky")
        assert resp.status_code == 422

    def test_unknown_image_rejected(self, client):
        resp = _post_bud(client, image="images/ghost.png")
        assert resp.status_code == 404

    def test_update_bumps_version(self, client):
        created = _post_region(client).json()
        body = {
            "id": created["id"],
            "version": created["version"],
            "image": created["image"],
            "kind": created["kind"],
            "points": created["points"],
            "subcategory": "wire",
        }
        updated = client.post("/annotations", json=body)
        assert updated.status_code == 200
        assert updated.json()["version"] == 2
        assert updated.json()["subcategory"] == "wire"

    def test_stale_version_conflicts(self, client):
        created = _post_region(client).json()
        body = {
            "id": created["id"],
            "version": created["version"],
            "image": created["image"],
            "kind": created["kind"],
            "points": created["points"],
            "subcategory": "wire",
        }
        assert client.post("/annotations", json=body).status_code == 200
        stale = client.post("/annotations", json=body)
        assert stale.status_code == 409
        assert stale.json()["code"] == "version-conflict"

    def test_update_unknown_id_is_404(self, client):
        body = {
            "id": "a-999999",
            "version": 1,
            "image": "images/small.png",
            "kind": "bud-polygon",
            "points": TRIANGLE,
        }
        assert client.post("/annotations", json=body).status_code == 404

    def test_kind_is_immutable(self, client):
        created = _post_region(client).json()
        body = {
            "id": created["id"],
            "version": created["version"],
            "image": created["image"],
            "kind": "bud-polygon",
            "points": created["points"],
        }
        assert client.post("/annotations", json=body).status_code == 422

    def test_list_filters_by_image(self, client):
        _post_bud(client)
        _post_region(client)
        everything = client.get("/annotations").json()["annotations"]
        assert [a["id"] for a in everything] == ["a-000001", "a-000002"]
        small = client.get(
            "/annotations", params={"image": "images/small.png"}
        ).json()["annotations"]
        assert [a["id"] for a in small] == ["a-000001"]


class TestSampling:
    def test_square_region_yields_nine_rects(self, client):
        rid = _post_region(client).json()["id"]
        resp = client.post(
            f"/annotations/{rid}/sample", json={"step": 100, "dims": [100, 100]}
        )
        assert resp.status_code == 200
        data = resp.json()
        assert data["count"] == 9
        xs = sorted({r["x"] for r in data["rects"]})
        assert xs == [10, 110, 210]
        assert data["version"] == 2

    def test_resampling_is_idempotent(self, client):
        rid = _post_region(client).json()["id"]
        body = {"step": 100, "dims": [100, 100]}
        first = client.post(f"/annotations/{rid}/sample", json=body).json()
        second = client.post(f"/annotations/{rid}/sample", json=body).json()
        assert first["rects"] == second["rects"]

    def test_thin_region_yields_empty_list(self, client):
        rid = _post_region(
            client, points=[[10, 10], [40, 10], [40, 14], [10, 14]]
        ).json()["id"]
        resp = client.post(
            f"/annotations/{rid}/sample", json={"step": 100, "dims": [100, 100]}
        )
        assert resp.status_code == 200
        assert resp.json() == {
            "rects": [],
            "count": 0,
            "version": 2,
            "preview": False,
        }

    def test_sampling_bud_record_rejected(self, client):
        rid = _post_bud(client).json()["id"]
        resp = client.post(
            f"/annotations/{rid}/sample", json={"step": 100, "dims": [100, 100]}
        )
        assert resp.status_code == 422

    def test_preview_does_not_persist(self, client):
        rid = _post_region(client).json()["id"]
        resp = client.post(
            f"/annotations/{rid}/sample",
            json={"step": 100, "dims": [100, 100], "preview": True},
        )
        assert resp.json()["count"] == 9
        assert resp.json()["version"] == 1
        stored = client.get("/annotations").json()["annotations"][0]
        assert stored["sampling"] is None
        assert stored["derived"] is None

    def test_sampling_survives_in_listing(self, client):
        rid = _post_region(client, subcategory="trunk-with-bark").json()["id"]
        client.post(f"/annotations/{rid}/sample", json={"step": 100, "dims": [100, 100]})
        stored = client.get("/annotations").json()["annotations"][0]
        assert stored["sampling"] == {"step": 100, "dims": [100, 100]}
        assert stored["derived"]["count"] == 9


class TestExport:
    def test_empty_export_is_loadable(self, client, root):
        resp = client.post("/export", json={"path": "out"})
        assert resp.status_code == 200
        assert resp.json()["patches"] == 0
        corp = load_manifest(root / "out")
        assert corp.patches == [] and corp.images == {}

    def test_bud_and_region_export_round_trip(self, client, root):
        bud = _post_bud(client, points=TRIANGLE).json()
        rid = _post_region(client, subcategory="wire").json()["id"]
        client.post(f"/annotations/{rid}/sample", json={"step": 100, "dims": [100, 100]})
        resp = client.post("/export", json={"path": "out"})
        assert resp.json()["patches"] == 10
        assert resp.json()["images"] == 2
        corp = load_manifest(root / "out")
        buds = [p for p in corp.patches if p.label == "bud"]
        nons = [p for p in corp.patches if p.label == "non-bud"]
        assert len(buds) == 1 and len(nons) == 9
        rect = bud["derived"]["rect"]
        expected = rasterize_polygon(
            TRIANGLE, Rect(rect["x"], rect["y"], rect["w"], rect["h"])
        )
        assert np.array_equal(buds[0].mask, expected)
        assert all(p.subcategory == "wire" for p in nons)
        assert (root / "out" / "images" / "small.png").is_file()
        assert (root / "out" / "images" / "wide.png").is_file()

    def test_flagged_records_excluded_by_default(self, client, root):
        created = _post_bud(client).json()
        body = {
            "id": created["id"],
            "version": created["version"],
            "image": created["image"],
            "kind": created["kind"],
            "points": created["points"],
            "quality": "blurred",
        }
        assert client.post("/annotations", json=body).status_code == 200
        assert client.post("/export", json={"path": "out"}).json()["patches"] == 0
        kept = client.post(
            "/export", json={"path": "out2", "include_flagged": True}
        ).json()
        assert kept["patches"] == 1
        corp = load_manifest(root / "out2")
        assert corp.patches[0].quality == "blurred"


class TestPersistence:
    def test_records_survive_restart(self, root):
        first = TestClient(create_app(root))
        _post_bud(first, points=TRIANGLE)
        _post_region(first)
        second = TestClient(create_app(root))
        ids = [a["id"] for a in second.get("/annotations").json()["annotations"]]
        assert ids == ["a-000001", "a-000002"]

    def test_new_ids_continue_after_restart(self, root):
        first = TestClient(create_app(root))
        _post_bud(first, points=TRIANGLE)
        second = TestClient(create_app(root))
        created = _post_region(second).json()
        assert created["id"] == "a-000002"

    def test_torn_final_line_tolerated(self, root, caplog):
        client = TestClient(create_app(root))
        _post_bud(client, points=TRIANGLE)
        log_path = root / "annotations.jsonl"
        log_path.write_bytes(log_path.read_bytes() + b'{"op": "put", "rec')
        with caplog.at_level("WARNING"):
            store = AnnotationStore(root)
        assert len(store.list()) == 1
        assert any("torn" in r.message for r in caplog.records)

    def test_corrupt_middle_line_rejected(self, root):
        client = TestClient(create_app(root))
        _post_bud(client, points=TRIANGLE)
        _post_region(client)
        lines = (root / "annotations.jsonl").read_bytes().split(b"\n")
        lines[0] = b"{garbage"
        (root / "annotations.jsonl").write_bytes(b"\n".join(lines))
        with pytest.raises(FormatError, match="line 1"):
            AnnotationStore(root)

    def test_compaction_keeps_last_snapshots(self, root):
        store = AnnotationStore(root)
        record = store.put(
            {"image": "images/wide.png", "kind": "nonbud-region", "points": REGION_300}
        )
        for tag in ("wire", "knot", "tendril"):
            record = store.put(
                {
                    "id": record.id,
                    "version": record.version,
                    "image": record.image,
                    "kind": record.kind,
                    "points": [list(p) for p in record.points],
                    "subcategory": tag,
                }
            )
        assert len((root / "annotations.jsonl").read_text().splitlines()) == 4
        store.compact()
        lines = (root / "annotations.jsonl").read_text().splitlines()
        assert len(lines) == 1
        replayed = AnnotationStore(root)
        survivor = replayed.get(record.id)
        assert survivor.subcategory == "tendril"
        assert survivor.version == 4

    def test_every_log_line_is_valid_json(self, root):
        client = TestClient(create_app(root))
        _post_bud(client, points=TRIANGLE)
        rid = _post_region(client).json()["id"]
        client.post(f"/annotations/{rid}/sample", json={"step": 100, "dims": [100, 100]})
        for line in (root / "annotations.jsonl").read_text().splitlines():
            entry = json.loads(line)
            assert entry["op"] == "put"
