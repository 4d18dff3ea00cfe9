import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from pairforge.benchmark_build import BenchmarkManifest
from pairforge.study_service import StudyState, create_app, export_curated, latest_decisions

from harness_helpers import mk_item


@pytest.fixture()
def service(tmp_path):
    items = []
    for scene in range(3):
        for j in range(5):
            pid = f"s{scene}p{j}"
            it = mk_item(pid, answer_letter="ABCDE"[j], num_labels=5, scene_id=f"scene{scene}")
            d = tmp_path / "pairs" / pid
            d.mkdir(parents=True)
            for name in ("view1_labeled.png", "view2.png"):
                Image.fromarray(np.full((6, 6, 3), 40, dtype=np.uint8)).save(d / name)
            it.image_labeled = str(d / "view1_labeled.png")
            it.image_edited = str(d / "view2.png")
            items.append(it)
    manifest = BenchmarkManifest(items=items, bin_edges={"depth": (2.0, 5.0), "light": (60.0, 120.0)})
    state = StudyState(manifest, pairs_root=tmp_path / "pairs", log_dir=tmp_path / "logs", rng_seed=7)
    client = TestClient(create_app(state))
    return state, client, manifest, tmp_path


def open_session(client, label="p1", mode="study"):
    resp = client.post("/api/session", json={"participant_label": label, "mode": mode})
    assert resp.status_code == 200
    return {"Authorization": f"Bearer {resp.json()['token']}"}


class TestStudyFlow:
    def test_scripted_session_completes_ten_items(self, service):
        state, client, manifest, tmp = service
        key = {it.pair_id: it.answer_letter for it in manifest.items}
        hdr = open_session(client, "reader")
        answered = 0
        payloads = []
        while answered < 10:
            resp = client.get("/api/item/next", headers=hdr)
            payload = resp.json()
            assert not payload.get("exhausted")
            payloads.append(resp.content)
            ans = client.post(f"/api/item/{payload['pair_id']}/answer", json={"letter": key[payload["pair_id"]]}, headers=hdr)
            assert ans.status_code == 200
            payloads.append(ans.content)
            answered += 1
        log = (tmp / "logs" / "trials.jsonl").read_text().strip().splitlines()
        assert len(log) == 10
        # no study payload leaks the solution
        for body in payloads:
            assert b"answer" not in body.lower()
            assert b"correct" not in body.lower()
        stats = state.human_stats()
        assert stats["pooled"]["overall"]["overall"]["accuracy"] == 1.0
        assert stats["n_trials"] == 10

    def test_exhaustion_after_all_items(self, service):
        state, client, manifest, _ = service
        hdr = open_session(client)
        seen = set()
        for _ in range(len(manifest.items)):
            payload = client.get("/api/item/next", headers=hdr).json()
            assert payload["pair_id"] not in seen
            seen.add(payload["pair_id"])
        assert client.get("/api/item/next", headers=hdr).json() == {"exhausted": True}
        assert len(seen) == len(manifest.items)

    def test_letter_validation(self, service):
        _, client, manifest, _ = service
        hdr = open_session(client)
        payload = client.get("/api/item/next", headers=hdr).json()
        bad = client.post(f"/api/item/{payload['pair_id']}/answer", json={"letter": "Z"}, headers=hdr)
        assert bad.status_code == 422

    def test_unserved_pair_is_an_ordering_error(self, service):
        _, client, manifest, _ = service
        hdr = open_session(client)
        resp = client.post(f"/api/item/{manifest.items[0].pair_id}/answer", json={"letter": "A"}, headers=hdr)
        assert resp.status_code == 409

    def test_duplicate_submission_idempotent(self, service):
        state, client, manifest, tmp = service
        hdr = open_session(client)
        payload = client.get("/api/item/next", headers=hdr).json()
        first = client.post(f"/api/item/{payload['pair_id']}/answer", json={"letter": "A"}, headers=hdr).json()
        second = client.post(f"/api/item/{payload['pair_id']}/answer", json={"letter": "B"}, headers=hdr).json()
        assert first == {"recorded": True, "duplicate": False}
        assert second == {"recorded": True, "duplicate": True}
        log = (tmp / "logs" / "trials.jsonl").read_text().strip().splitlines()
        assert len(log) == 1
        assert json.loads(log[0])["parsed_letter"] == "A"  # first kept

    def test_unknown_session_unauthorized(self, service):
        _, client, _, _ = service
        assert client.get("/api/item/next", headers={"Authorization": "Bearer nope"}).status_code == 401
        assert client.get("/api/item/next").status_code == 401

    def test_two_sessions_balance_coverage(self, service):
        state, client, manifest, _ = service
        h1, h2 = open_session(client, "a"), open_session(client, "b")
        for hdr in (h1, h2):
            for _ in range(6):
                payload = client.get("/api/item/next", headers=hdr).json()
                client.post(f"/api/item/{payload['pair_id']}/answer", json={"letter": "A"}, headers=hdr)
        counts = list(state.answer_counts.values())
        assert max(counts) - min(counts) <= 1

    def test_thousand_draw_coverage_balance(self, service):
        # many short sessions, driven through the state API for speed
        state, _, manifest, _ = service
        draws = 0
        while draws < 1000:
            sess = state.create_session(f"sim{draws}", "study")
            for _ in range(min(15, 1000 - draws)):
                payload = state.next_item(sess)
                if payload is None:
                    break
                state.record_answer(sess, payload["pair_id"], payload["letters"][0])
                draws += 1
        counts = list(state.answer_counts.values())
        assert max(counts) - min(counts) <= 1

    def test_restart_preserves_acknowledged_writes(self, service):
        state, client, manifest, tmp = service
        hdr = open_session(client)
        for _ in range(4):
            payload = client.get("/api/item/next", headers=hdr).json()
            client.post(f"/api/item/{payload['pair_id']}/answer", json={"letter": "B"}, headers=hdr)
        reborn = StudyState(manifest, pairs_root=tmp / "pairs", log_dir=tmp / "logs", rng_seed=7)
        assert len(reborn.human_trials) == 4
        assert sum(reborn.answer_counts.values()) == 4

    def test_images_served(self, service):
        _, client, manifest, _ = service
        hdr = open_session(client)
        payload = client.get("/api/item/next", headers=hdr).json()
        for url in payload["images"]:
            resp = client.get(url)
            assert resp.status_code == 200
            assert resp.content[:4] == b"\x89PNG"


class TestVetFlow:
    def test_vet_payload_shows_solution(self, service):
        _, client, _, _ = service
        hdr = open_session(client, "vetter", mode="vet")
        payload = client.get("/api/item/next", headers=hdr).json()
        assert "correct_letter" in payload

    def test_study_session_cannot_vet(self, service):
        _, client, manifest, _ = service
        hdr = open_session(client, mode="study")
        payload = client.get("/api/item/next", headers=hdr).json()
        resp = client.post(f"/api/item/{payload['pair_id']}/vet", json={"decision": "accept"}, headers=hdr)
        assert resp.status_code == 403

    def test_reject_requires_reason(self, service):
        _, client, _, _ = service
        hdr = open_session(client, "v", mode="vet")
        payload = client.get("/api/item/next", headers=hdr).json()
        bad = client.post(f"/api/item/{payload['pair_id']}/vet", json={"decision": "reject"}, headers=hdr)
        assert bad.status_code == 422
        ok = client.post(
            f"/api/item/{payload['pair_id']}/vet",
            json={"decision": "reject", "reason": "inpaint_artifact"},
            headers=hdr,
        )
        assert ok.status_code == 200

    def test_latest_decision_wins(self):
        log = [
            {"pair_id": "p", "decision": "accept", "reason": None, "ts": 1.0, "session_id": "s1"},
            {"pair_id": "p", "decision": "reject", "reason": "ambiguous", "ts": 2.0, "session_id": "s2"},
        ]
        assert latest_decisions(log)["p"]["decision"] == "reject"

    def test_export_cap_and_reasons(self, service):
        state, client, manifest, tmp = service
        hdr = open_session(client, "vetter", mode="vet")
        # accept everything in scene0 (5 pairs) and reject one pair of scene1
        for it in manifest.items:
            state.session(hdr["Authorization"].removeprefix("Bearer ")).served.add(it.pair_id)
        scene0 = [it for it in manifest.items if it.scene_id == "scene0"]
        for k, it in enumerate(scene0):
            # uneven coverage: earlier pairs vetted more often
            reps = 3 if k < 2 else 1
            for _ in range(reps):
                client.post(f"/api/item/{it.pair_id}/vet", json={"decision": "accept"}, headers=hdr)
        reject_target = next(it for it in manifest.items if it.scene_id == "scene1")
        client.post(
            f"/api/item/{reject_target.pair_id}/vet",
            json={"decision": "reject", "reason": "inpaint_artifact"},
            headers=hdr,
        )
        kept, sidecar = export_curated(manifest, state.vet_log, per_scene_cap=2, vet_counts=state.vet_counts)
        kept_ids = [it.pair_id for it in kept]
        assert len([i for i in kept_ids if i.startswith("s0")]) == 2
        assert set(kept_ids) == {scene0[0].pair_id, scene0[1].pair_id}  # largest coverage first
        assert reject_target.pair_id not in kept_ids
        rej = next(d for d in sidecar if d["pair_id"] == reject_target.pair_id)
        assert rej["reason"] == "inpaint_artifact"

    def test_accept_then_reject_excluded(self, service):
        state, client, manifest, _ = service
        h1 = open_session(client, "v1", mode="vet")
        payload = client.get("/api/item/next", headers=h1).json()
        client.post(f"/api/item/{payload['pair_id']}/vet", json={"decision": "accept"}, headers=h1)
        h2 = open_session(client, "v2", mode="vet")
        state.session(h2["Authorization"].removeprefix("Bearer ")).served.add(payload["pair_id"])
        client.post(
            f"/api/item/{payload['pair_id']}/vet",
            json={"decision": "reject", "reason": "ambiguous"},
            headers=h2,
        )
        kept, _ = export_curated(manifest, state.vet_log, per_scene_cap=5, vet_counts=state.vet_counts)
        assert payload["pair_id"] not in [it.pair_id for it in kept]


def test_built_ui_served_at_root(service, tmp_path):
    state, _, manifest, _ = service
    ui = tmp_path / "dist"
    ui.mkdir()
    (ui / "index.html").write_text("<html><body>pair review shell</body></html>")
    client = TestClient(create_app(state, ui_dir=ui))
    resp = client.get("/")
    assert resp.status_code == 200
    assert "pair review shell" in resp.text
    # API still reachable under the mount
    assert client.post("/api/session", json={"participant_label": "x", "mode": "study"}).status_code == 200


class TestHumanStats:
    def test_guesser_within_three_sigma(self, service):
        state, client, manifest, _ = service
        rng = np.random.default_rng(12)
        hdr = open_session(client, "guesser")
        n, p_sum, var_sum = 0, 0.0, 0.0
        while True:
            payload = client.get("/api/item/next", headers=hdr).json()
            if payload.get("exhausted"):
                break
            letters = payload["letters"]
            client.post(
                f"/api/item/{payload['pair_id']}/answer",
                json={"letter": letters[int(rng.integers(len(letters)))]},
                headers=hdr,
            )
            p = 1 / len(letters)
            n += 1
            p_sum += p
            var_sum += p * (1 - p)
        stats = state.human_stats()
        acc = stats["pooled"]["overall"]["overall"]["accuracy"]
        sigma = (var_sum**0.5) / n
        assert abs(acc - p_sum / n) <= 3 * sigma + 1e-9

    def test_disjoint_participants_count_weighted(self, service):
        state, client, manifest, _ = service
        key = {it.pair_id: it.answer_letter for it in manifest.items}
        h1 = open_session(client, "alice")
        for _ in range(10):
            payload = client.get("/api/item/next", headers=h1).json()
            client.post(f"/api/item/{payload['pair_id']}/answer", json={"letter": key[payload["pair_id"]]}, headers=h1)
        h2 = open_session(client, "bob")
        wrong = 0
        for _ in range(5):
            payload = client.get("/api/item/next", headers=h2).json()
            letters = payload["letters"]
            pick = next(l for l in letters if l != key[payload["pair_id"]])
            client.post(f"/api/item/{payload['pair_id']}/answer", json={"letter": pick}, headers=h2)
            wrong += 1
        stats = state.human_stats()
        assert stats["pooled"]["overall"]["overall"]["accuracy"] == pytest.approx(10 / 15)
        assert stats["participants"]["human:alice"]["overall"]["accuracy"] == 1.0
        assert stats["participants"]["human:bob"]["overall"]["accuracy"] == 0.0
