"""HTTP service for human pair vetting and the human forced-choice baseline.

Persistence is append-only JSONL (sessions, human trials, vet decisions)
with in-memory indexes rebuilt on startup; every acknowledged write hits
disk (flush + fsync) before the response leaves. Study-mode payloads never
carry the solution: the letter grid lists all choices, nothing marks the
right one, and correctness is withheld from the acknowledgment.
"""

from __future__ import annotations

import json
import os
import secrets
import time
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock

import numpy as np
from fastapi import FastAPI, Header, HTTPException, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .benchmark_build import BenchmarkManifest
from .harness.prompts import valid_letters
from .harness.scoring import Trial, score
from .jsonl import read_jsonl

VET_REASONS = ("inpaint_artifact", "ambiguous", "object_too_small", "other")


@dataclass
class Session:
    token: str
    participant_label: str
    mode: str  # "study" | "vet"
    served: set[str] = field(default_factory=set)
    answered: set[str] = field(default_factory=set)
    created_ts: float = 0.0


class StudyState:
    """All service state; usable directly in tests without HTTP."""

    def __init__(self, manifest: BenchmarkManifest, pairs_root, log_dir, rng_seed: int = 0):
        self.manifest = manifest
        self.items = manifest.by_id()
        self.pairs_root = Path(pairs_root)
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self.answer_counts: dict[str, int] = {pid: 0 for pid in self.items}
        self.vet_counts: dict[str, int] = {pid: 0 for pid in self.items}
        self.human_trials: list[Trial] = []
        self.vet_log: list[dict] = []
        self._writer = Lock()
        rng = np.random.default_rng(rng_seed)
        order = rng.permutation(sorted(self.items))
        self.shuffle_rank = {pid: i for i, pid in enumerate(order)}
        self._replay()

    # -- persistence -----------------------------------------------------

    def _path(self, name: str) -> Path:
        return self.log_dir / name

    def _append(self, name: str, record: dict) -> None:
        with self._writer:
            with open(self._path(name), "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
                f.flush()
                os.fsync(f.fileno())

    def _replay(self) -> None:
        if self._path("sessions.jsonl").exists():
            for rec in read_jsonl(self._path("sessions.jsonl")):
                self.sessions[rec["token"]] = Session(
                    token=rec["token"],
                    participant_label=rec["participant_label"],
                    mode=rec["mode"],
                    created_ts=rec["created_ts"],
                )
        if self._path("trials.jsonl").exists():
            for rec in read_jsonl(self._path("trials.jsonl")):
                t = Trial.from_record(rec)
                self.human_trials.append(t)
                if t.pair_id in self.answer_counts:
                    self.answer_counts[t.pair_id] += 1
                sess = self.sessions.get(rec.get("session_id", ""))
                if sess:
                    sess.served.add(t.pair_id)
                    sess.answered.add(t.pair_id)
        if self._path("vets.jsonl").exists():
            for rec in read_jsonl(self._path("vets.jsonl")):
                self.vet_log.append(rec)
                if rec["pair_id"] in self.vet_counts:
                    self.vet_counts[rec["pair_id"]] += 1
                sess = self.sessions.get(rec.get("session_id", ""))
                if sess:
                    sess.served.add(rec["pair_id"])

    # -- operations --------------------------------------------------------

    def create_session(self, participant_label: str, mode: str) -> Session:
        if mode not in ("study", "vet"):
            raise ValueError(f"mode must be study or vet, got {mode!r}")
        token = secrets.token_urlsafe(16)
        sess = Session(token=token, participant_label=participant_label, mode=mode, created_ts=time.time())
        self.sessions[token] = sess
        self._append(
            "sessions.jsonl",
            {"token": token, "participant_label": participant_label, "mode": mode, "created_ts": sess.created_ts},
        )
        return sess

    def session(self, token: str) -> Session:
        sess = self.sessions.get(token or "")
        if sess is None:
            raise PermissionError("unknown session token")
        return sess

    def next_item(self, sess: Session) -> dict | None:
        """Least-covered unserved item; None when the session saw everything."""
        counts = self.answer_counts if sess.mode == "study" else self.vet_counts
        candidates = [pid for pid in self.items if pid not in sess.served]
        if not candidates:
            return None
        pid = min(candidates, key=lambda p: (counts[p], self.shuffle_rank[p]))
        sess.served.add(pid)
        item = self.items[pid]
        payload = {
            "pair_id": pid,
            "images": [f"/api/image/{pid}/labeled", f"/api/image/{pid}/edited"],
            "letters": valid_letters(item.num_labels),
            "num_labels": item.num_labels,
            "progress": {"done": len(sess.answered), "total": len(self.items)},
            "mode": sess.mode,
        }
        if sess.mode == "vet":
            # vetters judge the edit, so they must see it
            payload["correct_letter"] = item.answer_letter
            payload["variant"] = item.variant
        return payload

    def record_answer(self, sess: Session, pair_id: str, letter: str) -> dict:
        if pair_id not in self.items:
            raise KeyError(f"unknown pair {pair_id}")
        if pair_id not in sess.served:
            raise LookupError(f"pair {pair_id} was never served to this session")
        item = self.items[pair_id]
        if letter not in valid_letters(item.num_labels):
            raise ValueError(f"letter {letter!r} is not a valid choice for this item")
        if pair_id in sess.answered:
            return {"recorded": True, "duplicate": True}
        trial = Trial(
            pair_id=pair_id,
            model=f"human:{sess.participant_label}",
            raw_response=letter,
            parsed_letter=letter,
            correct=letter == item.answer_letter,
            ts=time.time(),
        )
        rec = trial.to_record()
        rec["session_id"] = sess.token
        self._append("trials.jsonl", rec)
        sess.answered.add(pair_id)
        self.human_trials.append(trial)
        self.answer_counts[pair_id] += 1
        return {"recorded": True, "duplicate": False}

    def record_vet(self, sess: Session, pair_id: str, decision: str, reason: str | None, note: str = "") -> dict:
        if sess.mode != "vet":
            raise PermissionError("session is not in vetting mode")
        if pair_id not in self.items:
            raise KeyError(f"unknown pair {pair_id}")
        if decision not in ("accept", "reject"):
            raise ValueError(f"decision must be accept or reject, got {decision!r}")
        if decision == "reject" and reason not in VET_REASONS:
            raise ValueError(f"reject needs a reason from {VET_REASONS}")
        rec = {
            "pair_id": pair_id,
            "decision": decision,
            "reason": reason,
            "note": note,
            "session_id": sess.token,
            "ts": time.time(),
        }
        self._append("vets.jsonl", rec)
        self.vet_log.append(rec)
        self.vet_counts[pair_id] += 1
        return {"recorded": True}

    def human_stats(self) -> dict:
        """Pooled and per-participant accuracy over the human trial log."""
        by_participant: dict[str, list[Trial]] = {}
        for t in self.human_trials:
            by_participant.setdefault(t.model, []).append(t)
        pooled: dict = {}
        participants: dict = {}
        for name, trials in sorted(by_participant.items()):
            rep = score(trials, self.manifest)["models"][name]
            participants[name] = rep
            for table in ("overall", "by_depth", "by_light", "by_plausibility", "by_label_bucket"):
                src = {"overall": rep["overall"]} if table == "overall" else rep[table]
                dst = pooled.setdefault(table, {})
                for stratum, cell in src.items():
                    agg = dst.setdefault(stratum, {"n": 0, "correct": 0})
                    agg["n"] += cell["n"]
                    agg["correct"] += cell["correct"]
        for table in pooled.values():
            for cell in table.values():
                cell["accuracy"] = cell["correct"] / cell["n"] if cell["n"] else None
        return {
            "n_trials": len(self.human_trials),
            "pooled": pooled,
            "participants": participants,
        }


def latest_decisions(vet_log: list[dict]) -> dict[str, dict]:
    """Last decision wins per pair (by timestamp, then log order)."""
    latest: dict[str, dict] = {}
    for i, rec in enumerate(vet_log):
        key = rec["pair_id"]
        prev = latest.get(key)
        if prev is None or (rec["ts"], i) >= (prev["ts"], prev["_i"]):
            latest[key] = {**rec, "_i": i}
    return {k: {kk: vv for kk, vv in v.items() if kk != "_i"} for k, v in latest.items()}


def export_curated(
    manifest: BenchmarkManifest,
    vet_log: list[dict],
    per_scene_cap: int = 2,
    vet_counts: dict[str, int] | None = None,
) -> tuple[list, list[dict]]:
    """Accepted items under the per-scene cap, largest vet coverage first.

    Returns (kept manifest items, sidecar of latest decisions incl. reasons).
    """
    latest = latest_decisions(vet_log)
    counts = vet_counts or {}
    by_scene: dict[str, list] = {}
    for it in manifest.items:
        dec = latest.get(it.pair_id)
        if dec and dec["decision"] == "accept":
            by_scene.setdefault(it.scene_id, []).append(it)
    kept = []
    for scene_id in sorted(by_scene):
        group = sorted(by_scene[scene_id], key=lambda it: (-counts.get(it.pair_id, 0), it.pair_id))
        kept.extend(group[:per_scene_cap])
    kept.sort(key=lambda it: it.pair_id)
    sidecar = [latest[pid] for pid in sorted(latest)]
    return kept, sidecar


def create_app(state: StudyState, ui_dir=None):
    """FastAPI wiring over a StudyState."""
    app = FastAPI(title="pairforge study service")
    app.state.study = state

    def auth(authorization: str | None) -> Session:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(401, "missing bearer token")
        try:
            return state.session(authorization.removeprefix("Bearer "))
        except PermissionError:
            raise HTTPException(401, "unknown session token")

    @app.post("/api/session")
    async def make_session(request: Request):
        body = await request.json()
        try:
            sess = state.create_session(str(body.get("participant_label", "anonymous")), body.get("mode", "study"))
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return {"token": sess.token, "mode": sess.mode}

    @app.get("/api/item/next")
    def item_next(authorization: str | None = Header(default=None)):
        sess = auth(authorization)
        payload = state.next_item(sess)
        if payload is None:
            return {"exhausted": True}
        return payload

    @app.post("/api/item/{pair_id}/answer")
    async def item_answer(pair_id: str, request: Request, authorization: str | None = Header(default=None)):
        sess = auth(authorization)
        body = await request.json()
        try:
            return state.record_answer(sess, pair_id, str(body.get("letter", "")))
        except KeyError as exc:
            raise HTTPException(404, str(exc))
        except LookupError as exc:
            raise HTTPException(409, str(exc))
        except ValueError as exc:
            raise HTTPException(422, str(exc))

    @app.post("/api/item/{pair_id}/vet")
    async def item_vet(pair_id: str, request: Request, authorization: str | None = Header(default=None)):
        sess = auth(authorization)
        body = await request.json()
        try:
            return state.record_vet(
                sess, pair_id, str(body.get("decision", "")), body.get("reason"), str(body.get("note", ""))
            )
        except PermissionError as exc:
            raise HTTPException(403, str(exc))
        except KeyError as exc:
            raise HTTPException(404, str(exc))
        except ValueError as exc:
            raise HTTPException(422, str(exc))

    @app.get("/api/stats")
    def stats():
        return JSONResponse(state.human_stats())

    @app.get("/api/image/{pair_id}/{role}")
    def image(pair_id: str, role: str):
        item = state.items.get(pair_id)
        if item is None:
            raise HTTPException(404, "unknown pair")
        path = {"labeled": item.image_labeled, "edited": item.image_edited}.get(role)
        if path is None or not Path(path).exists():
            raise HTTPException(404, "unknown image role")
        return FileResponse(path, media_type="image/png")

    if ui_dir and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
