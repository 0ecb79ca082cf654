"""HTTP service contract tests (in-process, via TestClient)."""

from __future__ import annotations

import json
import logging
import re

import pytest
from fastapi.testclient import TestClient

from asrfix.errors import ConfigError
from asrfix.kb import KnowledgeBase, Source
from asrfix.llm import MockBehavior, mock_backend
from asrfix.service import (
    ServiceSettings,
    build_backend,
    create_app,
    load_service_config,
)

CORRECT_BODY = {
    "hypotheses": [
        {"source_id": "src-c", "text": "DNA在哪"},
        {"source_id": "src-b", "text": "滴哪在哪"},
        {"source_id": "src-a", "text": "敌人在哪"},
    ],
    "context": "小队语音：卡点防守",
    "utterance_id": "utt-dna-001",
}


def make_kb() -> KnowledgeBase:
    kb = KnowledgeBase()
    kb.add_entry("敌人", "DNA")
    return kb


def make_client(**overrides) -> TestClient:
    kb = overrides.pop("kb", None) or make_kb()
    backend = overrides.pop("backend", None) or mock_backend(kb, MockBehavior.KB_REPLACE)
    settings = ServiceSettings(kb=kb, backend=backend, **overrides)
    return TestClient(create_app(settings))


# ---------------------------------------------------------------------------
# /v1/correct
# ---------------------------------------------------------------------------


class TestCorrect:
    def test_happy_path(self):
        client = make_client()
        response = client.post("/v1/correct", json=CORRECT_BODY)
        assert response.status_code == 200
        body = response.json()
        assert body["utterance_id"] == "utt-dna-001"
        assert body["corrected"] == "敌人在哪"
        assert body["origin"] == "model"
        assert body["kb_hits"] == [["敌人", "DNA"]]
        assert body["revision"] == 1
        assert body["latency_ms"] >= 0

    def test_generated_utterance_id_is_stable(self):
        client = make_client()
        body = {k: v for k, v in CORRECT_BODY.items() if k != "utterance_id"}
        first = client.post("/v1/correct", json=body).json()
        second = client.post("/v1/correct", json=body).json()
        assert re.fullmatch(r"req-[0-9a-f]{16}", first["utterance_id"])
        assert first["utterance_id"] == second["utterance_id"]

    def test_kb_add_visible_to_next_request(self):
        client = make_client()
        add = client.post(
            "/v1/kb/entries", json={"correct": "遇袭", "erroneous": "预习"}
        )
        assert add.status_code == 200
        assert add.json()["revision"] == 2
        response = client.post(
            "/v1/correct",
            json={
                "hypotheses": [{"source_id": "a", "text": "哪里预习了"}],
                "utterance_id": "utt-2",
            },
        )
        body = response.json()
        assert body["corrected"] == "哪里遇袭了"
        assert body["kb_hits"] == [["遇袭", "预习"]]
        assert body["revision"] == 2

    def test_empty_hypotheses_is_400(self):
        client = make_client()
        response = client.post("/v1/correct", json={"hypotheses": []})
        assert response.status_code == 400

    def test_empty_text_is_400(self):
        client = make_client()
        response = client.post(
            "/v1/correct", json={"hypotheses": [{"source_id": "a", "text": ""}]}
        )
        assert response.status_code == 400

    def test_missing_body_is_400(self):
        client = make_client()
        assert client.post("/v1/correct", json={}).status_code == 400

    def test_k_max_enforced(self):
        client = make_client(k_max=2)
        response = client.post("/v1/correct", json=CORRECT_BODY)
        assert response.status_code == 400
        assert "at most 2" in response.json()["detail"]

    def test_duplicate_sources_is_400(self):
        client = make_client()
        response = client.post(
            "/v1/correct",
            json={
                "hypotheses": [
                    {"source_id": "a", "text": "x"},
                    {"source_id": "a", "text": "y"},
                ]
            },
        )
        assert response.status_code == 400

    def test_failing_backend_with_fallback_is_200(self):
        kb = make_kb()
        client = make_client(kb=kb, backend=mock_backend(kb, MockBehavior.FAIL_ALWAYS))
        response = client.post("/v1/correct", json=CORRECT_BODY)
        assert response.status_code == 200
        body = response.json()
        assert body["origin"] == "fallback"
        assert body["corrected"] == "DNA在哪"  # first hypothesis

    def test_failing_backend_without_fallback_is_503(self):
        kb = make_kb()
        client = make_client(
            kb=kb,
            backend=mock_backend(kb, MockBehavior.FAIL_ALWAYS),
            fallback_enabled=False,
        )
        response = client.post("/v1/correct", json=CORRECT_BODY)
        assert response.status_code == 503
        assert "fallback is disabled" in response.json()["detail"]

    def test_fallback_priority_setting(self):
        kb = make_kb()
        client = make_client(
            kb=kb,
            backend=mock_backend(kb, MockBehavior.FAIL_ALWAYS),
            fallback_priority=["src-a"],
        )
        body = client.post("/v1/correct", json=CORRECT_BODY).json()
        assert body["corrected"] == "敌人在哪"


# ---------------------------------------------------------------------------
# KB endpoints
# ---------------------------------------------------------------------------


class TestKbEndpoints:
    def test_add_and_list(self):
        client = make_client()
        client.post("/v1/kb/entries", json={"correct": "遇袭", "erroneous": "预习"})
        listing = client.get("/v1/kb/entries").json()
        assert listing["revision"] == 2
        assert [e["correct"] for e in listing["entries"]] == ["敌人", "遇袭"]
        variants = listing["entries"][1]["variants"]
        assert variants == [{"erroneous": "预习", "source": "manual", "count": 1}]

    def test_add_equal_strings_is_409(self):
        client = make_client()
        response = client.post(
            "/v1/kb/entries", json={"correct": "同样", "erroneous": "同样"}
        )
        assert response.status_code == 409

    def test_add_forbidden_chars_is_400(self):
        client = make_client()
        response = client.post(
            "/v1/kb/entries", json={"correct": "a|b", "erroneous": "c"}
        )
        assert response.status_code == 400

    def test_delete(self):
        client = make_client()
        response = client.request(
            "DELETE", "/v1/kb/entries", json={"correct": "敌人", "erroneous": "DNA"}
        )
        assert response.status_code == 200
        assert response.json()["revision"] == 2
        listing = client.get("/v1/kb/entries").json()
        assert listing["entries"] == []

    def test_delete_missing_is_404(self):
        client = make_client()
        response = client.request(
            "DELETE", "/v1/kb/entries", json={"correct": "无", "erroneous": "有"}
        )
        assert response.status_code == 404

    def test_auth_required_when_configured(self):
        client = make_client(auth_token="sekrit")
        entry = {"correct": "遇袭", "erroneous": "预习"}
        assert client.post("/v1/kb/entries", json=entry).status_code == 401
        bad = client.post(
            "/v1/kb/entries", json=entry, headers={"Authorization": "Bearer wrong"}
        )
        assert bad.status_code == 401
        good = client.post(
            "/v1/kb/entries", json=entry, headers={"Authorization": "Bearer sekrit"}
        )
        assert good.status_code == 200
        assert client.get("/v1/kb/entries").status_code == 401
        # correction itself stays open
        assert client.post("/v1/correct", json=CORRECT_BODY).status_code == 200


# ---------------------------------------------------------------------------
# feedback
# ---------------------------------------------------------------------------


class TestFeedback:
    def serve_one(self, client, utterance_id="utt-dna-001"):
        body = dict(CORRECT_BODY, utterance_id=utterance_id)
        assert client.post("/v1/correct", json=body).status_code == 200

    def test_feedback_for_unserved_utterance_is_404(self):
        client = make_client()
        response = client.post(
            "/v1/feedback",
            json={"utterance_id": "ghost", "final_text": "x", "accepted": True},
        )
        assert response.status_code == 404

    def test_feedback_logged_and_deduplicated(self, tmp_path):
        log_path = tmp_path / "feedback.jsonl"
        client = make_client(feedback_log_path=log_path)
        self.serve_one(client)
        first = client.post(
            "/v1/feedback",
            json={"utterance_id": "utt-dna-001", "final_text": "敌人在哪", "accepted": True},
        )
        assert first.status_code == 200
        assert first.json() == {"logged": True, "duplicate": False}
        again = client.post(
            "/v1/feedback",
            json={"utterance_id": "utt-dna-001", "final_text": "别的", "accepted": False},
        )
        assert again.json() == {"logged": True, "duplicate": True}

        rows = [json.loads(line) for line in log_path.read_text("utf-8").splitlines()]
        assert len(rows) == 1  # the duplicate was not appended
        row = rows[0]
        assert row["utterance_id"] == "utt-dna-001"
        assert row["final_text"] == "敌人在哪"
        assert row["accepted"] is True
        assert row["corrected"] == "敌人在哪"
        assert {h["source_id"] for h in row["hypotheses"]} == {"src-a", "src-b", "src-c"}

    def test_auto_kb_update_promotes_at_min_support(self):
        kb = KnowledgeBase()  # start empty so revisions are easy to track
        client = make_client(
            kb=kb,
            backend=mock_backend(kb, MockBehavior.ECHO),
            auto_kb_update=True,
            auto_kb_min_support=2,
        )
        for i in (1, 2):
            self.serve_one(client, utterance_id=f"utt-{i}")
            response = client.post(
                "/v1/feedback",
                json={"utterance_id": f"utt-{i}", "final_text": "敌人在哪", "accepted": True},
            )
            assert response.status_code == 200
        # second feedback pushed ("敌人","DNA") and ("敌人","滴哪") to support 2
        snap = kb.snapshot()
        assert snap.revision == 1  # one add_pairs batch
        variants = snap.entries["敌人"].variants
        assert set(variants) == {"DNA", "滴哪"}
        assert all(v.source is Source.RUNTIME for v in variants.values())

    def test_auto_kb_update_off_by_default(self):
        kb = make_kb()
        client = make_client(kb=kb)
        self.serve_one(client)
        client.post(
            "/v1/feedback",
            json={"utterance_id": "utt-dna-001", "final_text": "敌人在哪", "accepted": True},
        )
        assert kb.revision == 1  # untouched


# ---------------------------------------------------------------------------
# health + logging privacy
# ---------------------------------------------------------------------------


class TestHealth:
    def test_health(self):
        client = make_client()
        body = client.get("/v1/health").json()
        assert body["status"] == "ok"
        assert body["kb_revision"] == 1
        assert body["backend_id"] == "mock-kb-replace"

    def test_health_tracks_revision(self):
        client = make_client()
        client.post("/v1/kb/entries", json={"correct": "遇袭", "erroneous": "预习"})
        assert client.get("/v1/health").json()["kb_revision"] == 2


class TestLoggingPrivacy:
    SENSITIVE = ("DNA在哪", "滴哪在哪", "敌人在哪", "小队语音")

    def test_info_logs_ids_not_text(self, caplog):
        client = make_client()
        with caplog.at_level(logging.INFO, logger="asrfix.service"):
            client.post("/v1/correct", json=CORRECT_BODY)
        joined = "\n".join(record.getMessage() for record in caplog.records)
        assert "utt-dna-001" in joined
        for text in self.SENSITIVE:
            assert text not in joined

    def test_debug_logs_content(self, caplog):
        client = make_client()
        with caplog.at_level(logging.DEBUG, logger="asrfix.service"):
            client.post("/v1/correct", json=CORRECT_BODY)
        joined = "\n".join(record.getMessage() for record in caplog.records)
        assert "敌人在哪" in joined


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------


class TestBuildBackend:
    def test_mock(self):
        backend = build_backend({"type": "mock", "behavior": "echo"})
        assert backend.backend_id == "mock-echo"

    def test_mock_bad_behavior(self):
        with pytest.raises(ConfigError):
            build_backend({"type": "mock", "behavior": "nope"})

    def test_http(self):
        backend = build_backend({"type": "http", "base_url": "http://llm.test/v1"})
        assert backend.backend_id == "http"

    def test_chat(self):
        backend = build_backend(
            {"type": "chat", "base_url": "http://llm.test/v1", "model": "m"}
        )
        assert backend.backend_id == "chat"

    def test_unknown_type(self):
        with pytest.raises(ConfigError):
            build_backend({"type": "teapot"})


class TestLoadServiceConfig:
    def write_config(self, tmp_path, config) -> str:
        path = tmp_path / "service.json"
        path.write_text(json.dumps(config, ensure_ascii=False), encoding="utf-8")
        return str(path)

    def test_full_config(self, tmp_path, monkeypatch):
        (tmp_path / "kb.txt").write_text("敌人 | DNA\n", encoding="utf-8")
        monkeypatch.setenv("SVC_TOKEN", "tok")
        path = self.write_config(
            tmp_path,
            {
                "kb_path": "kb.txt",
                "backend": {"type": "mock", "behavior": "kb-replace"},
                "auth_token_env": "SVC_TOKEN",
                "feedback_log": "feedback.jsonl",
                "k_max": 4,
                "fallback_enabled": False,
                "auto_kb_update": True,
                "auto_kb_min_support": 3,
                "host": "0.0.0.0",
                "port": 9000,
            },
        )
        settings, extras = load_service_config(path)
        assert settings.k_max == 4
        assert settings.fallback_enabled is False
        assert settings.auth_token == "tok"
        assert settings.auto_kb_update is True
        assert settings.auto_kb_min_support == 3
        assert settings.feedback_log_path == tmp_path / "feedback.jsonl"
        assert extras == {"host": "0.0.0.0", "port": 9000}
        # the mock backend is wired to the loaded KB: end-to-end check
        client = TestClient(create_app(settings))
        body = client.post(
            "/v1/correct",
            json={"hypotheses": [{"source_id": "a", "text": "DNA在哪"}]},
        ).json()
        assert body["corrected"] == "敌人在哪"

    def test_missing_backend(self, tmp_path):
        path = self.write_config(tmp_path, {"kb_path": None})
        with pytest.raises(ConfigError):
            load_service_config(path)

    def test_unset_auth_env(self, tmp_path, monkeypatch):
        monkeypatch.delenv("MISSING_TOKEN", raising=False)
        path = self.write_config(
            tmp_path,
            {"backend": {"type": "mock"}, "auth_token_env": "MISSING_TOKEN"},
        )
        with pytest.raises(ConfigError):
            load_service_config(path)

    def test_defaults(self, tmp_path):
        path = self.write_config(tmp_path, {"backend": {"type": "mock"}})
        settings, extras = load_service_config(path)
        assert settings.k_max == 8
        assert settings.fallback_enabled is True
        assert settings.auth_token is None
        assert extras == {"host": "127.0.0.1", "port": 8080}

    def test_bad_json(self, tmp_path):
        path = tmp_path / "service.json"
        path.write_text("{oops", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_service_config(path)
