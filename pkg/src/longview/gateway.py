"""Single choke-point for model traffic: wire contract, reply schemas,
retry/fallback policy, and the per-question call ledger.

Every model interaction in the engine flows through ``Gateway.send``,
so the ledger is a complete account of calls per question. Backends are
pluggable: an OpenAI-compatible HTTP client for real services, a
scripted backend for tests, and a null backend for disabled channels.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .errors import GatewayError, HttpError, Timeout, UnknownQuestion

ROLE_TAGS = (
    "search_rerank",
    "search_final",
    "verify",
    "prior",
    "judge",
    "tmkg_answer",
    "summarise",
    "parse",
)

CHOICES = ("A", "B", "C", "D")
CLAIM_KINDS = ("ocr", "audio_quote", "visual", "context")


@dataclass(frozen=True)
class ModelRequest:
    role: str
    system_text: str
    user_parts: tuple[tuple[str, str], ...]  # (kind, content); kind in {text, frame_ref, evidence_ref}
    expected_schema: str
    budget: int = 1024
    question_id: str | None = None

    def __post_init__(self):
        if self.role not in ROLE_TAGS:
            raise GatewayError(f"unknown role tag {self.role!r}")
        if self.expected_schema not in SCHEMA_VALIDATORS:
            raise GatewayError(f"schema {self.expected_schema!r} not registered")
        for kind, _ in self.user_parts:
            if kind not in ("text", "frame_ref", "evidence_ref"):
                raise GatewayError(f"unknown part kind {kind!r}")


@dataclass
class ModelReply:
    text: str
    parsed: dict | None
    schema_error: str | None
    latency: float
    backend_id: str
    synthetic: bool = False


def request_key(req: ModelRequest) -> str:
    """Stable fixture key: role tag plus a hash of the user parts."""
    blob = json.dumps([list(p) for p in req.user_parts], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# -- reply schemas -----------------------------------------------------

def _strip_fences(text: str) -> str:
    text = text.strip()
    m = re.match(r"^```(?:json)?\s*(.*?)\s*```$", text, re.DOTALL)
    return m.group(1) if m else text


def _as_float(value, lo: float = 0.0, hi: float = 1.0) -> float | None:
    try:
        x = float(value)
    except (TypeError, ValueError):
        return None
    return min(hi, max(lo, x))


def _validate_answer_v1(data: dict) -> dict:
    if data.get("choice") not in CHOICES:
        raise ValueError(f"choice must be one of {CHOICES}, got {data.get('choice')!r}")
    confidence = _as_float(data.get("confidence"))
    if confidence is None:
        raise ValueError("confidence must be a number")
    views = data.get("supporting_views", [])
    if not isinstance(views, list):
        raise ValueError("supporting_views must be a list")
    norm_views = []
    for v in views:
        if isinstance(v, str):
            norm_views.append({"camera": v, "window": None})
        elif isinstance(v, dict) and "camera" in v:
            norm_views.append({"camera": str(v["camera"]), "window": v.get("window")})
        elif isinstance(v, (list, tuple)) and len(v) == 2:
            norm_views.append({"camera": str(v[0]), "window": v[1]})
        else:
            raise ValueError(f"unreadable supporting view {v!r}")
    return {
        "choice": data["choice"],
        "confidence": confidence,
        "supporting_views": norm_views,
        "rationale": str(data.get("rationale", "")),
    }


def _validate_verify_v1(data: dict) -> dict:
    verdict = data.get("verdict")
    if verdict not in ("supports", "abstain"):
        raise ValueError(f"verdict must be supports/abstain, got {verdict!r}")
    choice = data.get("choice")
    if verdict == "supports" and choice not in CHOICES:
        raise ValueError("supports verdict needs a choice label")
    raw_claims = data.get("claims", [])
    if not isinstance(raw_claims, list):
        raise ValueError("claims must be a list")
    if verdict == "supports" and not raw_claims:
        raise ValueError("supports verdict needs at least one claim")
    claims = []
    for c in raw_claims:
        kind = c.get("kind")
        if kind not in CLAIM_KINDS:
            raise ValueError(f"claim kind must be one of {CLAIM_KINDS}, got {kind!r}")
        span_ids = c.get("evidence_span_ids", [])
        if not isinstance(span_ids, list) or not span_ids:
            raise ValueError("every claim must cite at least one evidence span id")
        locs = []
        for loc in c.get("localisations", []):
            if isinstance(loc, dict):
                locs.append({"camera": str(loc["camera"]), "t": int(loc["t"]), "region": str(loc["region"])})
            elif isinstance(loc, (list, tuple)) and len(loc) == 3:
                locs.append({"camera": str(loc[0]), "t": int(loc[1]), "region": str(loc[2])})
            else:
                raise ValueError(f"unreadable localisation {loc!r}")
        count_value = c.get("count_value")
        if count_value is not None:
            count_value = int(count_value)
        claims.append(
            {
                "kind": kind,
                "text": str(c.get("text", "")),
                "evidence_span_ids": [str(s) for s in span_ids],
                "localisations": locs,
                "count_value": count_value,
            }
        )
    confidence = _as_float(data.get("confidence", 0.5))
    if confidence is None:
        raise ValueError("confidence must be a number")
    return {
        "verdict": verdict,
        "choice": choice if verdict == "supports" else None,
        "claims": claims,
        "confidence": confidence,
        "note": str(data.get("note", "")),
    }


def _validate_rerank_v1(data: dict) -> dict:
    order = data.get("order")
    if not isinstance(order, list) or not all(isinstance(x, str) for x in order):
        raise ValueError("order must be a list of document ids")
    return {"order": order}


def _validate_search_final_v1(data: dict) -> dict:
    primary = data.get("primary")
    if not isinstance(primary, str) or not primary:
        raise ValueError("primary bucket id is required")
    supporting = []
    for row in data.get("supporting", []):
        if isinstance(row, dict):
            supporting.append({"camera": str(row["camera"]), "bucket": str(row["bucket"])})
        elif isinstance(row, (list, tuple)) and len(row) == 2:
            supporting.append({"camera": str(row[0]), "bucket": str(row[1])})
        else:
            raise ValueError(f"unreadable supporting row {row!r}")
    tentative = data.get("tentative_choice")
    if tentative is not None and tentative not in CHOICES:
        raise ValueError(f"tentative_choice must be a label or null, got {tentative!r}")
    return {"primary": primary, "supporting": supporting, "tentative_choice": tentative}


def _validate_text_payload(data: dict) -> dict:
    if not isinstance(data.get("text"), str):
        raise ValueError("text field is required")
    return {"text": data["text"]}


def _validate_parse_v1(data: dict) -> dict:
    out = {}
    for key in ("persons", "places", "objects", "actions"):
        val = data.get(key, [])
        if not isinstance(val, list):
            raise ValueError(f"{key} must be a list")
        out[key] = [str(x) for x in val]
    out["day"] = data.get("day")
    out["time_range"] = data.get("time_range")
    out["intent"] = data.get("intent", "other")
    return out


SCHEMA_VALIDATORS: dict[str, Callable[[dict], dict]] = {
    "answer_v1": _validate_answer_v1,
    "verify_v1": _validate_verify_v1,
    "rerank_v1": _validate_rerank_v1,
    "search_final_v1": _validate_search_final_v1,
    "summary_v1": _validate_text_payload,
    "prior_v1": _validate_text_payload,
    "parse_v1": _validate_parse_v1,
}


def validate_reply_text(schema: str, text: str) -> tuple[dict | None, str | None]:
    """Parse and validate raw reply text; returns (parsed, error marker)."""
    try:
        data = json.loads(_strip_fences(text))
    except json.JSONDecodeError as exc:
        return None, f"not valid JSON: {exc.msg}"
    if not isinstance(data, dict):
        return None, "reply is not a JSON object"
    try:
        return SCHEMA_VALIDATORS[schema](data), None
    except (ValueError, KeyError, TypeError) as exc:
        return None, str(exc)


# -- call ledger -------------------------------------------------------

@dataclass(frozen=True)
class LedgerEntry:
    question_id: str
    role: str
    backend_id: str
    status: str  # ok | error | schema_violation | synthetic


class CallLedger:
    """Append-only per-question accounting of every model call."""

    CORPUS = "_corpus"  # bucket for calls made outside any question

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[str, list[LedgerEntry]] = {}

    def record(self, question_id: str | None, role: str, backend_id: str, status: str) -> None:
        qid = question_id or self.CORPUS
        entry = LedgerEntry(qid, role, backend_id, status)
        with self._lock:
            self._entries.setdefault(qid, []).append(entry)

    def entries(self, question_id: str) -> list[LedgerEntry]:
        with self._lock:
            return list(self._entries.get(question_id, []))

    def question_ids(self) -> list[str]:
        with self._lock:
            return list(self._entries)

    def report(self, question_id: str) -> dict:
        """Exact per-role and per-status counts for one question."""
        rows = self.entries(question_id)
        if not rows:
            raise UnknownQuestion(f"no recorded calls for question {question_id!r}")
        by_role: dict[str, int] = {}
        by_status: dict[str, int] = {}
        for row in rows:
            by_role[row.role] = by_role.get(row.role, 0) + 1
            by_status[row.status] = by_status.get(row.status, 0) + 1
        return {"question": question_id, "total": len(rows), "by_role": by_role, "by_status": by_status}

    def total(self, question_id: str) -> int:
        return len(self.entries(question_id))

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            with self._lock:
                questions = list(self._entries)
            for qid in questions:
                rows = sorted(self.entries(qid), key=lambda e: (e.role, e.backend_id, e.status))
                for row in rows:
                    fh.write(
                        json.dumps(
                            {"question": row.question_id, "role": row.role,
                             "backend": row.backend_id, "status": row.status},
                            sort_keys=True, separators=(",", ":"),
                        ) + "\n"
                    )


# -- backends ----------------------------------------------------------

class Backend(Protocol):
    backend_id: str

    def complete(self, req: ModelRequest) -> str: ...


class NullBackend:
    """A disabled channel: every call fails fast."""

    def __init__(self, backend_id: str = "null"):
        self.backend_id = backend_id

    def complete(self, req: ModelRequest) -> str:
        raise HttpError("channel disabled", backend_id=self.backend_id)


class ScriptedBackend:
    """Deterministic test backend keyed by (role, hash of user parts).

    Unknown keys follow ``unknown_policy``: "error" raises, "consult"
    delegates to a consult function (the harness oracle).
    """

    def __init__(
        self,
        fixtures: dict[tuple[str, str], str] | None = None,
        unknown_policy: str = "error",
        consult: Callable[[ModelRequest], str] | None = None,
        backend_id: str = "scripted",
    ):
        if unknown_policy not in ("error", "consult"):
            raise GatewayError(f"unknown_policy must be error/consult, got {unknown_policy!r}")
        if unknown_policy == "consult" and consult is None:
            raise GatewayError("consult policy needs a consult function")
        self.fixtures = dict(fixtures or {})
        self.unknown_policy = unknown_policy
        self.consult = consult
        self.backend_id = backend_id

    def complete(self, req: ModelRequest) -> str:
        key = (req.role, request_key(req))
        if key in self.fixtures:
            return self.fixtures[key]
        if self.unknown_policy == "consult":
            return self.consult(req)  # type: ignore[misc]
        raise HttpError(f"no fixture for role {req.role!r} key {key[1]}", backend_id=self.backend_id)

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "ScriptedBackend":
        fixtures = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    fixtures[(row["role"], row["key"])] = row["text"]
        return cls(fixtures=fixtures, **kwargs)


def save_fixtures(fixtures: dict[tuple[str, str], str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (role, key), text in sorted(fixtures.items()):
            fh.write(json.dumps({"role": role, "key": key, "text": text}, sort_keys=True) + "\n")


_IMAGE_SUFFIXES = {".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg"}


def _frame_part(content: str) -> dict:
    """Frames travel as data-URL image parts when the ref is a real file."""
    path = Path(content)
    mime = _IMAGE_SUFFIXES.get(path.suffix.lower())
    if mime and path.exists():
        encoded = base64.b64encode(path.read_bytes()).decode("ascii")
        return {"type": "image_url", "image_url": {"url": f"data:{mime};base64,{encoded}"}}
    return {"type": "text", "text": f"[frame] {content}"}


class HttpBackend:
    """OpenAI-compatible chat-completions client with bounded retries."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str = "",
        backend_id: str | None = None,
        retries: int = 2,
        backoff: Sequence[float] = (1.0, 4.0),
        timeout: float = 60.0,
        transport=None,
    ):
        import httpx

        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.backend_id = backend_id or model
        self.retries = retries
        self.backoff = tuple(backoff)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def _payload(self, req: ModelRequest) -> dict:
        content = []
        for kind, body in req.user_parts:
            if kind == "text":
                content.append({"type": "text", "text": body})
            elif kind == "frame_ref":
                content.append(_frame_part(body))
            else:  # evidence travels as a fenced block
                content.append({"type": "text", "text": f"```evidence\n{body}\n```"})
        return {
            "model": self.model,
            "max_tokens": req.budget,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": content},
            ],
        }

    def complete(self, req: ModelRequest) -> str:
        import httpx

        payload = self._payload(req)
        last_error: GatewayError | None = None
        for attempt in range(self.retries + 1):
            if attempt > 0:
                delay = self.backoff[min(attempt - 1, len(self.backoff) - 1)] if self.backoff else 0.0
                if delay:
                    time.sleep(delay)
            try:
                resp = self._client.post(f"{self.endpoint}/chat/completions", json=payload)
            except httpx.TimeoutException as exc:
                last_error = Timeout(f"timeout contacting {self.endpoint}: {exc}", backend_id=self.backend_id)
                continue
            except httpx.HTTPError as exc:
                last_error = HttpError(f"transport failure: {exc}", backend_id=self.backend_id)
                continue
            if resp.status_code != 200:
                last_error = HttpError(f"status {resp.status_code}", backend_id=self.backend_id)
                continue
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, ValueError) as exc:
                last_error = HttpError(f"malformed completion body: {exc}", backend_id=self.backend_id)
                continue
        assert last_error is not None
        raise last_error


def http_backend_from_env(channel: str = "primary", env: dict | None = None, **kwargs) -> HttpBackend | None:
    """Build a channel from MODEL_ENDPOINT/MODEL_NAME/MODEL_API_KEY.

    Non-primary channels read the suffixed variables, e.g.
    MODEL_ENDPOINT_PRIOR for the "prior" channel. Returns None when the
    endpoint is not configured.
    """
    import os

    env = env if env is not None else dict(os.environ)
    suffix = "" if channel == "primary" else "_" + channel.upper()
    endpoint = env.get(f"MODEL_ENDPOINT{suffix}")
    if not endpoint:
        return None
    return HttpBackend(
        endpoint=endpoint,
        model=env.get(f"MODEL_NAME{suffix}", "default"),
        api_key=env.get(f"MODEL_API_KEY{suffix}", ""),
        backend_id=channel,
        **kwargs,
    )


# -- gateway -----------------------------------------------------------

class Gateway:
    """Routes requests to named channels and accounts for every call."""

    def __init__(
        self,
        channels: dict[str, Backend] | None = None,
        routes: dict[str, list[str]] | None = None,
        ledger: CallLedger | None = None,
        max_inflight: int = 4,
    ):
        self.channels = dict(channels or {})
        self.routes = dict(routes or {})
        self.ledger = ledger or CallLedger()
        self._gate = threading.Semaphore(max_inflight)

    def chain_for(self, role: str) -> list[Backend]:
        names = self.routes.get(role)
        if names is None:
            names = ["primary"] if "primary" in self.channels else []
        return [self.channels[name] for name in names if name in self.channels]

    def has_channel(self, role: str) -> bool:
        return bool(self.chain_for(role))

    def send(self, req: ModelRequest, backend: Backend | None = None) -> ModelReply:
        """One round-trip through one backend; reply schema-validated.

        Transport failures raise after the backend's own retry policy;
        schema violations do not raise, they come back as a reply with
        ``parsed=None`` and the violation marker, so the caller decides.
        """
        if backend is None:
            chain = self.chain_for(req.role)
            if not chain:
                raise HttpError(f"no channel configured for role {req.role!r}")
            backend = chain[0]
        started = time.perf_counter()
        with self._gate:
            try:
                text = backend.complete(req)
            except GatewayError:
                self.ledger.record(req.question_id, req.role, backend.backend_id, "error")
                raise
        parsed, schema_error = validate_reply_text(req.expected_schema, text)
        status = "ok" if parsed is not None else "schema_violation"
        self.ledger.record(req.question_id, req.role, backend.backend_id, status)
        return ModelReply(
            text=text,
            parsed=parsed,
            schema_error=schema_error,
            latency=time.perf_counter() - started,
            backend_id=backend.backend_id,
        )

    def run_with_fallback(
        self,
        req: ModelRequest,
        chain: Sequence[Backend] | None = None,
        default_fn: Callable[[ModelRequest], dict] | None = None,
    ) -> ModelReply:
        """Walk the channel chain; on exhaustion apply the local default rule.

        Total by construction: the result is either a schema-valid model
        reply or the default function's payload marked synthetic.
        """
        backends = list(chain) if chain is not None else self.chain_for(req.role)
        for backend in backends:
            try:
                reply = self.send(req, backend)
            except GatewayError:
                continue
            if reply.parsed is not None:
                return reply
        if default_fn is None:
            raise GatewayError(f"all channels failed for role {req.role!r} and no default rule given")
        payload = default_fn(req)
        text = json.dumps(payload, sort_keys=True)
        parsed, schema_error = validate_reply_text(req.expected_schema, text)
        self.ledger.record(req.question_id, req.role, "local", "synthetic")
        return ModelReply(
            text=text,
            parsed=parsed,
            schema_error=schema_error,
            latency=0.0,
            backend_id="local",
            synthetic=True,
        )


def ledger_report(ledger: CallLedger, question_id: str) -> dict:
    """Per-stage call counts for one processed question."""
    return ledger.report(question_id)
