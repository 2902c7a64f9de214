"""LLM rationale generation, caching, length control and attachment.

For every example two questions are sent to a chat model: one about the
picture (the image rationale) and one about the sentence (the text rationale).
Answers are cached in an append-only JSONL file keyed by
``(example_id, prompt_kind, provider_tag)``. Examples the model refuses to
explain are dropped when rationales are attached.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .data import MultimodalExample

log = logging.getLogger(__name__)

ENV_ENDPOINT = "LRSA_LLM_ENDPOINT"
ENV_API_KEY = "LRSA_LLM_API_KEY"
ENV_MODEL = "LRSA_LLM_MODEL"


class PromptKind(str, Enum):
    PLAIN = "plain"
    TASK_HINTED = "task_hinted"
    DETAILED = "detailed"


class Refusal(Exception):
    """The model declined to answer."""


class TransportError(Exception):
    """The request did not complete (network, HTTP status, malformed reply)."""


class CoverageError(KeyError):
    pass


# ------------------------------------------------------------------ prompts

_DETAILED_PREAMBLE = (
    "First, explain the aspect of Aspect-based sentiment analysis. "
    "Then you will perform an aspect-based sentiment analysis task with me, "
    "You are an assistant for the task. "
    "This is the example of the task: "
    'Tweet: "On the scene of a robbery at Regions Bank at 4003 University Drive. '
    'Officers have K - 9 looking for any traces." '
    'In this example, the aspects are "4003 University Drive" and "K - 9", '
    "the sentiment of them is neutral. Don't analyze the example. "
    "Then for the task question, given the following tweet, analyze this sentence "
    "from the sentiment analysis perspective to better help me find aspect words "
    "and determine their sentiment.\n"
)
_DETAILED_TAIL = (
    "Please note aspects in tweets may be only one, or multiple, not all nouns are "
    "aspects, but aspects must consist of one or more nouns in the tweet as a subject. "
    "Choose One or Two aspects then explain. There must be an explanation. "
    "Don't give ambiguous opinions."
)
_TASK_PREAMBLE = (
    "you will perform a aspect-based sentiment analysis task with me, "
    "You are an assistant for the task.\n"
)

_TEMPLATES = {
    PromptKind.PLAIN: (
        "{tweet}\nQ2: Explain the picture.",
        "{tweet}\nQ1: Explain the text above.",
    ),
    PromptKind.TASK_HINTED: (
        _TASK_PREAMBLE + "{tweet}\nFor the above pictures and text, "
        "Q2: explain the above picture and expressions if there are character in the picture.",
        _TASK_PREAMBLE + "{tweet}\nFor the above pictures and text, Q1: explain the above text.",
    ),
    PromptKind.DETAILED: (
        _DETAILED_PREAMBLE + 'Tweet: "{tweet}"\n' + _DETAILED_TAIL + " Explain the picture attached to the tweet.",
        _DETAILED_PREAMBLE + 'Tweet: "{tweet}"\n' + _DETAILED_TAIL,
    ),
}


@dataclass(frozen=True)
class PromptTemplate:
    kind: PromptKind = PromptKind.TASK_HINTED
    word_limit: int = 140

    def __post_init__(self):
        object.__setattr__(self, "kind", PromptKind(self.kind))
        if self.word_limit <= 0:
            raise ValueError("word_limit must be positive")

    @property
    def image_question(self) -> str:
        return _TEMPLATES[self.kind][0]

    @property
    def text_question(self) -> str:
        return _TEMPLATES[self.kind][1]


def render_prompt(template: PromptTemplate, tweet_text: str) -> tuple[str, str]:
    """Returns (image_prompt, text_prompt)."""
    if not tweet_text or not tweet_text.strip():
        raise ValueError("tweet text is empty")
    limit = f"\nThe answer should be no more than {template.word_limit} words."
    return (
        template.image_question.format(tweet=tweet_text) + limit,
        template.text_question.format(tweet=tweet_text) + limit,
    )


# ------------------------------------------------------------------ clients


class ChatClient(Protocol):
    provider_tag: str

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        """Return the reply text; raise Refusal or TransportError."""


class MockChatClient:
    """Deterministic offline client.

    Replies are derived from a hash of the prompt. Requests whose image
    reference is listed in ``refuse_refs`` are refused. ``fail_times`` makes
    the first N calls raise TransportError, to exercise retries.
    """

    provider_tag = "mock"

    def __init__(self, refuse_refs: Iterable[str] = (), reply_words: int = 60, fail_times: int = 0):
        self.refuse_refs = set(refuse_refs)
        self.reply_words = reply_words
        self.fail_times = fail_times
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        with self._lock:
            self.calls += 1
            n = self.calls
        if n <= self.fail_times:
            raise TransportError("scripted transport failure")
        if image_ref is not None and image_ref in self.refuse_refs:
            raise Refusal(image_ref)
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        words = [f"r{digest[i % 64]}{digest[(i * 7) % 64]}" for i in range(self.reply_words)]
        return " ".join(words)


class HttpChatClient:
    """OpenAI-compatible chat-completions endpoint over HTTP.

    The image is passed by URL reference; pixels are never read here.
    """

    def __init__(self, endpoint: str, api_key: str, model: str = "gemini-1.5-pro",
                 timeout: float = 60.0, transport=None):
        import httpx

        self.endpoint = endpoint
        self.model = model
        self.provider_tag = f"http:{model}"
        self._client = httpx.Client(
            timeout=timeout,
            headers={"Authorization": f"Bearer {api_key}"},
            transport=transport,
        )

    @classmethod
    def from_env(cls) -> "HttpChatClient":
        endpoint, key = os.environ.get(ENV_ENDPOINT), os.environ.get(ENV_API_KEY)
        if not endpoint or not key:
            raise RuntimeError(f"set {ENV_ENDPOINT} and {ENV_API_KEY} (or pass --mock)")
        return cls(endpoint, key, os.environ.get(ENV_MODEL, "gemini-1.5-pro"))

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        import httpx

        content: list[dict] = [{"type": "text", "text": prompt}]
        if image_ref:
            content.append({"type": "image_url", "image_url": {"url": image_ref}})
        body = {"model": self.model, "messages": [{"role": "user", "content": content}]}
        try:
            resp = self._client.post(self.endpoint, json=body)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}")
        try:
            choice = resp.json()["choices"][0]
        except (ValueError, KeyError, IndexError) as exc:
            raise TransportError(f"malformed reply: {exc}") from exc
        text = (choice.get("message") or {}).get("content") or ""
        if choice.get("finish_reason") in ("content_filter", "safety") or not text.strip():
            raise Refusal(choice.get("finish_reason") or "empty reply")
        return text


def call_with_retries(fn: Callable[[], str], attempts: int = 3, base_delay: float = 0.5,
                      sleep: Callable[[float], None] = time.sleep) -> str:
    for attempt in range(attempts):
        try:
            return fn()
        except TransportError:
            if attempt == attempts - 1:
                raise
            sleep(base_delay * 2**attempt)
    raise AssertionError("unreachable")


# -------------------------------------------------------------------- cache


@dataclass(frozen=True)
class RationaleRecord:
    example_id: str
    prompt_kind: str
    image_rationale: str | None
    text_rationale: str | None
    refused: bool
    provider_tag: str
    created_at: str
    error: str | None = None

    def __post_init__(self):
        both_null = self.image_rationale is None and self.text_rationale is None
        if self.refused != both_null:
            raise ValueError("refused must hold exactly when both rationales are null")

    @property
    def key(self) -> tuple[str, str, str]:
        return self.example_id, self.prompt_kind, self.provider_tag


class RationaleCache:
    """Append-only JSONL store; the last line for a key wins."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._records: dict[tuple[str, str, str], RationaleRecord] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        rec = RationaleRecord(**json.loads(line))
                        self._records[rec.key] = rec

    def __len__(self) -> int:
        return len(self._records)

    def get(self, example_id: str, prompt_kind: str, provider_tag: str) -> RationaleRecord | None:
        return self._records.get((example_id, prompt_kind, provider_tag))

    def append(self, record: RationaleRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(asdict(record), sort_keys=True, ensure_ascii=False) + "\n")
            f.flush()
        self._records[record.key] = record


def _utcnow() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _ask(example: MultimodalExample, client: ChatClient, template: PromptTemplate,
         clock: Callable[[], str], sleep) -> RationaleRecord:
    image_prompt, text_prompt = render_prompt(template, example.text)
    base = dict(example_id=example.id, prompt_kind=template.kind.value,
                provider_tag=client.provider_tag)
    try:
        img = call_with_retries(lambda: client.complete(image_prompt, example.image_ref), sleep=sleep)
        txt = call_with_retries(lambda: client.complete(text_prompt, example.image_ref), sleep=sleep)
    except Refusal:
        return RationaleRecord(**base, image_rationale=None, text_rationale=None,
                               refused=True, created_at=clock())
    except TransportError as exc:
        return RationaleRecord(**base, image_rationale=None, text_rationale=None,
                               refused=True, created_at=clock(), error=f"transport: {exc}")
    return RationaleRecord(**base, image_rationale=img, text_rationale=txt,
                           refused=False, created_at=clock())


def generate(corpus: Sequence[MultimodalExample], client: ChatClient, template: PromptTemplate,
             cache: RationaleCache, max_in_flight: int = 4,
             clock: Callable[[], str] = _utcnow, sleep=time.sleep) -> list[RationaleRecord]:
    """Fetch (or reuse cached) rationales for every example, in corpus order."""
    kind, tag = template.kind.value, client.provider_tag
    todo = [ex for ex in corpus if cache.get(ex.id, kind, tag) is None]
    if todo:
        with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
            # map() yields in submission order, so the cache file is deterministic
            for rec in pool.map(lambda ex: _ask(ex, client, template, clock, sleep), todo):
                cache.append(rec)
    log.info("rationales: %d cached, %d requested", len(corpus) - len(todo), len(todo))
    return [cache.get(ex.id, kind, tag) for ex in corpus]


# ------------------------------------------------------------------- length


@dataclass(frozen=True)
class LengthPolicy:
    """Cap on combined rationale tokens: ``multiplier`` x average pair length."""

    multiplier: float = 2.0
    reference: float = 0.0

    def __post_init__(self):
        if self.multiplier <= 0:
            raise ValueError("multiplier must be positive")

    @classmethod
    def from_corpus(cls, train: Sequence[MultimodalExample], multiplier: float = 2.0) -> "LengthPolicy":
        if not train:
            raise ValueError("reference length needs a non-empty training split")
        total = sum(ex.image_features.shape[0] + len(ex.text_tokens) for ex in train)
        return cls(multiplier, total / len(train))

    @property
    def cap(self) -> int:
        return max(2, int(self.multiplier * self.reference))


def whitespace_tokenize(text: str) -> list[str]:
    return text.split()


def enforce_length(image_rationale: str, text_rationale: str, policy: LengthPolicy,
                   tokenizer: Callable[[str], list[str]] = whitespace_tokenize) -> tuple[list[str], list[str]]:
    """Tokenize both rationales and trim trailing tokens, longer one first.

    An empty rationale becomes a single ``<unk>`` so its segment keeps a row.
    """
    img = tokenizer(image_rationale) or ["<unk>"]
    txt = tokenizer(text_rationale) or ["<unk>"]
    excess = len(img) + len(txt) - policy.cap
    while excess > 0:
        if len(img) >= len(txt):
            img.pop()
        else:
            txt.pop()
        excess -= 1
    return img, txt


def attach(corpus: Sequence[MultimodalExample], records: Iterable[RationaleRecord], policy: LengthPolicy,
           tokenizer: Callable[[str], list[str]] = whitespace_tokenize) -> list[MultimodalExample]:
    by_id = {r.example_id: r for r in records}
    out, dropped = [], []
    for ex in corpus:
        rec = by_id.get(ex.id)
        if rec is None:
            raise CoverageError(f"no rationale record for {ex.id}")
        if rec.refused:
            dropped.append(ex.id)
            continue
        img, txt = enforce_length(rec.image_rationale, rec.text_rationale, policy, tokenizer)
        out.append(ex.with_rationales(img, txt))
    if dropped:
        log.info("dropped %d refused examples: %s", len(dropped), ", ".join(dropped))
    return out
