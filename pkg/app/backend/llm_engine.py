"""
Model endpoints: the opaque generation services behind every agent role.

Three kinds share one interface, `ModelEndpoint.generate`:
- RemoteChat: any chat-completions HTTP server, content as typed parts
  (text and base64 PNG image URLs).
- LocalGGUF: a local GGUF model run through llama-cpp-python.
- ScriptedMock: canned turns replayed from a script file, for tests and
  reproducible desk runs.

Messages are passed in chat-completions wire format, so every endpoint sees
the same request the remote server would.
"""

# Python
import ast
import base64
import json
import logging
import os
import re
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

# Third-party
import requests

# Project
from app.backend.run_config import EndpointConfig
from app.backend.visual_tools import encode_png

RETRYABLE_STATUS_CODES = {408, 409, 429, 500, 502, 503, 504}
SCRIPT_TURN_SEPARATOR = "---"


class EndpointError(RuntimeError):
    """Generation failed at the endpoint."""


class TransportError(EndpointError):
    """The endpoint stayed unreachable after every retry."""


class GenerationError(EndpointError):
    """The endpoint rejected the request; retrying would not help."""


class ScriptExhaustedError(GenerationError):
    """A scripted endpoint was asked for a turn past the end of its script."""


@dataclass(frozen=True)
class Generation:
    text: str
    prompt_tokens: Optional[int] = None
    completion_tokens: Optional[int] = None


class ModelEndpoint(ABC):
    """Generation service; implementations must be safe for concurrent calls."""

    name = "endpoint"

    @abstractmethod
    def generate(
        self, messages: list, *, seed: int = 0, temperature: Optional[float] = None
    ) -> Generation:
        """Generate the next assistant turn for a chat-completions message list."""


class RemoteChatEndpoint(ModelEndpoint):
    """Chat-completions client with bounded retries and exponential backoff."""

    name = "remote_chat"

    def __init__(self, config: EndpointConfig, session: Optional[requests.Session] = None):
        self.config = config
        self.url = f"{config.base_url.rstrip('/')}/chat/completions"
        self.session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.getenv(self.config.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def generate(self, messages, *, seed=0, temperature=None) -> Generation:
        payload = {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature if temperature is None else temperature,
            "max_tokens": self.config.max_new_tokens,
            "seed": seed,
        }

        attempts = self.config.max_retries + 1
        last_error = None
        for attempt in range(attempts):
            try:
                response = self.session.post(
                    self.url,
                    headers=self._headers(),
                    json=payload,
                    timeout=self.config.request_timeout,
                )
            except requests.RequestException as e:
                last_error = e
            else:
                if response.status_code in RETRYABLE_STATUS_CODES:
                    last_error = EndpointError(
                        f"HTTP {response.status_code}: {response.text[:500]}"
                    )
                elif response.status_code >= 400:
                    raise GenerationError(
                        f"Endpoint rejected the request with HTTP {response.status_code}:\n"
                        f"{response.text[:2000]}"
                    )
                else:
                    try:
                        body = response.json()
                    except ValueError as e:
                        raise GenerationError(
                            f"Endpoint returned a non-JSON body:\n{response.text[:2000]}"
                        ) from e
                    return _generation_from_response(body)

            if attempt + 1 < attempts:
                delay = self.config.backoff_seconds * (2**attempt)
                logging.warning(
                    "Transport failure on %s (attempt %d/%d), retrying in %.1fs: %s",
                    self.url,
                    attempt + 1,
                    attempts,
                    delay,
                    last_error,
                )
                time.sleep(delay)

        raise TransportError(
            f"Endpoint unreachable after {attempts} attempts:\n"
            f"URL: {self.url}\n"
            f"Last error: {last_error}"
        )


class LocalGGUFEndpoint(ModelEndpoint):
    """Local GGUF model; llama.cpp contexts are not re-entrant, so calls are serialised."""

    name = "local_gguf"

    def __init__(self, config: EndpointConfig):
        if not config.model_path:
            raise ValueError("local_gguf endpoint needs model_path")

        self.config = config
        self._llm = None
        self._lock = threading.Lock()

    def get_llm(self):
        """Lazily initialize and return the llama.cpp model"""

        if self._llm is None:
            self._llm = self.initialize_llm()
        return self._llm

    def initialize_llm(self):
        """Load the GGUF weights, with a CLIP projector when images must be read."""

        # LLM
        from llama_cpp import Llama

        chat_handler = None
        if self.config.clip_model_path:
            from llama_cpp.llama_chat_format import Llava15ChatHandler

            chat_handler = Llava15ChatHandler(clip_model_path=self.config.clip_model_path)

        return Llama(
            model_path=self.config.model_path,
            n_ctx=self.config.n_ctx,
            chat_handler=chat_handler,
            verbose=False,
        )

    def generate(self, messages, *, seed=0, temperature=None) -> Generation:
        with self._lock:
            llm = self.get_llm()
            try:
                response = llm.create_chat_completion(
                    messages=messages,
                    temperature=self.config.temperature if temperature is None else temperature,
                    max_tokens=self.config.max_new_tokens,
                    seed=seed,
                )
            except (RuntimeError, ValueError) as e:
                raise GenerationError(f"Local model failed to generate:\n{e}") from e

        return _generation_from_response(response)


class ScriptedMockEndpoint(ModelEndpoint):
    """
    Replays canned turns.

    The turn index is the number of assistant messages already in the request,
    so concurrent trajectories never share replay state. A script is chosen by
    the first entry whose `match` text occurs in the first user message (the prompt) and whose
    `seeds` (when given) contain the request seed; otherwise the default script.
    """

    name = "scripted_mock"

    def __init__(self, default: Optional[list] = None, scripts: Optional[list] = None):
        self.default = list(default or [])
        self.scripts = [
            {
                "match": script.get("match", ""),
                "seeds": script.get("seeds"),
                "turns": list(script["turns"]),
            }
            for script in scripts or []
        ]

    @classmethod
    def from_file(cls, path: str) -> "ScriptedMockEndpoint":
        """Load a `.json` script document or a `.txt` file of `---`-separated turns."""

        with open(path, "r", encoding="utf-8") as _file:
            content = _file.read()

        if path.endswith(".json"):
            data = json.loads(content)
            if isinstance(data, list):
                return cls(default=data)
            return cls(default=data.get("default"), scripts=data.get("scripts"))

        turns, current = [], []
        for line in content.splitlines():
            if line.strip() == SCRIPT_TURN_SEPARATOR:
                turns.append("\n".join(current).strip())
                current = []
            else:
                current.append(line)
        if "\n".join(current).strip():
            turns.append("\n".join(current).strip())

        return cls(default=turns)

    def generate(self, messages, *, seed=0, temperature=None) -> Generation:
        turn_index = sum(1 for message in messages if message.get("role") == "assistant")
        turns = self._select_script(prompt_text(messages), seed)

        if turn_index >= len(turns):
            raise ScriptExhaustedError(
                f"Scripted endpoint has {len(turns)} turns; turn {turn_index} was requested"
            )

        return Generation(text=turns[turn_index])

    def _select_script(self, user_text: str, seed: int) -> list:
        for script in self.scripts:
            if script["match"] and script["match"] not in user_text:
                continue
            if script["seeds"] is not None and seed not in script["seeds"]:
                continue
            return script["turns"]
        return self.default


def build_endpoint(config: Optional[EndpointConfig]) -> Optional[ModelEndpoint]:
    """Instantiate the endpoint described by a config section (None stays None)."""

    if config is None:
        return None

    if config.kind == "remote_chat":
        return RemoteChatEndpoint(config)

    if config.kind == "local_gguf":
        return LocalGGUFEndpoint(config)

    if config.kind == "scripted_mock":
        if not config.script_path:
            raise ValueError("scripted_mock endpoint needs script_path")
        return ScriptedMockEndpoint.from_file(config.script_path)

    raise ValueError(f"Unknown endpoint kind: {config.kind}")


def text_part(text: str) -> dict:
    return {"type": "text", "text": text}


def image_part(image) -> dict:
    """PNG data-URL content part for a Pillow image."""

    encoded = base64.b64encode(encode_png(image)).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{encoded}"}}


def prompt_text(messages: list) -> str:
    """Concatenated text parts of the first user message."""

    for message in messages:
        if message.get("role") != "user":
            continue

        content = message.get("content")
        if isinstance(content, str):
            return content
        return "\n".join(
            part.get("text", "") for part in content or [] if part.get("type") == "text"
        )

    return ""


def ask(endpoint: ModelEndpoint, system_prompt: str, content: list, *, seed: int = 0,
        temperature: Optional[float] = None) -> Generation:
    """Single-turn request used by the judge and the curation agents."""

    messages = [
        {"role": "system", "content": system_prompt},
        {"role": "user", "content": content},
    ]
    return endpoint.generate(messages, seed=seed, temperature=temperature)


def extract_json_object(text: str) -> dict:
    """
    Find a JSON object in a model response.

    Code blocks are checked first, then the whole text, then the outermost
    brace-delimited span. Each candidate is tried as JSON and as a Python literal.

    Raises:
        ValueError: if no candidate decodes to a dict.
    """

    if not isinstance(text, str) or not text.strip():
        raise ValueError("Response is empty.")

    code_block_pattern = re.compile(r"```.*?\n(.*?)```", re.DOTALL)
    candidates = [block.strip() for block in code_block_pattern.findall(text)]
    candidates.append(text.strip())

    start, end = text.find("{"), text.rfind("}")
    if 0 <= start < end:
        candidates.append(text[start : end + 1])

    for candidate in candidates:
        try:
            parsed = json.loads(candidate)
            if isinstance(parsed, dict):
                return parsed
        except (json.JSONDecodeError, RecursionError):
            try:
                parsed = ast.literal_eval(candidate)
                if isinstance(parsed, dict):
                    return parsed
            except (SyntaxError, ValueError, TypeError, MemoryError, RecursionError):
                continue

    raise ValueError(f"No JSON object found in response:\n{text[:2000]}")


def _generation_from_response(response: dict) -> Generation:
    try:
        text = response["choices"][0]["message"]["content"] or ""
    except (KeyError, IndexError, TypeError) as e:
        raise GenerationError(f"Malformed chat-completions response:\n{response}") from e

    usage = response.get("usage") or {}
    return Generation(
        text=text,
        prompt_tokens=usage.get("prompt_tokens"),
        completion_tokens=usage.get("completion_tokens"),
    )
