"""Skill-label routing from free-form instructions.

Prompts follow the in-context example format (Input: "..." / Output:
["label", ...]); completions come from a pluggable client. The default
offline path is a deterministic keyword rule engine; a recorded-fixture
client and a remote HTTP client are available for parity with an actual
language model.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .grounding import tokenize
from .skills import SkillLibrary, UnknownSkill


class ParseFailure(ValueError):
    """Completion contained no bracketed label list."""


class RoutingFailure(RuntimeError):
    """Both the completion client and the rule fallback failed."""


# The in-context examples every prompt starts from. The "grasp" output maps
# onto the pick skill via the library alias table.
DEFAULT_EXAMPLES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("Pick up the lemon", ("pick",)),
    ("Put the screwdriver away", ("pick", "place")),
    ("Pls grab me the screwdriver and put it away", ("pick", "place")),
    ("Grab the green bowl", ("grasp",)),
    ("Put the lemon in the bowl", ("pick", "place")),
    ("Open the top drawer", ("open",)),
    ("Pls shut the drawer", ("close",)),
    ("put the expo marker away", ("pick", "place")),
    ("put the Blue lego in the cabinet", ("pick", "place")),
)


@dataclass
class PromptTemplate:
    examples: tuple = DEFAULT_EXAMPLES
    stop: str = "\n"

    def validate(self, library: SkillLibrary):
        for _, labels in self.examples:
            for label in labels:
                library.resolve(label)  # raises UnknownSkill


def _format_labels(labels) -> str:
    return "[" + ", ".join(f'"{l}"' for l in labels) + "]"


def build_prompt(instruction: str, template: PromptTemplate) -> str:
    parts = []
    for text, labels in template.examples:
        parts.append(f'Input: "{text}"\nOutput: {_format_labels(labels)}\n')
    parts.append(f'Input: "{instruction}"\nOutput:')
    return "\n".join(parts)


_LIST_RE = re.compile(r"\[[^\]\[]*\]")
_ITEM_RE = re.compile(r"[\"']([^\"']+)[\"']")


def parse_labels(completion: str, library: SkillLibrary | None = None) -> list[str]:
    """Extract the first bracketed, quoted label list from a completion."""
    m = _LIST_RE.search(completion)
    if not m:
        raise ParseFailure(f"no label list in completion: {completion!r}")
    labels = [s.strip().lower() for s in _ITEM_RE.findall(m.group(0))]
    if not labels:
        raise ParseFailure(f"empty label list in completion: {completion!r}")
    if library is not None:
        labels = [library.resolve(l) for l in labels]
    return labels


# ---------------------------------------------------------------------------
# Rule engine

_OPEN_WORDS = {"open", "yank", "tug", "peek", "check"}
_CLOSE_WORDS = {"close", "shut", "push"}
_POUR_WORDS = {"pour", "fill", "refill"}
_MACHINE_WORDS = {"keurig", "espresso", "machine", "compartment"}
_POD_WORDS = {"pod", "brew"}
_PICK_WORDS = {"pick", "fetch", "pass", "hand", "locate", "take"}
_GRASP_WORDS = {"grab", "get", "grasp"}
_PUT_WORDS = {"put", "plop", "place", "drop", "insert", "load"}
_DEST_WORDS = {"in", "into", "onto", "away"}
_REORIENT_HINTS = ("upright", "flip", "right side up", "right-side up", "right-side-up")


def rule_route(instruction: str) -> list[str]:
    """Deterministic keyword routing; mirrors the in-context example outputs."""
    words = set(tokenize(instruction))
    lowered = instruction.lower()
    if words & _POD_WORDS:
        return ["load_pod"]
    if any(h in lowered for h in _REORIENT_HINTS):
        return ["reorient_mug"]
    if words & _POUR_WORDS:
        return ["refill_keurig"] if words & _MACHINE_WORDS else ["pour_cup"]
    if words & _OPEN_WORDS:
        return ["open"]
    if words & _CLOSE_WORDS:
        return ["close"]
    destination = bool(words & _DEST_WORDS)
    if words & _PICK_WORDS:
        return ["pick", "place"] if destination else ["pick"]
    if words & _GRASP_WORDS:
        return ["pick", "place"] if destination else ["grasp"]
    if words & _PUT_WORDS and destination:
        return ["pick", "place"]
    raise RoutingFailure(f"no routing rule matched: {instruction!r}")


class RuleClient:
    """Completion client backed by the rule engine (always available)."""

    def complete(self, prompt: str) -> str:
        instruction = _last_prompt_input(prompt)
        return " " + _format_labels(rule_route(instruction))


def _last_prompt_input(prompt: str) -> str:
    matches = re.findall(r'Input: "((?:[^"\\]|\\.)*)"', prompt)
    if not matches:
        raise ParseFailure("prompt has no Input stanza")
    return matches[-1]


def fixture_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class FixtureClient:
    """Replays recorded completions keyed by prompt hash."""

    def __init__(self, fixture_dir):
        self.fixture_dir = Path(fixture_dir)

    def complete(self, prompt: str) -> str:
        path = self.fixture_dir / f"{fixture_key(prompt)}.json"
        if not path.exists():
            raise FileNotFoundError(f"no fixture for prompt hash {fixture_key(prompt)}")
        return json.loads(path.read_text())["completion"]

    def record(self, prompt: str, completion: str):
        self.fixture_dir.mkdir(parents=True, exist_ok=True)
        path = self.fixture_dir / f"{fixture_key(prompt)}.json"
        path.write_text(json.dumps({"prompt": prompt, "completion": completion}, indent=2))


class HTTPClient:
    """Minimal JSON completion endpoint client (opt-in).

    POSTs {"prompt": ..., "stop": ...} to the base URL; expects
    {"completion": "..."} back. The auth token is read from the environment
    variable named by `token_env`.
    """

    def __init__(self, base_url: str, token_env: str = "GROUNDACT_LLM_TOKEN", timeout: float = 30.0):
        self.base_url = base_url
        self.token_env = token_env
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        body = json.dumps({"prompt": prompt, "stop": "\n"}).encode("utf-8")
        req = urllib.request.Request(self.base_url, data=body, method="POST")
        req.add_header("Content-Type", "application/json")
        token = os.environ.get(self.token_env)
        if token:
            req.add_header("Authorization", f"Bearer {token}")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))["completion"]


def select_skills(
    instruction: str,
    library: SkillLibrary,
    client=None,
    template: PromptTemplate | None = None,
) -> list[str]:
    """Route an instruction to an ordered list of canonical skill labels.

    Tries the completion client first (when given); any client or parse error
    falls back to the rule engine. Labels are alias-resolved and validated
    against the library.
    """
    template = template or PromptTemplate()
    completion_error = None
    labels = None
    if client is not None:
        try:
            completion = client.complete(build_prompt(instruction, template))
            labels = parse_labels(completion)
        except UnknownSkill:
            raise
        except Exception as exc:  # client/transport/parse failures fall back
            completion_error = exc
    if labels is None:
        try:
            labels = rule_route(instruction)
        except RoutingFailure:
            if completion_error is not None:
                raise RoutingFailure(
                    f"client failed ({completion_error}) and no rule matched: {instruction!r}"
                )
            raise
    return [library.resolve(l) for l in labels]
