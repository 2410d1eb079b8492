"""Prompt template registry and structured-output parsing.

Templates are plain text files with {placeholder} slots, shipped inside the
package and overridable from a user directory. A template may declare an
output schema: required keys and their basic types. Responses are parsed by
locating the first well-formed structured block in the raw text, so prose
around the block is tolerated.
"""

from __future__ import annotations

import ast
import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..errors import SchemaParseError, TemplateError

logger = logging.getLogger(__name__)

# type tags accepted in schema declarations
_CHECKERS = {
    "bool": lambda v: isinstance(v, bool),
    "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "str": lambda v: isinstance(v, str),
    "list": lambda v: isinstance(v, list),
    "dict": lambda v: isinstance(v, dict),
}

# Output schemas for the shipped templates. A template absent from this map
# produces free text and no parsed payload.
SCHEMAS: dict[str, dict[str, str]] = {
    "episode_boundary": {
        "should_end": "bool",
        "should_wait": "bool",
        "confidence": "float",
        "topic_summary": "str",
    },
    "episode_metadata": {"title": "str", "summary": "str"},
    "topic_aggregation": {
        "matched_topics": "list",
        "title": "str",
        "summary": "str",
        "keywords": "list",
        "episode_weights": "dict",
    },
    "fact_extraction": {"facts": "list"},
    "judge": {"correct": "bool"},
}


@dataclass(frozen=True)
class Template:
    """A named prompt with placeholder slots and an optional output schema."""

    id: str
    text: str
    schema: dict[str, str] | None = None

    def render(self, variables: dict) -> str:
        try:
            return self.text.format(**variables)
        except (KeyError, IndexError) as exc:
            raise TemplateError(f"template {self.id!r} missing binding: {exc}") from None


class TemplateRegistry:
    """Loads packaged templates, optionally shadowed by files in override_dir."""

    def __init__(self, override_dir: str | Path | None = None):
        self._templates: dict[str, Template] = {}
        for entry in resources.files("hgmem.prompts").iterdir():
            if entry.name.endswith(".txt"):
                tid = entry.name[:-4]
                self.register(Template(tid, entry.read_text(encoding="utf-8"), SCHEMAS.get(tid)))
        if override_dir is not None:
            for path in sorted(Path(override_dir).glob("*.txt")):
                tid = path.stem
                self.register(Template(tid, path.read_text(encoding="utf-8"), SCHEMAS.get(tid)))

    def register(self, template: Template) -> None:
        self._templates[template.id] = template

    def get(self, template_id: str) -> Template:
        try:
            return self._templates[template_id]
        except KeyError:
            raise TemplateError(f"unknown template {template_id!r}") from None

    def ids(self) -> list[str]:
        return sorted(self._templates)


def _balanced_blocks(text: str):
    """Yield candidate {...} substrings with balanced braces, string-aware."""
    i = 0
    n = len(text)
    while i < n:
        if text[i] != "{":
            i += 1
            continue
        depth = 0
        in_string: str | None = None
        escaped = False
        for j in range(i, n):
            ch = text[j]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == in_string:
                    in_string = None
                continue
            if ch in "\"'":
                in_string = ch
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    yield text[i:j + 1]
                    break
        i += 1


def extract_structured_block(text: str) -> dict:
    """Return the first parseable mapping found in the text.

    JSON is tried first, then Python literal syntax as a fallback for outputs
    that use single quotes or True/False.
    """
    for block in _balanced_blocks(text):
        try:
            obj = json.loads(block)
        except json.JSONDecodeError:
            try:
                obj = ast.literal_eval(block)
            except (ValueError, SyntaxError):
                continue
        if isinstance(obj, dict):
            return obj
    raise SchemaParseError("no structured block found in response", text)


def parse_payload(text: str, schema: dict[str, str]) -> dict:
    """Extract a structured block and check it against the schema."""
    obj = extract_structured_block(text)
    for key, type_tag in schema.items():
        if key not in obj:
            raise SchemaParseError(f"structured block missing key {key!r}", text)
        if not _CHECKERS[type_tag](obj[key]):
            raise SchemaParseError(
                f"key {key!r} expected {type_tag}, got {type(obj[key]).__name__}", text)
        if type_tag == "float":
            obj[key] = float(obj[key])
    return obj
