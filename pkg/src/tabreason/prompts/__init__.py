"""Checksum-pinned prompt templates with literal placeholder substitution.

Templates live as data files next to this module rather than as string
constants, so their exact bytes are auditable and pinned by sha256 digests
in ``data/digests.json``. Substitution is a single literal pass: placeholder
syntax arriving inside a binding value (e.g. from a table cell) is never
re-expanded.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources

TEMPLATE_IDS = (
    "dp",
    "pyagent",
    "transposer",
    "detector",
    "determinator",
    "resort",
    "self_eval",
)

_PLACEHOLDER_RE = re.compile(r"\{\[([A-Z_]+)\]\}")


class PromptError(Exception):
    """Base class for template failures."""


class MissingBinding(PromptError):
    """A placeholder present in the template was not bound."""


class UnknownPlaceholder(PromptError):
    """A binding was supplied for a placeholder absent from the template."""


class TemplateDrift(PromptError):
    """A stored template no longer matches its pinned digest."""


def _data_text(name: str) -> str:
    return resources.files(__package__).joinpath("data", name).read_text(encoding="utf-8")


def template_body(template_id: str) -> str:
    """Return the stored template text (without the file's final newline)."""
    if template_id not in TEMPLATE_IDS:
        raise PromptError(f"unknown template id: {template_id}")
    body = _data_text(f"{template_id}.txt")
    return body[:-1] if body.endswith("\n") else body


def placeholders(template_id: str) -> set[str]:
    """The placeholder names appearing in a template."""
    return set(_PLACEHOLDER_RE.findall(template_body(template_id)))


def render(template_id: str, bindings: dict[str, str]) -> str:
    """Substitute every placeholder in one literal pass.

    Bindings must cover exactly the placeholders present in the template.
    """
    body = template_body(template_id)
    wanted = placeholders(template_id)
    missing = wanted - bindings.keys()
    if missing:
        raise MissingBinding(
            f"{template_id}: missing bindings for {sorted(missing)}"
        )
    extra = bindings.keys() - wanted
    if extra:
        raise UnknownPlaceholder(
            f"{template_id}: bindings for absent placeholders {sorted(extra)}"
        )
    return _PLACEHOLDER_RE.sub(lambda m: bindings[m.group(1)], body)


@dataclass(frozen=True)
class TemplateReport:
    template_id: str
    digest: str
    ok: bool
    placeholders: frozenset[str]


def validate_templates() -> list[TemplateReport]:
    """Check every stored template against its pinned digest.

    Raises TemplateDrift naming the first template whose bytes changed;
    otherwise returns one report per template with its placeholder inventory.
    """
    pinned = json.loads(_data_text("digests.json"))
    reports = []
    for tid in TEMPLATE_IDS:
        raw = _data_text(f"{tid}.txt")
        digest = hashlib.sha256(raw.encode("utf-8")).hexdigest()
        if digest != pinned.get(tid):
            raise TemplateDrift(f"template {tid!r} drifted from its pinned digest")
        reports.append(
            TemplateReport(
                template_id=tid,
                digest=digest,
                ok=True,
                placeholders=frozenset(placeholders(tid)),
            )
        )
    return reports
