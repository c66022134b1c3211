"""Prompt template loading and rendering.

Templates live as text files next to the package (``templates/<id>.txt``),
each split into a ``[system]`` and a ``[user]`` part with named ``{...}``
placeholders. Rendering is strict: every placeholder must be bound, and the
same variables always produce byte-identical text.

The section headers below double as parse anchors for the scripted backend,
which recovers structured data from rendered prompts.
"""

from __future__ import annotations

import string
from functools import lru_cache
from importlib import resources

SECTION_PERSONA = "## Persona"
SECTION_SHORT = "## Recent trips (short-term memory)"
SECTION_LONG = "## Longer history (long-term memory)"
SECTION_CHOICES = "## Choice set"
SECTION_PERCEIVED = "## Perceived route conditions"
SECTION_CASE = "## Case under review"
SECTION_CRITIQUES = "## Analyst critiques"
SECTION_DIRECTIVE = "## Edit directive"
SECTION_HISTORY = "## Observed trips"
SECTION_CANDIDATE = "## Candidate persona"
SECTION_BASELINE = "## Baseline persona"

NO_HISTORY_TEXT = "No prior trips."


class PromptError(ValueError):
    """Template missing, malformed, or rendered with unbound placeholders."""


@lru_cache(maxsize=None)
def load_template(template_id: str) -> tuple[str, str]:
    """Return (system_text, user_template) for a template id."""
    try:
        raw = resources.files("routesim").joinpath(f"templates/{template_id}.txt").read_text("utf-8")
    except FileNotFoundError:
        raise PromptError(f"unknown template {template_id!r}") from None
    if not raw.startswith("[system]\n") or "\n[user]\n" not in raw:
        raise PromptError(f"template {template_id!r} must contain [system] and [user] sections")
    system_text, user_template = raw[len("[system]\n"):].split("\n[user]\n", 1)
    return system_text.strip(), user_template.strip()


def placeholders(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


def render(template_id: str, variables: dict[str, str]) -> tuple[str, str]:
    """Render a template; raises PromptError when a placeholder is unbound."""
    system_text, user_template = load_template(template_id)
    needed = placeholders(user_template)
    missing = needed - set(variables)
    if missing:
        raise PromptError(f"template {template_id!r}: unbound placeholders {sorted(missing)}")
    return system_text, user_template.format(**variables)
