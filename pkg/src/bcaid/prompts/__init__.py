"""Versioned prompt templates.

Each ``.txt`` file holds a system message and a user message separated by a
``---`` line; the user part carries named ``{placeholders}``. Templates are
pinned per release so identical inputs always assemble identical prompts.
"""

from __future__ import annotations

from importlib import resources

PROMPT_VERSION = "1"

_SEPARATOR = "\n---\n"


def _load(name: str) -> tuple[str, str]:
    text = resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
    if _SEPARATOR not in text:
        raise ValueError(f"prompt template {name!r} is missing the system/user separator")
    system, user = text.split(_SEPARATOR, 1)
    return system.strip(), user.strip()


def render(template: str, **fields: str) -> list[dict[str, str]]:
    """Assemble the role-tagged messages for a named template."""
    system, user = _load(template)
    return [
        {"role": "system", "content": system.format(**fields)},
        {"role": "user", "content": user.format(**fields)},
    ]
