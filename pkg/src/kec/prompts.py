"""Prompt construction and response parsing for knowledge extraction.

Three templates: concept abstraction over a merged noun set, per-concept
attribute listing, and contrastive attribute listing for a concept pair.
Every prompt requests structured key-value output; parsing falls back to
line-pattern extraction when the model ignores the format instruction.
"""

import re

from .errors import LLMParseError

TEMPLATE_CONCEPT = "concept"
TEMPLATE_UNI_ATTR = "uni_attr"
TEMPLATE_BI_ATTR = "bi_attr"


def _criteria_block(base, domain_hint):
    if domain_hint:
        return f"{base} Focus on {domain_hint}."
    return base


def render_concept_prompt(nouns, domain_hint=None):
    criteria = _criteria_block(
        "The concept must cover exactly the given nouns as a single class, "
        "without drifting to related nouns outside that class.",
        domain_hint,
    )
    return (
        "[Task] Merge the following nouns into one representative concept "
        "and describe that concept in a few words.\n\n"
        f"[Additional criteria] {criteria}\n\n"
        "[Output format]\nConcept: <concept name>\nDescription: <one short sentence>\n\n"
        f"[Input] Given nouns: {', '.join(nouns)}"
    )


def render_uni_attr_prompt(concept_name, count, domain_hint=None):
    criteria = _criteria_block(
        "Describe only the visual appearance of each attribute, "
        "not its function.",
        domain_hint,
    )
    return (
        f"[Task] List the {count} most representative and distinctive "
        "attributes observable in images of the given concept, such that they "
        "clearly separate objects of this concept from similar classes.\n\n"
        f"[Additional criteria] {criteria}\n\n"
        "[Output format]\n"
        + "\n".join(f"{i + 1}. <attribute>" for i in range(count))
        + "\n\n"
        f"[Input] Given concept: {concept_name}"
    )


def render_bi_attr_prompt(name_a, name_b, count, domain_hint=None):
    criteria = _criteria_block(
        "The specific appearance of each attribute must make it easy to tell "
        "which of the two concepts an object belongs to.",
        domain_hint,
    )
    plural = "attribute that distinguishes" if count == 1 else (
        "attributes that distinguish"
    )
    return (
        f"[Task] List {count} {plural} the two given concepts.\n\n"
        f"[Additional criteria] {criteria}\n\n"
        "[Output format]\n"
        + "\n".join(f"{i + 1}. <attribute>" for i in range(count))
        + "\n\n"
        f"[Input] Given two concepts: {name_a} | {name_b}"
    )


_CONCEPT_RE = re.compile(r"^\s*concept\s*[:\-]\s*(.+)$", re.IGNORECASE)
_DESC_RE = re.compile(r"^\s*description\s*[:\-]\s*(.+)$", re.IGNORECASE)
_ITEM_RE = re.compile(r"^\s*(?:\d+[.)]\s*|[-*]\s+)(.+)$")


def parse_concept_response(text):
    """Extract (name, description); falls back to first-line heuristics."""
    name = None
    description = None
    lines = [ln for ln in text.splitlines() if ln.strip()]
    for line in lines:
        m = _CONCEPT_RE.match(line)
        if m and name is None:
            name = m.group(1).strip().strip("*").strip()
        m = _DESC_RE.match(line)
        if m and description is None:
            description = m.group(1).strip()
    if name is None and lines:
        name = lines[0].strip().strip("*").strip()
        if description is None and len(lines) > 1:
            description = lines[1].strip()
    if not name:
        raise LLMParseError("no concept name in response")
    return name, (description or name)


def parse_attribute_response(text, count):
    """Extract exactly ``count`` attribute strings from a listing."""
    items = []
    for line in text.splitlines():
        m = _ITEM_RE.match(line)
        if m:
            item = m.group(1).strip().strip("*").strip()
            if item:
                items.append(item)
    if len(items) < count:
        # fall back to any nonempty lines that are not section markers
        items = [
            ln.strip()
            for ln in text.splitlines()
            if ln.strip() and not ln.strip().startswith("[")
        ]
    if len(items) < count:
        raise LLMParseError(
            f"expected {count} attributes, parsed {len(items)}"
        )
    return items[:count]
