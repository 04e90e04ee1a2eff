"""Stage prompt templates with ``<placeholder>`` substitution.

A template file holds one or more templates::

    @@ stage: interpret
    @@ placeholders: caption, table, claim
    @@ slots: interpretation
    SYSTEM:
    ...system body, may reference {EXAMPLE['interpret']}...
    USER:
    ...user body...

Placeholders are filled from the render context. Slots mark where the model's
answer goes in the user body and render as empty text. Substitution is a
single pass, so substituted values are never expanded again.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

PLACEHOLDERS = frozenset(
    {
        "caption",
        "table",
        "claim",
        "interpretation",
        "plan",
        "subplan",
        "plan_idx",
        "grounding&extraction",
        "reasoning",
        "allReasonTransition",
    }
)

CHAIN_TEMPLATES = ("interpret", "plan", "cell", "reason", "recap", "conclusion")
FACTORY_TEMPLATES = ("positive", "flip", "manipulate", "oos")

# Exemplar fields spliced into each chain stage's system prompt.
STAGE_EXEMPLARS = {
    "interpret": ("interpret",),
    "plan": ("plan",),
    "cell": ("cell", "extract"),
    "reason": ("reason",),
    "recap": ("recap",),
    "conclusion": ("conclusion",),
}

_TOKEN = re.compile(r"\{EXAMPLE\['(\w+)'\]\}|<([A-Za-z_][A-Za-z_&]*)>")


class PromptError(Exception):
    pass


class MissingPlaceholder(PromptError, KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"missing placeholder <{self.name}>"


class UndeclaredPlaceholder(PromptError):
    def __init__(self, name: str):
        super().__init__(f"template uses undeclared placeholder <{name}>")
        self.name = name


class ParseError(PromptError):
    def __init__(self, msg: str, path: str = "<string>", line: int = 0):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


def _tokens(body: str):
    for m in _TOKEN.finditer(body):
        if m.group(1):
            yield "example", m.group(1), m.start()
        else:
            yield "angle", m.group(2), m.start()


@dataclass(frozen=True)
class PromptTemplate:
    stage: str
    system_body: str
    user_body: str
    placeholders: frozenset[str]
    slots: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        bad = set(self.placeholders) - PLACEHOLDERS
        if bad:
            raise UndeclaredPlaceholder(sorted(bad)[0])
        for which, offset in self.undeclared():
            raise UndeclaredPlaceholder(which)

    def undeclared(self) -> list[tuple[str, int]]:
        """(name, offset) of placeholder-like tokens the template does not declare.

        Offsets into the user body are shifted past the system body.
        """
        out = []
        for kind, name, pos in _tokens(self.system_body):
            if kind == "angle" and name in PLACEHOLDERS and name not in self.placeholders:
                out.append((name, pos))
        known = PLACEHOLDERS | self.slots
        for kind, name, pos in _tokens(self.user_body):
            if kind != "angle" or name not in known:
                continue
            if name not in self.placeholders and name not in self.slots:
                out.append((name, len(self.system_body) + 1 + pos))
        return out

    def exemplar_refs(self) -> list[str]:
        return [name for kind, name, _ in _tokens(self.system_body) if kind == "example"]


def _substitute(
    body: str,
    values: Mapping[str, str],
    declared: frozenset[str],
    slots: frozenset[str],
    exemplars: Mapping[str, str],
) -> str:
    def repl(m: re.Match) -> str:
        if m.group(1):
            key = m.group(1)
            if key not in exemplars:
                raise PromptError(f"no exemplar named {key!r}")
            return exemplars[key]
        name = m.group(2)
        if name in declared:
            return values[name]
        if name in slots:
            return ""
        return m.group(0)

    return _TOKEN.sub(repl, body)


@dataclass(frozen=True)
class TemplateSet:
    templates: Mapping[str, PromptTemplate]
    exemplars: Mapping[str, str] = field(default_factory=dict)

    def __getitem__(self, stage: str) -> PromptTemplate:
        return self.templates[stage]

    def __contains__(self, stage: str) -> bool:
        return stage in self.templates

    def render(self, stage: str, context: Mapping[str, object]) -> tuple[str, str]:
        """Render ``stage`` into (system text, user text)."""
        tmpl = self.templates[stage]
        for name in sorted(tmpl.placeholders):
            if name not in context:
                raise MissingPlaceholder(name)
        undeclared = tmpl.undeclared()
        if undeclared:
            raise UndeclaredPlaceholder(undeclared[0][0])
        values = {k: str(v) for k, v in context.items() if k in tmpl.placeholders}
        system = _substitute(tmpl.system_body, values, tmpl.placeholders, frozenset(), self.exemplars)
        user = _substitute(tmpl.user_body, values, tmpl.placeholders, tmpl.slots, self.exemplars)
        return system, user


def render(templates: TemplateSet, stage: str, context: Mapping[str, object]) -> tuple[str, str]:
    return templates.render(stage, context)


def _split_names(value: str) -> frozenset[str]:
    return frozenset(n.strip().strip("<>") for n in value.split(",") if n.strip())


def parse_template_text(text: str, path: str = "<string>") -> dict[str, PromptTemplate]:
    lines = text.replace("\r\n", "\n").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    out: dict[str, PromptTemplate] = {}
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        header_line = i + 1
        m = re.match(r"^@@ stage:\s*(\S+)\s*$", lines[i])
        if not m:
            raise ParseError("expected '@@ stage: <name>' header", path, i + 1)
        stage = m.group(1)
        i += 1
        meta: dict[str, str] = {}
        while i < len(lines) and lines[i].startswith("@@ "):
            key, sep, val = lines[i][3:].partition(":")
            if not sep or key.strip() not in ("placeholders", "slots"):
                raise ParseError(f"unknown header line {lines[i]!r}", path, i + 1)
            meta[key.strip()] = val
            i += 1
        if i >= len(lines) or lines[i] != "SYSTEM:":
            raise ParseError("expected 'SYSTEM:' line", path, i + 1)
        sys_start = i + 1
        i += 1
        while i < len(lines) and lines[i] != "USER:":
            if lines[i].startswith("@@ stage:"):
                raise ParseError("template ended before 'USER:' line", path, i + 1)
            i += 1
        if i >= len(lines):
            raise ParseError("expected 'USER:' line", path, i)
        system_lines = lines[sys_start:i]
        user_start = i + 1
        i += 1
        while i < len(lines) and not lines[i].startswith("@@ stage:"):
            i += 1
        user_lines = lines[user_start:i]
        while user_lines and user_lines[-1] == "" and i < len(lines):
            user_lines.pop()
        if stage in out:
            raise ParseError(f"duplicate stage {stage!r}", path, header_line)
        placeholders = _split_names(meta.get("placeholders", ""))
        slots = _split_names(meta.get("slots", ""))
        system_body = "\n".join(system_lines)
        user_body = "\n".join(user_lines)
        try:
            tmpl = PromptTemplate(stage, system_body, user_body, placeholders, slots)
        except UndeclaredPlaceholder as err:
            line = header_line
            needle = f"<{err.name}>"
            for n in range(sys_start, i):
                if needle in lines[n]:
                    line = n + 1
                    break
            raise ParseError(str(err), path, line) from None
        out[stage] = tmpl
    return out


def format_template(tmpl: PromptTemplate) -> str:
    for body in (tmpl.system_body, tmpl.user_body):
        for line in body.split("\n"):
            if line in ("SYSTEM:", "USER:") or line.startswith("@@ "):
                raise PromptError(f"body line {line!r} collides with the file syntax")
    return (
        f"@@ stage: {tmpl.stage}\n"
        f"@@ placeholders: {', '.join(sorted(tmpl.placeholders))}\n"
        f"@@ slots: {', '.join(sorted(tmpl.slots))}\n"
        f"SYSTEM:\n{tmpl.system_body}\nUSER:\n{tmpl.user_body}\n"
    )


def _check_exemplars(ts: TemplateSet, path: str) -> None:
    for stage, tmpl in ts.templates.items():
        for key in tmpl.exemplar_refs():
            if key not in ts.exemplars:
                raise ParseError(f"stage {stage!r} references missing exemplar {key!r}", path)
    for stage, keys in STAGE_EXEMPLARS.items():
        if stage in ts.templates and not all(k in ts.exemplars for k in keys):
            raise ParseError(f"stage {stage!r} has no exemplar", path)


def load_templates(path: str | Path | None = None) -> TemplateSet:
    """Load a template directory (``*.tmpl`` plus ``exemplars.json``) or one file.

    With no path the bundled default set is returned.
    """
    if path is None:
        root = resources.files("atomchain") / "templates"
        sources = sorted(
            (p.name, p.read_text(encoding="utf-8")) for p in root.iterdir() if p.name.endswith(".tmpl")
        )
        exemplars = json.loads((root / "exemplars.json").read_text(encoding="utf-8"))
        label = "<default>"
    else:
        p = Path(path)
        label = str(p)
        if p.is_dir():
            sources = [(f.name, f.read_text(encoding="utf-8")) for f in sorted(p.glob("*.tmpl"))]
            ex = p / "exemplars.json"
            exemplars = json.loads(ex.read_text(encoding="utf-8")) if ex.exists() else {}
        else:
            sources = [(p.name, p.read_text(encoding="utf-8"))]
            ex = p.with_name("exemplars.json")
            exemplars = json.loads(ex.read_text(encoding="utf-8")) if ex.exists() else {}
    templates: dict[str, PromptTemplate] = {}
    for name, text in sources:
        where = label if path is not None and not Path(label).is_dir() else f"{label}/{name}"
        for stage, tmpl in parse_template_text(text, where).items():
            if stage in templates:
                raise ParseError(f"duplicate stage {stage!r}", where)
            templates[stage] = tmpl
    ts = TemplateSet(templates, exemplars)
    _check_exemplars(ts, label)
    return ts


def save_templates(ts: TemplateSet, path: str | Path) -> None:
    """Write one ``<stage>.tmpl`` per template plus ``exemplars.json`` into ``path``."""
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    for stage, tmpl in ts.templates.items():
        (p / f"{stage}.tmpl").write_text(format_template(tmpl), encoding="utf-8")
    (p / "exemplars.json").write_text(
        json.dumps(dict(ts.exemplars), indent=2, ensure_ascii=False), encoding="utf-8"
    )
