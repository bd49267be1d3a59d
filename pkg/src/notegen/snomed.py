"""SNOMED CT release-file parsing and knowledge-graph prompt fragments.

Three RF2 inputs feed the graph: the ICD-10-CM extended map refset, the OWL
expression refset, and the description file. The OWL parser covers the
functional-syntax subset SNOMED actually uses for concept definitions
(SubClassOf, EquivalentClasses, ObjectIntersectionOf, ObjectSomeValuesFrom,
named classes `:<digits>`); rows using anything else are skipped and counted.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Union

from .corpus import normalize_icd_code

log = logging.getLogger(__name__)

ROLE_GROUP_ID = 609096000
FSN_TYPE_ID = "900000000000003001"

GRAPH_FORMAT = "notegen-kg/1"


class SnomedError(Exception):
    pass


class OwlParseError(Exception):
    """Row-local parse failure; the row is skipped, not the file."""


# --- OWL class-expression tree ----------------------------------------------

@dataclass(frozen=True)
class NamedClass:
    concept_id: int


@dataclass(frozen=True)
class SomeValuesFrom:
    property_id: int
    filler: "ClassExpr"


@dataclass(frozen=True)
class RoleGroup:
    members: tuple["ClassExpr", ...]


@dataclass(frozen=True)
class Intersection:
    members: tuple["ClassExpr", ...]


ClassExpr = Union[NamedClass, SomeValuesFrom, RoleGroup, Intersection]

AXIOM_KINDS = ("sub_class_of", "equivalent_classes")
_KIND_BY_HEAD = {"SubClassOf": "sub_class_of", "EquivalentClasses": "equivalent_classes"}
_HEAD_BY_KIND = {v: k for k, v in _KIND_BY_HEAD.items()}


@dataclass(frozen=True)
class OwlAxiom:
    subject_id: int
    axiom_kind: str
    expression: ClassExpr


_TOKEN_RE = re.compile(r"\(|\)|:[0-9]+|[A-Za-z][A-Za-z0-9]*")


def _tokenize(text: str) -> list[str]:
    tokens: list[str] = []
    pos = 0
    for m in _TOKEN_RE.finditer(text):
        if text[pos:m.start()].strip():
            raise OwlParseError(f"unsupported characters: {text[pos:m.start()].strip()[:40]!r}")
        tokens.append(m.group())
        pos = m.end()
    if text[pos:].strip():
        raise OwlParseError(f"unsupported characters: {text[pos:].strip()[:40]!r}")
    return tokens


class _Parser:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise OwlParseError("unexpected end of expression")
        self.pos += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.take()
        if got != tok:
            raise OwlParseError(f"expected {tok!r}, got {got!r}")

    def named(self) -> NamedClass:
        tok = self.take()
        if not tok.startswith(":"):
            raise OwlParseError(f"expected named class, got {tok!r}")
        return NamedClass(int(tok[1:]))

    def expr(self) -> ClassExpr:
        tok = self.take()
        if tok.startswith(":"):
            return NamedClass(int(tok[1:]))
        if tok == "ObjectIntersectionOf":
            self.expect("(")
            members = []
            while self.peek() != ")":
                members.append(self.expr())
            self.expect(")")
            if not members:
                raise OwlParseError("empty ObjectIntersectionOf")
            return Intersection(tuple(members))
        if tok == "ObjectSomeValuesFrom":
            self.expect("(")
            prop = self.named()
            filler = self.expr()
            self.expect(")")
            if prop.concept_id == ROLE_GROUP_ID:
                members = filler.members if isinstance(filler, Intersection) else (filler,)
                return RoleGroup(members)
            return SomeValuesFrom(prop.concept_id, filler)
        raise OwlParseError(f"unsupported construct: {tok!r}")


def parse_expression(text: str) -> OwlAxiom:
    """Parse a functional-syntax axiom string into an OwlAxiom tree."""
    p = _Parser(_tokenize(text))
    head = p.take()
    kind = _KIND_BY_HEAD.get(head)
    if kind is None:
        raise OwlParseError(f"unsupported construct: {head!r}")
    p.expect("(")
    subject = p.named()
    expression = p.expr()
    p.expect(")")
    if p.peek() is not None:
        raise OwlParseError(f"trailing tokens after axiom: {p.peek()!r}")
    return OwlAxiom(subject_id=subject.concept_id, axiom_kind=kind, expression=expression)


def to_functional(axiom: OwlAxiom) -> str:
    """Serialize an axiom tree back to functional syntax (round-trips via parse_expression)."""
    return f"{_HEAD_BY_KIND[axiom.axiom_kind]}(:{axiom.subject_id} {_expr_to_text(axiom.expression)})"


def _expr_to_text(e: ClassExpr) -> str:
    if isinstance(e, NamedClass):
        return f":{e.concept_id}"
    if isinstance(e, Intersection):
        return "ObjectIntersectionOf(" + " ".join(_expr_to_text(m) for m in e.members) + ")"
    if isinstance(e, SomeValuesFrom):
        return f"ObjectSomeValuesFrom(:{e.property_id} {_expr_to_text(e.filler)})"
    if isinstance(e, RoleGroup):
        inner = (_expr_to_text(e.members[0]) if len(e.members) == 1
                 else "ObjectIntersectionOf(" + " ".join(_expr_to_text(m) for m in e.members) + ")")
        return f"ObjectSomeValuesFrom(:{ROLE_GROUP_ID} {inner})"
    raise TypeError(f"unknown node: {e!r}")


def iter_expression_ids(e: ClassExpr) -> Iterator[int]:
    """All concept and property ids referenced in an expression tree."""
    if isinstance(e, NamedClass):
        yield e.concept_id
    elif isinstance(e, Intersection):
        for m in e.members:
            yield from iter_expression_ids(m)
    elif isinstance(e, SomeValuesFrom):
        yield e.property_id
        yield from iter_expression_ids(e.filler)
    elif isinstance(e, RoleGroup):
        yield ROLE_GROUP_ID
        for m in e.members:
            yield from iter_expression_ids(m)


# --- RF2 file parsing --------------------------------------------------------

def _rf2_rows(path: Path, required: tuple[str, ...]) -> Iterator[tuple[int, dict[str, str]]]:
    """Stream an RF2 tab-delimited file as per-row dicts keyed by header name."""
    with open(path, encoding="utf-8", newline="") as fh:
        header_line = fh.readline().rstrip("\r\n")
        header = header_line.split("\t")
        for col in required:
            if col not in header:
                raise SnomedError(f"{path}: missing required column {col!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            yield lineno, dict(zip(header, fields))


def parse_rf2_map(path: str | Path) -> list[tuple[int, str]]:
    """Read the SNOMED-to-ICD-10-CM map refset: (concept_id, icd_code) pairs.

    Only active rows with a nonempty mapTarget are emitted; the target is
    normalized like any other ICD code string.
    """
    path = Path(path)
    out: list[tuple[int, str]] = []
    for lineno, row in _rf2_rows(path, required=("active", "referencedComponentId", "mapTarget")):
        if row.get("active") != "1":
            continue
        target = normalize_icd_code(row.get("mapTarget", ""))
        if not target:
            continue
        try:
            concept_id = int(row["referencedComponentId"])
        except ValueError:
            log.warning("%s:%d: unparseable concept id %r; row skipped",
                        path, lineno, row["referencedComponentId"])
            continue
        out.append((concept_id, target))
    return out


def parse_owl_refset(path: str | Path) -> list[OwlAxiom]:
    """Parse the OWL expression refset, skipping (and counting) rows whose
    expression falls outside the supported grammar subset or fails to parse."""
    path = Path(path)
    axioms: list[OwlAxiom] = []
    skipped = 0
    for lineno, row in _rf2_rows(path, required=("owlExpression",)):
        if "active" in row and row["active"] != "1":
            skipped += 1
            continue
        try:
            axioms.append(parse_expression(row["owlExpression"]))
        except OwlParseError as exc:
            skipped += 1
            log.warning("%s:%d: axiom skipped: %s", path, lineno, exc)
    if skipped:
        log.warning("%s: parsed %d axioms, skipped %d rows", path, len(axioms), skipped)
    return axioms


def parse_descriptions(path: str | Path) -> dict[int, str]:
    """Pick one label per concept from the description file.

    Active rows only; rows typed 900000000000003001 (fully specified name) are
    preferred, first qualifying row wins.
    """
    path = Path(path)
    labels: dict[int, tuple[str, bool]] = {}
    for lineno, row in _rf2_rows(path, required=("active", "conceptId", "typeId", "term")):
        if row.get("active") != "1":
            continue
        try:
            concept_id = int(row["conceptId"])
        except ValueError:
            log.warning("%s:%d: unparseable concept id %r; row skipped", path, lineno, row["conceptId"])
            continue
        term = row.get("term", "").strip()
        if not term:
            continue
        is_fsn = row.get("typeId") == FSN_TYPE_ID
        current = labels.get(concept_id)
        if current is None or (is_fsn and not current[1]):
            labels[concept_id] = (term, is_fsn)
    return {cid: term for cid, (term, _) in labels.items()}


# --- Graph -------------------------------------------------------------------

@dataclass(frozen=True)
class KgConcept:
    concept_id: int
    label: str


@dataclass(frozen=True)
class IcdMapping:
    icd_code: str
    concept_ids: list[int]


@dataclass
class KgGraph:
    concepts: dict[int, KgConcept] = field(default_factory=dict)
    axioms: list[OwlAxiom] = field(default_factory=list)
    icd_index: dict[str, IcdMapping] = field(default_factory=dict)

    def label(self, concept_id: int) -> str:
        concept = self.concepts.get(concept_id)
        return concept.label if concept else str(concept_id)

    def axioms_for(self, concept_id: int) -> list[OwlAxiom]:
        return [a for a in self.axioms if a.subject_id == concept_id]


def build_graph(map_rows: list[tuple[int, str]], axioms: list[OwlAxiom],
                labels: dict[int, str]) -> KgGraph:
    """Assemble the graph; every referenced id resolves to a concept, with the
    stringified id as fallback label."""
    icd_index: dict[str, IcdMapping] = {}
    for concept_id, code in map_rows:
        mapping = icd_index.get(code)
        if mapping is None:
            icd_index[code] = IcdMapping(icd_code=code, concept_ids=[concept_id])
        elif concept_id not in mapping.concept_ids:
            mapping.concept_ids.append(concept_id)

    referenced: set[int] = set()
    for concept_id, _ in map_rows:
        referenced.add(concept_id)
    for axiom in axioms:
        referenced.add(axiom.subject_id)
        referenced.update(iter_expression_ids(axiom.expression))
    referenced.update(labels)

    concepts = {cid: KgConcept(cid, labels.get(cid, str(cid))) for cid in referenced}
    return KgGraph(concepts=concepts, axioms=list(axioms), icd_index=icd_index)


def load_release(map_file: str | Path, owl_file: str | Path,
                 descriptions_file: str | Path) -> KgGraph:
    return build_graph(parse_rf2_map(map_file), parse_owl_refset(owl_file),
                       parse_descriptions(descriptions_file))


# --- Prompt fragment rendering ------------------------------------------------

_INDENT = "  "


def render_kg_fragment(graph: KgGraph, icd_codes: list[str]) -> str:
    """Deterministic plain-text fragment for a list of ICD codes.

    One block per mapped concept (concept ids ascending within a code): the
    concept header, then each of its axioms flattened to indented
    `<attribute> [id] -> <filler> [id]` lines, with role groups grouped under
    a `Role group [609096000]` sub-block. Unknown codes get a single
    "no mapped SNOMED concept" line.
    """
    lines: list[str] = []
    for code in icd_codes:
        mapping = graph.icd_index.get(code)
        if mapping is None or not mapping.concept_ids:
            lines.append(f"ICD {code}: no mapped SNOMED concept")
            continue
        for concept_id in sorted(mapping.concept_ids):
            lines.append(f"ICD {code} -> {graph.label(concept_id)} [{concept_id}]")
            for axiom in graph.axioms_for(concept_id):
                _render_expr(graph, axiom.expression, depth=1, out=lines)
    return "\n".join(lines)


def _render_expr(graph: KgGraph, e: ClassExpr, depth: int, out: list[str]) -> None:
    pad = _INDENT * depth
    if isinstance(e, NamedClass):
        out.append(f"{pad}Is a: {graph.label(e.concept_id)} [{e.concept_id}]")
    elif isinstance(e, Intersection):
        for m in e.members:
            _render_expr(graph, m, depth, out)
    elif isinstance(e, RoleGroup):
        label = graph.label(ROLE_GROUP_ID)
        if label == str(ROLE_GROUP_ID):
            label = "Role group"
        out.append(f"{pad}{label} [{ROLE_GROUP_ID}]")
        for m in e.members:
            _render_expr(graph, m, depth + 1, out)
    elif isinstance(e, SomeValuesFrom):
        prop = f"{graph.label(e.property_id)} [{e.property_id}]"
        if isinstance(e.filler, NamedClass):
            out.append(f"{pad}{prop} -> {graph.label(e.filler.concept_id)} [{e.filler.concept_id}]")
        else:
            out.append(f"{pad}{prop} ->")
            _render_expr(graph, e.filler, depth + 1, out)


# --- Persistence ---------------------------------------------------------------

def save_graph(graph: KgGraph, path: str | Path) -> None:
    doc = {
        "format": GRAPH_FORMAT,
        "concepts": {str(cid): c.label for cid, c in sorted(graph.concepts.items())},
        "axioms": [to_functional(a) for a in graph.axioms],
        "icd_index": {code: m.concept_ids for code, m in sorted(graph.icd_index.items())},
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1), encoding="utf-8")


def load_graph(path: str | Path) -> KgGraph:
    path = Path(path)
    if not path.is_file():
        raise SnomedError(f"graph file not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != GRAPH_FORMAT:
        raise SnomedError(f"unsupported graph format: {doc.get('format')!r}")
    labels = {int(cid): label for cid, label in doc["concepts"].items()}
    axioms = [parse_expression(text) for text in doc["axioms"]]
    map_rows = [(cid, code) for code, ids in doc["icd_index"].items() for cid in ids]
    return build_graph(map_rows, axioms, labels)
