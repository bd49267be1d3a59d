"""CodiEsp-style corpus ingestion.

A corpus is a directory of per-case UTF-8 note files (`<case_id>.txt`) plus a
tab-delimited annotation file with columns case_id, code_kind, icd_code,
text_reference (extra columns ignored, optional header detected by a literal
first cell "case_id"). Demographics live in a sidecar TSV: case_id, age,
gender.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

log = logging.getLogger(__name__)

# letter, two alphanumerics, optional dot plus 1-4 alphanumerics
ICD_CODE_RE = re.compile(r"^[A-Z][A-Z0-9]{2}(\.[A-Z0-9]{1,4})?$")

GENDERS = ("female", "male", "unspecified")


class CorpusError(Exception):
    """Fatal problem with corpus inputs."""


def normalize_icd_code(raw: str) -> str:
    """Uppercase, trim whitespace, keep the dot."""
    return raw.strip().upper()


def is_valid_icd_code(code: str) -> bool:
    return bool(ICD_CODE_RE.match(code))


@dataclass
class ClinicalCase:
    """One ground-truth case: note text plus its ICD annotations and demographics."""

    case_id: str
    note_text: str
    icd_codes: list[str] = field(default_factory=list)
    text_references: list[str] = field(default_factory=list)
    age: int | None = None
    gender: str = "unspecified"

    @property
    def word_count(self) -> int:
        """Whitespace-token count of note_text."""
        return len(self.note_text.split())

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "note_text": self.note_text,
            "icd_codes": list(self.icd_codes),
            "text_references": list(self.text_references),
            "age": self.age,
            "gender": self.gender,
            "word_count": self.word_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClinicalCase":
        return cls(
            case_id=d["case_id"],
            note_text=d["note_text"],
            icd_codes=list(d.get("icd_codes", [])),
            text_references=list(d.get("text_references", [])),
            age=d.get("age"),
            gender=d.get("gender", "unspecified"),
        )


@dataclass
class CorpusSplit:
    index_pool: list[str]
    test_pool: list[str]


def _iter_tsv(path: Path) -> Iterator[tuple[int, list[str]]]:
    """Yield (1-based line number, fields) for each nonempty TSV line.

    Skips an optional header line whose first cell is literally "case_id".
    """
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if lineno == 1 and fields and fields[0].strip() == "case_id":
                continue
            yield lineno, fields


def ingest_corpus(notes_dir: str | Path, annotations_file: str | Path) -> list[ClinicalCase]:
    """Parse note files and aggregate annotation rows per case.

    Codes and text references are de-duplicated preserving first-seen order.
    Rows referencing unknown case ids or with too few columns are skipped with
    a warning; cases without annotation rows keep empty code sets.
    """
    notes_dir = Path(notes_dir)
    annotations_file = Path(annotations_file)
    if not notes_dir.is_dir():
        raise CorpusError(f"notes directory not found: {notes_dir}")
    if not annotations_file.is_file():
        raise CorpusError(f"annotations file not found: {annotations_file}")

    cases: dict[str, ClinicalCase] = {}
    for note_path in sorted(notes_dir.glob("*.txt")):
        case_id = note_path.stem
        if not case_id:
            continue
        cases[case_id] = ClinicalCase(case_id=case_id, note_text=note_path.read_text(encoding="utf-8"))

    for lineno, fields in _iter_tsv(annotations_file):
        if len(fields) < 4:
            log.warning("%s:%d: expected 4 tab-separated columns, got %d; row skipped",
                        annotations_file, lineno, len(fields))
            continue
        case_id = fields[0].strip()
        code = normalize_icd_code(fields[2])
        reference = fields[3].strip()
        case = cases.get(case_id)
        if case is None:
            log.warning("%s:%d: unknown case id %r; row skipped", annotations_file, lineno, case_id)
            continue
        if code:
            if is_valid_icd_code(code):
                if code not in case.icd_codes:
                    case.icd_codes.append(code)
            else:
                log.warning("%s:%d: invalid ICD code %r dropped", annotations_file, lineno, code)
        if reference and reference not in case.text_references:
            case.text_references.append(reference)

    return list(cases.values())


def attach_demographics(cases: list[ClinicalCase], demographics_file: str | Path) -> list[ClinicalCase]:
    """Fill age/gender from a sidecar TSV (case_id, age, gender).

    Absent rows leave fields unspecified; a non-integer age is warned about and
    left unset.
    """
    demographics_file = Path(demographics_file)
    if not demographics_file.is_file():
        raise CorpusError(f"demographics file not found: {demographics_file}")
    by_id = {c.case_id: c for c in cases}

    for lineno, fields in _iter_tsv(demographics_file):
        if len(fields) < 3:
            log.warning("%s:%d: expected 3 columns, got %d; row skipped",
                        demographics_file, lineno, len(fields))
            continue
        case = by_id.get(fields[0].strip())
        if case is None:
            log.warning("%s:%d: unknown case id %r; row skipped",
                        demographics_file, lineno, fields[0].strip())
            continue
        age_text = fields[1].strip()
        if age_text:
            try:
                case.age = int(age_text)
            except ValueError:
                log.warning("%s:%d: non-integer age %r; age left unspecified",
                            demographics_file, lineno, age_text)
        gender = fields[2].strip().lower()
        if gender in ("female", "male"):
            case.gender = gender
        elif gender:
            log.warning("%s:%d: unrecognized gender %r; left unspecified",
                        demographics_file, lineno, fields[2].strip())
    return cases


def split_corpus(cases: list[ClinicalCase], test_ids: list[str]) -> CorpusSplit:
    """Partition case ids into index and test pools, both in corpus order."""
    known = {c.case_id for c in cases}
    wanted = set(test_ids)
    for tid in test_ids:
        if tid not in known:
            raise CorpusError(f"unknown test case id: {tid!r}")
    index_pool = [c.case_id for c in cases if c.case_id not in wanted]
    test_pool = [c.case_id for c in cases if c.case_id in wanted]
    return CorpusSplit(index_pool=index_pool, test_pool=test_pool)


def save_corpus(cases: list[ClinicalCase], split: CorpusSplit, path: str | Path) -> None:
    doc = {
        "cases": [c.to_dict() for c in cases],
        "index_pool": list(split.index_pool),
        "test_pool": list(split.test_pool),
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1), encoding="utf-8")


def load_corpus(path: str | Path) -> tuple[list[ClinicalCase], CorpusSplit]:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus cache not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    cases = [ClinicalCase.from_dict(d) for d in doc["cases"]]
    split = CorpusSplit(index_pool=list(doc["index_pool"]), test_pool=list(doc["test_pool"]))
    return cases, split
