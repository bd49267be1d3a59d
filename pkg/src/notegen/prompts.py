"""Prompt assembly for the four note-generation strategies.

A strategy controls which material accompanies the task: the baseline carries a
single worked example; the chain-of-thought variants add retrieved similar
cases (cot_ss), a knowledge-graph fragment (cot_kg), or both (cot_ss_kg). The
assembled text is deterministic: identical inputs yield byte-identical prompts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .corpus import ClinicalCase
from .embedding import SearchHit
from .util import stable_hash

STRATEGIES = ("baseline_one_shot", "cot_ss", "cot_kg", "cot_ss_kg")
MAX_EXAMPLES = 10

DEFAULT_SYSTEM_TEXT = (
    "You are an experienced physician writing clinical documentation."
)
DEFAULT_INSTRUCTION = (
    "Write the History of Present Illness section of a clinical note for the "
    "patient described below. Base the narrative on the listed ICD codes and "
    "patient details, use clinical prose, and do not quote the codes verbatim."
)
DEFAULT_EXAMPLE_HEADER = "Example {i}:"
DEFAULT_KG_HEADER = "Clinical knowledge:"
DEFAULT_FINAL_DIRECTIVE = (
    "Output only the History of Present Illness note for this patient."
)

# Fallback single shot for the baseline when no index exists.
GENERIC_EXAMPLE = (
    "A 63-year-old man presented with progressive shortness of breath over "
    "two weeks, accompanied by a productive cough and intermittent low-grade "
    "fever. He denied chest pain or hemoptysis. Symptoms worsened with "
    "exertion and improved partially with rest."
)

# Target note text shorter than this is too generic for substring leakage checks.
_LEAKAGE_MIN_CHARS = 20


class PromptError(Exception):
    pass


def uses_retrieval(strategy: str) -> bool:
    return strategy in ("cot_ss", "cot_ss_kg")


def uses_kg(strategy: str) -> bool:
    return strategy in ("cot_kg", "cot_ss_kg")


@dataclass(frozen=True)
class PromptTemplates:
    system_text: str = DEFAULT_SYSTEM_TEXT
    instruction: str = DEFAULT_INSTRUCTION
    example_header: str = DEFAULT_EXAMPLE_HEADER
    kg_header: str = DEFAULT_KG_HEADER
    final_directive: str = DEFAULT_FINAL_DIRECTIVE

    def with_overrides(self, **kwargs: str) -> "PromptTemplates":
        provided = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **provided) if provided else self


DEFAULT_TEMPLATES = PromptTemplates()


@dataclass(frozen=True)
class PromptBundle:
    strategy: str
    system_text: str
    user_text: str
    target_case_id: str
    example_case_ids: tuple[str, ...] = ()
    kg_codes: tuple[str, ...] = ()

    def content_hash(self) -> str:
        return stable_hash({
            "strategy": self.strategy,
            "system_text": self.system_text,
            "user_text": self.user_text,
            "target_case_id": self.target_case_id,
        })

    def messages(self) -> list[dict[str, str]]:
        return [
            {"role": "system", "content": self.system_text},
            {"role": "user", "content": self.user_text},
        ]


def default_instruction(override: str | None = None) -> str:
    if override is None:
        return DEFAULT_INSTRUCTION
    if not override.strip():
        raise PromptError("instruction override must be nonempty")
    return override


def _patient_line(case: ClinicalCase) -> str | None:
    gender = case.gender if case.gender != "unspecified" else None
    if case.age is not None and gender:
        return f"Patient: {case.age}-year-old {gender}"
    if case.age is not None:
        return f"Patient: {case.age}-year-old"
    if gender:
        return f"Patient: {gender}"
    return None


def _codes_line(case: ClinicalCase) -> str:
    return "ICD codes: " + (", ".join(case.icd_codes) if case.icd_codes else "none")


def _select_examples(strategy: str, case: ClinicalCase,
                     hits: Sequence[SearchHit] | None,
                     example_texts: Mapping[str, str] | None,
                     baseline_example_id: str | None) -> list[tuple[str, str]]:
    """Ordered (case_id, note_text) pairs for the prompt's example blocks."""
    if strategy == "cot_kg":
        return []
    texts = example_texts or {}

    if strategy == "baseline_one_shot":
        if baseline_example_id is not None:
            if baseline_example_id not in texts:
                raise PromptError(
                    f"strategy {strategy} requires example_texts entry for "
                    f"configured example {baseline_example_id!r}")
            return [(baseline_example_id, texts[baseline_example_id])]
        if hits:
            top = [h for h in hits if h.case_id != case.case_id]
            if top:
                best = top[0]
                if best.case_id not in texts:
                    raise PromptError(
                        f"strategy {strategy} requires example_texts entry for {best.case_id!r}")
                return [(best.case_id, texts[best.case_id])]
        return [("generic", GENERIC_EXAMPLE)]

    if hits is None:
        raise PromptError(f"strategy {strategy} requires input hits")
    picked: list[tuple[str, str]] = []
    for hit in hits:
        if hit.case_id == case.case_id:
            continue
        if hit.case_id not in texts:
            raise PromptError(
                f"strategy {strategy} requires example_texts entry for {hit.case_id!r}")
        picked.append((hit.case_id, texts[hit.case_id]))
        if len(picked) == MAX_EXAMPLES:
            break
    if not picked:
        raise PromptError(f"strategy {strategy} requires input hits (none usable)")
    return picked


def build_prompt(strategy: str, case: ClinicalCase,
                 hits: Sequence[SearchHit] | None = None,
                 example_texts: Mapping[str, str] | None = None,
                 kg_fragment: str | None = None,
                 instruction: str | None = None,
                 templates: PromptTemplates = DEFAULT_TEMPLATES,
                 baseline_example_id: str | None = None) -> PromptBundle:
    """Assemble one prompt. Sections appear in fixed order: instruction,
    patient line, ICD codes, numbered examples, knowledge fragment, final
    directive; absent material elides its section."""
    if strategy not in STRATEGIES:
        raise PromptError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    text_instruction = default_instruction(instruction if instruction is not None
                                           else templates.instruction)

    examples = _select_examples(strategy, case, hits, example_texts, baseline_example_id)

    if uses_kg(strategy):
        if kg_fragment is None or not kg_fragment.strip():
            raise PromptError(f"strategy {strategy} requires input kg_fragment")
    else:
        kg_fragment = None

    sections: list[str] = [text_instruction]
    patient = _patient_line(case)
    if patient:
        sections.append(patient)
    sections.append(_codes_line(case))
    for i, (_, note_text) in enumerate(examples, start=1):
        header = templates.example_header.format(i=i)
        sections.append(f"{header}\n{note_text}")
    if kg_fragment is not None:
        sections.append(f"{templates.kg_header}\n{kg_fragment}")
    sections.append(templates.final_directive)
    user_text = "\n\n".join(sections)

    target_note = case.note_text.strip()
    if len(target_note) >= _LEAKAGE_MIN_CHARS and target_note in user_text:
        raise PromptError(
            f"leakage: ground-truth note text of case {case.case_id} appears in its own prompt")

    return PromptBundle(
        strategy=strategy,
        system_text=templates.system_text,
        user_text=user_text,
        target_case_id=case.case_id,
        example_case_ids=tuple(cid for cid, _ in examples) if uses_retrieval(strategy)
        else (),
        kg_codes=tuple(case.icd_codes) if uses_kg(strategy) else (),
    )
