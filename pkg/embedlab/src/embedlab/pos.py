"""Rule-based part-of-speech tagging for noun extraction.

A small closed-class lexicon plus suffix morphology, tuned for clinical
English. Tags are a UPOS subset; unknown open-class words default to NOUN,
and mid-sentence capitalized words become PROPN. The tagger is deliberately
context-free so its outputs can be pinned as golden files.
"""

from __future__ import annotations

import re

_WORD_RE = re.compile(r"[A-Za-z][A-Za-z0-9'\-]*")

_DET = frozenset("a an the this that these those each every either neither "
                 "some any all both no such".split())
_PRON = frozenset("i you he she it we they me him her us them myself yourself "
                  "himself herself itself ourselves themselves who whom whose "
                  "which what mine yours hers ours theirs".split())
_ADP = frozenset("in on at by for with without from to of into onto over under "
                 "between among during after before about against through "
                 "within upon toward towards across around near since until "
                 "per via".split())
_CONJ = frozenset("and or but nor so yet because although though while "
                  "whereas if unless when whenever where".split())
_AUX = frozenset("am is are was were be been being do does did have has had "
                 "will would shall should can could may might must".split())
_ADV = frozenset("not very quite too also just only now then there here never "
                 "always often sometimes usually again still already well "
                 "much more most less least rather almost approximately "
                 "currently subsequently previously initially".split())
_ADJ = frozenset("mild moderate severe acute chronic intermittent persistent "
                 "progressive left right upper lower bilateral unilateral "
                 "complete partial normal abnormal stable unstable old new "
                 "young painful tender swollen same other several physical "
                 "medical surgical intravenous oral general local prior "
                 "present absent positive negative significant remarkable "
                 "unremarkable afebrile diffuse focal distal proximal "
                 "anterior posterior squamous sigmoid".split())
_VERB = frozenset("reported reports report denies denied deny presents "
                  "presented present describes described describe states "
                  "stated state notes noted complains complained complain "
                  "shows showed show reveals revealed reveal demonstrates "
                  "demonstrated underwent undergoes receives received admits "
                  "admitted started began begins worsened improved resolved "
                  "developed performed prescribed referred confirmed required "
                  "requiring followed treated evaluated identified found "
                  "seen gave given taken took says said".split())
# gerunds that read as nouns in clinical text
_NOUN_LEXICON = frozenset("swelling bleeding vomiting wheezing itching "
                          "cramping bruising".split())
_NOUN_SUFFIXES = ("tion", "sion", "ness", "ment", "ity", "ism", "itis", "oma",
                  "emia", "uria", "osis", "ysis", "algia", "pathy", "ectomy",
                  "scopy", "graphy", "gram", "ache", "logy")
# a period after these is an abbreviation, not a sentence boundary
_TITLES = frozenset("dr mr mrs ms prof st".split())

NOUN_TAGS = ("NOUN", "PROPN")


def tokenize(text: str) -> list[str]:
    """Word tokens in order; punctuation and whitespace are separators."""
    return _WORD_RE.findall(text)


def _sentence_initial_flags(text: str) -> list[bool]:
    flags = []
    boundary = True
    pos = 0
    prev = ""
    for match in _WORD_RE.finditer(text):
        between = text[pos:match.start()]
        if any(ch in ".!?" for ch in between) \
                and not (between.strip() == "." and prev.lower() in _TITLES):
            boundary = True
        flags.append(boundary)
        boundary = False
        prev = match.group()
        pos = match.end()
    return flags


def _tag_word(word: str) -> str:
    lower = word.lower()
    if lower in _DET:
        return "DET"
    if lower in _PRON:
        return "PRON"
    if lower in _ADP:
        return "ADP"
    if lower in _CONJ:
        return "CCONJ"
    if lower in _AUX:
        return "AUX"
    if lower in _ADV:
        return "ADV"
    if lower in _ADJ:
        return "ADJ"
    if lower in _VERB:
        return "VERB"
    if lower in _NOUN_LEXICON:
        return "NOUN"
    if lower.endswith("ly") and len(lower) > 3:
        return "ADV"
    if lower.endswith("ing") and len(lower) > 5:
        return "VERB"
    if lower.endswith("ed") and len(lower) > 4:
        return "VERB"
    return "NOUN"


def tag_tokens(text: str) -> list[tuple[str, str]]:
    """(token, tag) pairs in source order. Capitalized words keep NOUN-family
    tags as PROPN unless they open a sentence, where capitalization says
    nothing."""
    tokens = tokenize(text)
    flags = _sentence_initial_flags(text)
    out = []
    for token, initial in zip(tokens, flags):
        tag = _tag_word(token)
        if token[0].isupper() and not initial and tag == "NOUN":
            tag = "PROPN"
        out.append((token, tag))
    return out


def extract_nouns(text: str) -> list[str]:
    """Tokens tagged NOUN or PROPN, verbatim, in order, duplicates retained."""
    return [token for token, tag in tag_tokens(text) if tag in NOUN_TAGS]
