"""Template-based synthetic clinical notes with exact PHI annotations.

Stands in for access-restricted de-identification corpora. Every slot filled
from a bundled surrogate list becomes a :class:`PhiSpan`. Slots marked ``?``
are ambiguous: they hold PHI half of the time and an ordinary background word
otherwise, so that context alone can not decide PHI status and the token
identity matters (as it does in real notes).

The toy embedding geometry built by :func:`toy_embeddings` mirrors the lists:
each surrogate list is a tight cluster, template and background words are
spread out. Top-N neighborhoods of PHI tokens therefore stay inside their
category for N below the cluster size.
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .text import tokenize
from .types import CorpusError, Document, PhiCategory, PhiSpan

_LIST_FOR = {
    PhiCategory.PATIENT: "NAME",
    PhiCategory.DOCTOR: "NAME",
    PhiCategory.HOSPITAL: "HOSPITAL",
    PhiCategory.DATE: "YEAR",
    PhiCategory.AGE: "AGE",
    PhiCategory.PHONE: "PHONE",
    PhiCategory.ID: "ID",
    PhiCategory.CITY: "CITY",
    PhiCategory.STATE: "STATE",
    PhiCategory.COUNTRY: "COUNTRY",
    PhiCategory.PROFESSION: "PROFESSION",
    PhiCategory.OTHER: "OTHER",
}
# max number of surrogate tokens per span
_SPAN_WIDTH = {PhiCategory.PATIENT: 2, PhiCategory.DOCTOR: 2, PhiCategory.HOSPITAL: 2}

TEMPLATES = [
    "Patient {PATIENT?} is a {AGE?} year old {PROFESSION?} from {CITY?}, {STATE?}.",
    "{PATIENT?} was admitted to {HOSPITAL?} on {DATE?}.",
    "Seen by Dr. {DOCTOR} at {HOSPITAL?} today.",
    "Follow up with {DOCTOR?} in {DATE?} for review.",
    "Contact {PATIENT?} at {PHONE?} regarding results.",
    "Medical record number {ID}.",
    "He moved here from {COUNTRY?} in {DATE?}.",
    "She previously worked as a {PROFESSION?} near {CITY?}.",
    "Plan discussed with {DOCTOR?} and family.",
    "Transferred to {HOSPITAL?} for further care.",
    "Records were sent to {OTHER?} on {DATE?}.",
    "Insurance is provided through {OTHER?}.",
    "Please call {PHONE?} with questions.",
    "Note reviewed and signed by {DOCTOR?}.",
    "Family lives in {CITY?} near {STATE?}.",
    "Blood pressure was stable overnight.",
    "No acute distress was noted on exam.",
    "Continue current medications and monitor closely.",
    "Lungs are clear to auscultation bilaterally.",
    "The patient tolerated the procedure well.",
]
# single-slot header lines, emitted as their own blank-line separated blocks
HEADERS = ["{PATIENT}", "{HOSPITAL}", "{DATE}", "{ID}", "{DOCTOR}"]

_SLOT_RE = re.compile(r"\{([A-Z]+)(\??)\}")


@lru_cache(maxsize=1)
def surrogate_lists() -> dict[str, list[str]]:
    with resources.files("deidrep.corpus.data").joinpath("surrogates.json").open() as fh:
        return json.load(fh)


@lru_cache(maxsize=1)
def template_words() -> tuple[str, ...]:
    words = set()
    for t in TEMPLATES + HEADERS:
        for tok in tokenize(_SLOT_RE.sub(" ", t)):
            words.add(tok.text.lower())
    return tuple(sorted(words))


_ONSETS = ["b", "br", "c", "ch", "cl", "d", "dr", "f", "fl", "g", "gr", "h", "j", "k", "l", "m",
           "n", "p", "pl", "pr", "qu", "r", "s", "sh", "st", "t", "tr", "v", "w", "z"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ea", "ie", "ou", "oa"]
_CODAS = ["", "", "n", "r", "l", "s", "m", "t", "nd", "st", "x", "ck"]


@lru_cache(maxsize=8)
def background_vocabulary(size: int = 8000) -> tuple[str, ...]:
    """Deterministic pseudo-words standing in for the bulk of an embedding vocabulary.

    About a quarter are capitalized so casing is not a PHI giveaway.
    """
    rng = random.Random(9173)
    taken = {w.lower() for lst in surrogate_lists().values() for w in lst}
    taken.update(template_words())
    words: list[str] = []
    while len(words) < size:
        n_syll = rng.choice((2, 2, 3, 3, 4))
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS) for _ in range(n_syll))
        if w in taken:
            continue
        taken.add(w)
        words.append(w.capitalize() if rng.random() < 0.25 else w)
    return tuple(words)


@dataclass
class _Template:
    pattern: str
    slots: list[tuple[PhiCategory, bool]]

    @property
    def nominal_ratio(self) -> float:
        n_words = len(tokenize(_SLOT_RE.sub(" ", self.pattern)))
        phi = sum(0.5 if amb else 1.0 for _, amb in self.slots)
        return phi / (n_words + len(self.slots)) if self.slots else 0.0


def _parse(pattern: str) -> _Template:
    return _Template(pattern, [(PhiCategory(m.group(1)), m.group(2) == "?")
                               for m in _SLOT_RE.finditer(pattern)])


def _fill(template: _Template, rng: random.Random, background: tuple[str, ...]):
    """Render one template; returns (text, [(start, end, category)])."""
    out, spans, pos, last = [], [], 0, 0
    for (cat, ambiguous), m in zip(template.slots, _SLOT_RE.finditer(template.pattern)):
        literal = template.pattern[last:m.start()]
        out.append(literal)
        pos += len(literal)
        width = rng.randint(1, _SPAN_WIDTH.get(cat, 1))
        if ambiguous and rng.random() < 0.5:
            value = " ".join(rng.choice(background) for _ in range(width))
            out.append(value)
            pos += len(value)
        else:
            pool = surrogate_lists()[_LIST_FOR[cat]]
            value = " ".join(rng.choice(pool) for _ in range(width))
            spans.append((pos, pos + len(value), cat))
            out.append(value)
            pos += len(value)
        last = m.end()
    out.append(template.pattern[last:])
    return "".join(out), spans


def generate_synthetic(
    seed: int,
    n_docs: int,
    phi_density: float = 0.2,
    background_size: int = 8000,
) -> list[Document]:
    """Generate ``n_docs`` annotated notes whose PHI token fraction tracks ``phi_density``.

    Sentence choice is steered corpus-wide: whenever the running PHI fraction
    is below target a template with nominal PHI ratio above target is drawn,
    otherwise one below it.
    """
    if n_docs < 1:
        raise CorpusError("n_docs must be >= 1")
    if not 0 < phi_density <= 1:
        raise CorpusError(f"phi_density must be in (0, 1], got {phi_density}")
    rng = random.Random(seed)
    background = background_vocabulary(background_size)
    body = [_parse(t) for t in TEMPLATES]
    headers = [_parse(t) for t in HEADERS]
    pool = body + headers
    rich = [t for t in pool if t.nominal_ratio >= phi_density] or headers
    poor = [t for t in pool if t.nominal_ratio < phi_density] or headers
    n_phi = n_tok = 0
    docs = []
    for d in range(n_docs):
        parts: list[str] = []
        spans: list[PhiSpan] = []
        pos = 0
        prev_header = False
        n_sent = rng.randint(8, 14)
        for s in range(n_sent):
            if s == 0:
                tpl = rng.choice(headers)
            else:
                below = n_tok == 0 or n_phi / n_tok < phi_density
                tpl = rng.choice(rich if below else poor)
            text, local = _fill(tpl, rng, background)
            if s:
                sep = "\n\n" if tpl in headers or prev_header else rng.choice((" ", " ", "\n"))
                parts.append(sep)
                pos += len(sep)
            prev_header = tpl in headers
            for a, b, cat in local:
                spans.append(PhiSpan(pos + a, pos + b, cat, text[a:b]))
            n_tok += len(tokenize(text))
            n_phi += sum(len(tokenize(text[a:b])) for a, b, _ in local)
            parts.append(text)
            pos += len(text)
        docs.append(Document(f"synth-{seed}-{d:04d}", "".join(parts), spans))
    return docs


def toy_embeddings(dim: int = 50, background_size: int = 8000, seed: int = 0,
                   cluster_spread: float = 0.5) -> tuple[list[str], np.ndarray]:
    """Vocabulary and vectors matching the synthetic corpus.

    Each surrogate list is a Gaussian cluster (unit-variance center, per-dim
    spread ``cluster_spread``); template and background words are independent
    standard normal vectors.
    """
    rng = np.random.default_rng(seed)
    tokens: list[str] = []
    blocks = []
    for name, members in surrogate_lists().items():
        center = rng.standard_normal(dim)
        blocks.append(center + cluster_spread * rng.standard_normal((len(members), dim)))
        tokens.extend(members)
    rest = list(template_words()) + list(background_vocabulary(background_size))
    blocks.append(rng.standard_normal((len(rest), dim)))
    tokens.extend(rest)
    return tokens, np.vstack(blocks)
