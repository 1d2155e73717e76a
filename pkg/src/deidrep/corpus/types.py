"""Annotated-text data types."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field


class CorpusError(ValueError):
    """Raised for malformed or inconsistent annotated documents."""


class PhiCategory(str, enum.Enum):
    PATIENT = "PATIENT"
    DOCTOR = "DOCTOR"
    HOSPITAL = "HOSPITAL"
    DATE = "DATE"
    AGE = "AGE"
    PHONE = "PHONE"
    ID = "ID"
    CITY = "CITY"
    STATE = "STATE"
    COUNTRY = "COUNTRY"
    PROFESSION = "PROFESSION"
    OTHER = "OTHER"


class CasingCategory(str, enum.Enum):
    NUMERIC = "numeric"
    MAINLY_NUMERIC = "mainly_numeric"
    ALL_LOWER = "all_lower"
    ALL_UPPER = "all_upper"
    INITIAL_UPPER = "initial_upper"
    CONTAINS_DIGIT = "contains_digit"
    OTHER = "other"


CASING_CATEGORIES = list(CasingCategory)

OUTSIDE = "O"
LABELS: list[str] = [OUTSIDE] + [f"{p}-{c.value}" for c in PhiCategory for p in ("B", "I")]
LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}


def label_category(label: str) -> PhiCategory | None:
    if label == OUTSIDE:
        return None
    return PhiCategory(label[2:])


def is_valid_bio(labels: list[str]) -> bool:
    prev = OUTSIDE
    for label in labels:
        if label.startswith("I-"):
            if prev == OUTSIDE or prev[2:] != label[2:]:
                return False
        prev = label
    return True


@dataclass(frozen=True)
class PhiSpan:
    start: int
    end: int
    category: PhiCategory
    text: str


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int
    casing: CasingCategory


@dataclass
class Sentence:
    doc_id: str
    tokens: list[Token]
    labels: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.labels:
            self.labels = [OUTSIDE] * len(self.tokens)
        if len(self.labels) != len(self.tokens):
            raise CorpusError(
                f"{self.doc_id}: {len(self.labels)} labels for {len(self.tokens)} tokens"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]

    @property
    def phi_positions(self) -> list[int]:
        return [i for i, label in enumerate(self.labels) if label != OUTSIDE]


@dataclass
class Document:
    id: str
    text: str
    spans: list[PhiSpan] = field(default_factory=list)
    # sentences are blank-line separated blocks (files written from sentence lists)
    presplit: bool = False
