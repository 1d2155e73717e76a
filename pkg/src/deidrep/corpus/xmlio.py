"""Standoff XML reader/writer (i2b2-style container).

Layout::

    <?xml version="1.0" encoding="UTF-8" ?>
    <deIdi2b2>
    <TEXT><![CDATA[...record text...]]></TEXT>
    <TAGS>
    <NAME id="P0" start="0" end="5" text="James" TYPE="PATIENT" comment="" />
    </TAGS>
    </deIdi2b2>

Offsets count Unicode code points. The tag element name is informational; the
category is read from the ``TYPE`` attribute.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path
from xml.sax.saxutils import quoteattr

from .types import CorpusError, Document, PhiCategory, PhiSpan

# i2b2 2014 subtypes folded onto the categories used here
_TYPE_ALIASES = {
    "USERNAME": PhiCategory.OTHER,
    "MEDICALRECORD": PhiCategory.ID,
    "IDNUM": PhiCategory.ID,
    "DEVICE": PhiCategory.ID,
    "HEALTHPLAN": PhiCategory.ID,
    "BIOID": PhiCategory.ID,
    "ACCOUNT": PhiCategory.ID,
    "LICENSE": PhiCategory.ID,
    "FAX": PhiCategory.PHONE,
    "EMAIL": PhiCategory.OTHER,
    "URL": PhiCategory.OTHER,
    "STREET": PhiCategory.OTHER,
    "ZIP": PhiCategory.OTHER,
    "ORGANIZATION": PhiCategory.OTHER,
    "LOCATION-OTHER": PhiCategory.OTHER,
}

_ELEMENT_FOR = {
    PhiCategory.PATIENT: "NAME",
    PhiCategory.DOCTOR: "NAME",
    PhiCategory.HOSPITAL: "LOCATION",
    PhiCategory.CITY: "LOCATION",
    PhiCategory.STATE: "LOCATION",
    PhiCategory.COUNTRY: "LOCATION",
    PhiCategory.PHONE: "CONTACT",
}


def _category(type_name: str) -> PhiCategory:
    key = type_name.strip().upper()
    try:
        return PhiCategory(key)
    except ValueError:
        return _TYPE_ALIASES.get(key, PhiCategory.OTHER)


def parse_document(xml_bytes: bytes, doc_id: str = "") -> Document:
    try:
        root = ET.fromstring(xml_bytes)
    except ET.ParseError as exc:
        raise CorpusError(f"{doc_id}: malformed XML: {exc}") from exc
    doc_id = doc_id or root.get("id", "")
    text_el = root.find("TEXT")
    if text_el is None:
        raise CorpusError(f"{doc_id}: missing TEXT element")
    text = text_el.text or ""
    tags_el = root.find("TAGS")
    spans = []
    for tag in [] if tags_el is None else list(tags_el):
        try:
            start, end = int(tag.get("start", "")), int(tag.get("end", ""))
        except ValueError as exc:
            raise CorpusError(f"{doc_id}: tag {tag.get('id')!r} has a non-integer offset") from exc
        if not 0 <= start < end <= len(text):
            raise CorpusError(
                f"{doc_id}: offset out of bounds at {start}-{end} (text length {len(text)})"
            )
        covered = text[start:end]
        expected = tag.get("text")
        if expected is not None and expected != covered:
            raise CorpusError(
                f"{doc_id}: span text mismatch at offset {start}: {expected!r} != {covered!r}"
            )
        spans.append(PhiSpan(start, end, _category(tag.get("TYPE", tag.tag)), covered))
    spans.sort(key=lambda s: (s.start, s.end))
    for a, b in zip(spans, spans[1:]):
        if b.start < a.end:
            raise CorpusError(f"{doc_id}: overlapping spans at offset {b.start}")
    return Document(doc_id, text, spans, presplit=root.get("segmentation") == "blank-line")


def _cdata(text: str) -> str:
    return "<![CDATA[" + text.replace("]]>", "]]]]><![CDATA[>") + "]]>"


def write_document(document: Document) -> bytes:
    seg = ' segmentation="blank-line"' if document.presplit else ""
    lines = ['<?xml version="1.0" encoding="UTF-8" ?>', f"<deIdi2b2 id={quoteattr(document.id)}{seg}>"]
    lines.append(f"<TEXT>{_cdata(document.text)}</TEXT>")
    lines.append("<TAGS>")
    for i, span in enumerate(sorted(document.spans, key=lambda s: s.start)):
        element = _ELEMENT_FOR.get(span.category, span.category.value)
        lines.append(
            f'<{element} id="P{i}" start="{span.start}" end="{span.end}" '
            f'text={quoteattr(span.text)} TYPE="{span.category.value}" comment="" />'
        )
    lines.append("</TAGS>")
    lines.append("</deIdi2b2>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_document(path: str | Path) -> Document:
    path = Path(path)
    return parse_document(path.read_bytes(), doc_id=path.stem)


def read_corpus(path: str | Path) -> list[Document]:
    """Read one XML file or every ``*.xml`` file of a directory (sorted by name)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.xml"))
        if not files:
            raise CorpusError(f"{path}: no XML documents")
        return [read_document(f) for f in files]
    return [read_document(path)]


def write_corpus(documents: list[Document], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for doc in documents:
        p = out_dir / f"{doc.id}.xml"
        p.write_bytes(write_document(doc))
        paths.append(p)
    return paths
