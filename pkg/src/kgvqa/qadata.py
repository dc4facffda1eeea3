"""QA instances, image-as-knowledge records and their TSV formats."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, MalformedLine
from .kg import KnowledgeGraph, Triple
from .text import tokenize

log = logging.getLogger(__name__)

MAX_CONCEPTS = 14


@dataclass(frozen=True)
class ImageAsKnowledge:
    """An image reduced to the KG entities detected in it (at most ``m``)."""

    image_id: str
    concepts: tuple[int, ...]

    def __post_init__(self):
        if not self.concepts:
            raise DataError(f"image {self.image_id!r} has no concepts")


@dataclass(frozen=True)
class QAInstance:
    question: tuple[str, ...]
    image: ImageAsKnowledge
    answer: int
    answer_source: str  # "image" | "kg"
    supporting_fact: Triple
    text: str = ""

    def __post_init__(self):
        if self.answer_source not in ("image", "kg"):
            raise DataError(f"answer_source must be 'image' or 'kg', got {self.answer_source!r}")
        if self.answer_source == "image" and self.answer not in self.image.concepts:
            raise DataError(f"image-source answer {self.answer} not among image concepts")

    @property
    def from_image(self) -> bool:
        return self.answer_source == "image"


def load_images(path, kg: KnowledgeGraph, m: int = MAX_CONCEPTS) -> dict[str, ImageAsKnowledge]:
    """``image_id<TAB>ent1|ent2|...``; unknown concepts are dropped with a
    warning and at most ``m`` are kept in file order."""
    images = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise MalformedLine(path, lineno, "expected image_id<TAB>concepts")
            ids = []
            for name in parts[1].split("|"):
                idx = kg.entity_index.get(name.strip().lower())
                if idx is None:
                    log.warning("%s:%d: dropping unknown concept %r", path, lineno, name)
                    continue
                ids.append(idx)
            if len(ids) > m:
                ids = ids[:m]
            images[parts[0]] = ImageAsKnowledge(parts[0], tuple(ids))
    return images


def save_images(images, kg: KnowledgeGraph, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for img in images.values():
            fh.write(img.image_id + "\t" + "|".join(kg.entities[c] for c in img.concepts) + "\n")


def load_qa(path, kg: KnowledgeGraph, images) -> list[QAInstance]:
    """``question, image_id, answer, source, head, relation, tail`` per line."""
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 7:
                raise MalformedLine(path, lineno, f"expected 7 fields, got {len(parts)}")
            question, image_id, answer, source, h, r, t = parts
            if image_id not in images:
                raise MalformedLine(path, lineno, f"unknown image {image_id!r}")
            ans = kg.entity_index.get(answer.lower())
            if ans is None:
                raise MalformedLine(path, lineno, f"unknown answer entity {answer!r}")
            try:
                fact = kg.lookup(h, r, t)
            except DataError as exc:
                raise MalformedLine(path, lineno, str(exc)) from None
            out.append(QAInstance(tuple(tokenize(question)), images[image_id], ans, source, fact, question))
    return out


def save_qa(instances, kg: KnowledgeGraph, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for q in instances:
            h, r, t = kg.surface(q.supporting_fact)
            text = q.text or " ".join(q.question)
            fh.write("\t".join([text, q.image.image_id, kg.entities[q.answer], q.answer_source, h, r, t]) + "\n")
