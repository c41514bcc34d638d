"""48-word reading corpus: loading, validation, and phoneme-level task labels.

Each word carries a tone (T1-T4), an initial (onset consonant, "-" for the
null initial), a place-of-articulation grouping of the initial (I1-I8), a
final (rime), and a final class grouped by onset vowel (F1-F4). Class
indices for every task are assigned by lexicographic sort of the class
tokens, so labels are stable across runs and platforms.
"""

from __future__ import annotations

import csv
import enum
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

N_WORDS = 48
TONES = ("T1", "T2", "T3", "T4")
INITIAL8 = ("I1", "I2", "I3", "I4", "I5", "I6", "I7", "I8")
FINAL_CLASSES = ("F1", "F2", "F3", "F4")
NULL_INITIAL = "-"

_HEADER = ["word", "tone", "initial", "initial8", "final", "final_class"]


class CorpusError(ValueError):
    """Raised when a corpus file violates the 48-word schema."""


class TaskKind(enum.Enum):
    """Classification tasks derivable from the corpus annotations.

    FINAL_FULL exposes the full final inventory (one class per distinct
    rime); FINAL_CLASS is the 4-way onset-vowel grouping.
    """

    WORD = "word"
    TONE = "tone"
    INITIAL = "initial"
    INITIAL8 = "initial8"
    FINAL_CLASS = "finalclass"
    FINAL_FULL = "finalfull"


@dataclass(frozen=True)
class CorpusEntry:
    word_id: int
    word: str
    tone: str
    initial: str
    initial8: str
    final: str
    final_class: str


def default_corpus_path() -> Path:
    """Path of the bundled 48-word corpus CSV."""
    return Path(str(resources.files("masd").joinpath("data/corpus48.csv")))


def load_corpus(path: str | Path | None = None) -> list[CorpusEntry]:
    """Load and validate a corpus CSV.

    The file must be UTF-8 with header ``word,tone,initial,initial8,final,
    final_class`` and exactly 48 rows. Word ids are assigned by row order
    (0-based). Raises :class:`CorpusError` on duplicate words, wrong entry
    count, unknown enum tokens, malformed rows, or tone imbalance.
    """
    if path is None:
        path = default_corpus_path()
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError(f"{path}: empty file, expected header {_HEADER}")
        if [h.strip() for h in header] != _HEADER:
            raise CorpusError(f"{path}: bad header {header!r}, expected {_HEADER}")
        entries: list[CorpusEntry] = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(_HEADER):
                raise CorpusError(f"{path}:{lineno}: expected {len(_HEADER)} fields, got {len(row)}")
            word, tone, initial, initial8, final, final_class = (f.strip() for f in row)
            if not word:
                raise CorpusError(f"{path}:{lineno}: empty word")
            if word in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate word {word!r}")
            seen.add(word)
            if tone not in TONES:
                raise CorpusError(f"{path}:{lineno}: unknown tone token {tone!r}")
            if initial8 not in INITIAL8:
                raise CorpusError(f"{path}:{lineno}: unknown initial8 token {initial8!r}")
            if final_class not in FINAL_CLASSES:
                raise CorpusError(f"{path}:{lineno}: unknown final_class token {final_class!r}")
            if not initial or not final:
                raise CorpusError(f"{path}:{lineno}: empty initial/final")
            entries.append(
                CorpusEntry(
                    word_id=len(entries),
                    word=word,
                    tone=tone,
                    initial=initial,
                    initial8=initial8,
                    final=final,
                    final_class=final_class,
                )
            )
    if len(entries) != N_WORDS:
        raise CorpusError(f"{path}: entry count != {N_WORDS} (got {len(entries)})")
    tone_counts = Counter(e.tone for e in entries)
    if any(tone_counts[t] != N_WORDS // len(TONES) for t in TONES):
        raise CorpusError(f"{path}: tones not balanced: {dict(tone_counts)}")
    return entries


def _class_tokens(corpus: list[CorpusEntry], task: TaskKind) -> list[str]:
    if task is TaskKind.TONE:
        return list(TONES)
    if task is TaskKind.INITIAL8:
        return list(INITIAL8)
    if task is TaskKind.FINAL_CLASS:
        return list(FINAL_CLASSES)
    if task is TaskKind.INITIAL:
        return sorted({e.initial for e in corpus})
    if task is TaskKind.FINAL_FULL:
        return sorted({e.final for e in corpus})
    raise ValueError(f"no class tokens for task {task}")


def n_classes(corpus: list[CorpusEntry], task: TaskKind) -> int:
    """Number of classes for a task on this corpus."""
    if task is TaskKind.WORD:
        return len(corpus)
    return len(_class_tokens(corpus, task))


def task_label(entry: CorpusEntry, task: TaskKind, corpus: list[CorpusEntry] | None = None) -> int:
    """Class index of ``entry`` under ``task``.

    Indices follow the lexicographic order of class tokens. The INITIAL and
    FINAL_FULL tasks derive their token inventory from ``corpus`` (defaults
    to the bundled corpus).
    """
    if task is TaskKind.WORD:
        return entry.word_id
    if task is TaskKind.TONE:
        return TONES.index(entry.tone)
    if task is TaskKind.INITIAL8:
        return INITIAL8.index(entry.initial8)
    if task is TaskKind.FINAL_CLASS:
        return FINAL_CLASSES.index(entry.final_class)
    if corpus is None:
        corpus = load_corpus()
    tokens = _class_tokens(corpus, task)
    value = entry.initial if task is TaskKind.INITIAL else entry.final
    return tokens.index(value)


def label_map(corpus: list[CorpusEntry], task: TaskKind) -> dict[int, int]:
    """word_id -> task class index, for the whole corpus at once."""
    return {e.word_id: task_label(e, task, corpus) for e in corpus}


def class_counts(corpus: list[CorpusEntry], task: TaskKind) -> list[int]:
    """Histogram over task classes; entries sum to the corpus size."""
    counts = [0] * n_classes(corpus, task)
    for e in corpus:
        counts[task_label(e, task, corpus)] += 1
    return counts
