"""Knowledge-graph storage: loading, indexing, perturbation and persistence.

Datasets are directories of tab-separated triple files (train.txt, valid.txt,
test.txt), one `subject\trelation\tobject` per line. Entities and relations
are mapped to dense 0-based ids in first-appearance order over the train file
(subject before object within a line), which makes id assignment a pure
function of the file bytes.
"""

from __future__ import annotations

import csv
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .errors import DataError

logger = logging.getLogger(__name__)

SPLIT_FILES = ("train.txt", "valid.txt", "test.txt")


class Triple(NamedTuple):
    """One (subject, relation, object) fact, integer-encoded."""

    s: int
    r: int
    o: int


@dataclass
class Vocabulary:
    """Dense, ordered entity/relation name tables with exact reverse maps."""

    entities: list[str]
    relations: list[str]
    entity_id: dict[str, int] = field(init=False)
    relation_id: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        self.entity_id = {name: i for i, name in enumerate(self.entities)}
        self.relation_id = {name: i for i, name in enumerate(self.relations)}
        if len(self.entity_id) != len(self.entities):
            raise DataError("duplicate entity names in vocabulary")
        if len(self.relation_id) != len(self.relations):
            raise DataError("duplicate relation names in vocabulary")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def triple_names(self, t: Triple) -> tuple[str, str, str]:
        return self.entities[t.s], self.relations[t.r], self.entities[t.o]


@dataclass(frozen=True)
class Perturbation:
    """A single training-set edit crafted for one target triple.

    Neighbourhood-constrained attacks must emit edits sharing an entity with
    the target (shares_entity_with_target); the global random baseline is the
    one sanctioned exception.
    """

    kind: str  # "delete" | "add"
    triple: Triple
    target: Triple

    def __post_init__(self) -> None:
        if self.kind not in ("delete", "add"):
            raise DataError(f"unknown perturbation kind {self.kind!r}")

    def shares_entity_with_target(self) -> bool:
        return bool({self.triple.s, self.triple.o} & {self.target.s, self.target.o})


class KnowledgeGraph:
    """Immutable triple store with membership and per-entity neighbourhood indices."""

    def __init__(
        self,
        vocab: Vocabulary,
        train: Sequence[Triple],
        valid: Sequence[Triple],
        test: Sequence[Triple],
    ) -> None:
        self.vocab = vocab
        self.train = list(train)
        self.valid = list(valid)
        self.test = list(test)
        self.train_set = set(self.train)
        if len(self.train_set) != len(self.train):
            raise DataError("duplicate triples within train")
        self._check_ids()
        # entity id -> ascending train indices touching that entity
        self.neighbour_index: dict[int, list[int]] = {}
        for idx, t in enumerate(self.train):
            self.neighbour_index.setdefault(t.s, []).append(idx)
            if t.o != t.s:
                self.neighbour_index.setdefault(t.o, []).append(idx)
        # (s, r) -> object ids and (r, o) -> subject ids over all three splits,
        # used by the filtered ranking protocol
        self.known_objects: dict[tuple[int, int], set[int]] = {}
        self.known_subjects: dict[tuple[int, int], set[int]] = {}
        for t in self.all_triples():
            self.known_objects.setdefault((t.s, t.r), set()).add(t.o)
            self.known_subjects.setdefault((t.r, t.o), set()).add(t.s)
        self._all_set = None

    def _check_ids(self) -> None:
        ne, nr = self.vocab.n_entities, self.vocab.n_relations
        for split_name, split in (("train", self.train), ("valid", self.valid), ("test", self.test)):
            for t in split:
                if not (0 <= t.s < ne and 0 <= t.o < ne and 0 <= t.r < nr):
                    raise DataError(f"{split_name} triple {t} out of vocabulary range")

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    def all_triples(self) -> Iterable[Triple]:
        yield from self.train
        yield from self.valid
        yield from self.test

    def all_triples_set(self) -> set[Triple]:
        if self._all_set is None:
            self._all_set = set(self.all_triples())
        return self._all_set

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return (
            f"KnowledgeGraph(|E|={self.n_entities}, |R|={self.n_relations}, "
            f"train={len(self.train)}, valid={len(self.valid)}, test={len(self.test)})"
        )


def _parse_lines(path: Path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def load_dataset(train_path: str | Path, valid_path: str | Path, test_path: str | Path) -> KnowledgeGraph:
    """Load a tab-separated dataset, index it, and filter unseen entities/relations.

    Valid/test triples whose entities or relations never appear in train are
    dropped, so no split can reference an id outside the train vocabulary.
    Duplicate train lines are dropped with a warning.
    """
    train_rows = _parse_lines(Path(train_path))
    if not train_rows:
        raise DataError(f"empty train file: {train_path}")
    valid_rows = _parse_lines(Path(valid_path))
    test_rows = _parse_lines(Path(test_path))
    kg = encode_dataset(train_rows, valid_rows, test_rows)
    logger.info(
        "loaded dataset: |E|=%d |R|=%d train=%d valid=%d test=%d",
        kg.n_entities, kg.n_relations, len(kg.train), len(kg.valid), len(kg.test),
    )
    return kg


def encode_dataset(
    train_rows: list[tuple[str, str, str]],
    valid_rows: list[tuple[str, str, str]],
    test_rows: list[tuple[str, str, str]],
) -> KnowledgeGraph:
    """Assign first-appearance ids over train rows and build the indexed graph."""
    entities: list[str] = []
    relations: list[str] = []
    ent_id: dict[str, int] = {}
    rel_id: dict[str, int] = {}

    def ent(name: str) -> int:
        if name not in ent_id:
            ent_id[name] = len(entities)
            entities.append(name)
        return ent_id[name]

    def rel(name: str) -> int:
        if name not in rel_id:
            rel_id[name] = len(relations)
            relations.append(name)
        return rel_id[name]

    train: list[Triple] = []
    seen: set[Triple] = set()
    duplicates = 0
    for s, r, o in train_rows:
        t = Triple(ent(s), rel(r), ent(o))
        if t in seen:
            duplicates += 1
            continue
        seen.add(t)
        train.append(t)
    if duplicates:
        logger.warning("dropped %d duplicate train triples", duplicates)

    def encode_filtered(rows: list[tuple[str, str, str]], split: str) -> list[Triple]:
        kept = []
        dropped = 0
        for s, r, o in rows:
            if s in ent_id and o in ent_id and r in rel_id:
                kept.append(Triple(ent_id[s], rel_id[r], ent_id[o]))
            else:
                dropped += 1
        if dropped:
            logger.info("filtered %d %s triples with unseen entities/relations", dropped, split)
        return kept

    vocab = Vocabulary(entities, relations)
    return KnowledgeGraph(
        vocab, train, encode_filtered(valid_rows, "valid"), encode_filtered(test_rows, "test")
    )


def load_dataset_dir(directory: str | Path) -> KnowledgeGraph:
    d = Path(directory)
    return load_dataset(d / "train.txt", d / "valid.txt", d / "test.txt")


def write_dataset(kg: KnowledgeGraph, dir_path: str | Path) -> None:
    """Emit train.txt/valid.txt/test.txt; reloading reproduces the same graph."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    for name, split in zip(SPLIT_FILES, (kg.train, kg.valid, kg.test)):
        with open(d / name, "w", encoding="utf-8", newline="\n") as fh:
            for t in split:
                s, r, o = kg.vocab.triple_names(t)
                fh.write(f"{s}\t{r}\t{o}\n")


def neighbourhood(kg: KnowledgeGraph, target: Triple) -> list[int]:
    """Train-triple indices sharing the target's subject or object, ascending.

    The target itself is included when it is a train triple.
    """
    ne = kg.n_entities
    if not (0 <= target.s < ne and 0 <= target.o < ne):
        raise DataError(f"target {target} references unknown entities")
    indices = set(kg.neighbour_index.get(target.s, ()))
    indices.update(kg.neighbour_index.get(target.o, ()))
    return sorted(indices)


def apply_perturbations(kg: KnowledgeGraph, perturbations: Sequence[Perturbation]) -> KnowledgeGraph:
    """Return a new graph with deletions removed and additions appended.

    The original graph is untouched; indices are rebuilt. A batch naming the
    same triple as both delete and add is rejected because the result would
    depend on application order.
    """
    deletes = {p.triple for p in perturbations if p.kind == "delete"}
    adds = [p.triple for p in perturbations if p.kind == "add"]
    if deletes & set(adds):
        raise DataError("perturbation batch deletes and adds the same triple")
    if len(set(adds)) != len(adds):
        raise DataError("perturbation batch adds the same triple twice")
    for t in deletes:
        if t not in kg.train_set:
            raise DataError(f"delete of absent train triple {t}")
    existing = kg.all_triples_set()
    for t in adds:
        if t in existing:
            raise DataError(f"add of already-present triple {t}")
    new_train = [t for t in kg.train if t not in deletes]
    new_train.extend(adds)
    return KnowledgeGraph(kg.vocab, new_train, kg.valid, kg.test)


def dedupe_perturbations(perturbations: Sequence[Perturbation]) -> list[Perturbation]:
    """Drop later perturbations that repeat an earlier (kind, triple) edit."""
    seen: set[tuple[str, Triple]] = set()
    unique = []
    for p in perturbations:
        key = (p.kind, p.triple)
        if key in seen:
            continue
        seen.add(key)
        unique.append(p)
    return unique


def neighbourhood_stats(kg: KnowledgeGraph, targets: Sequence[Triple]) -> dict[str, float]:
    """Median/mean/stddev of neighbourhood sizes over the given targets.

    Even-length median is the mean of the two middle values; stddev is the
    population standard deviation.
    """
    if not targets:
        raise DataError("neighbourhood_stats requires at least one target")
    sizes = [len(neighbourhood(kg, z)) for z in targets]
    mean = statistics.fmean(sizes)
    return {
        "median": float(statistics.median(sizes)),
        "mean": mean,
        "stddev": statistics.pstdev(sizes, mu=mean),
    }


def write_stats_csv(stats: dict[str, float], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, value in stats.items():
            writer.writerow([key, f"{value:.6f}"])
