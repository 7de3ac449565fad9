"""Desk-scale synthetic knowledge graphs for attack experiments.

The generator mixes two patterns. Twinned stars: a pair of hub entities
sharing a leaf set under one relation, where one hub additionally links to a
held-out leaf; the twin's edge to that leaf becomes the test triple, which a
trained model predicts from the shared evidence. Chains: relation-consistent
entity paths that add connectivity noise and donate held-out edges to the
validation split. Twinned stars keep target neighbourhoods sparse, the
regime where single-edit poisoning is measurable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .kg import KnowledgeGraph, encode_dataset


@dataclass(frozen=True)
class SynthConfig:
    stars: int = 10
    star_size: int = 6  # shared leaves per twinned hub pair (plus one held out)
    chains: int = 5
    chain_length: int = 7  # edges per chain
    relations: int = 4
    entities: int | None = None  # None: exactly the minimum needed
    seed: int = 0

    def __post_init__(self) -> None:
        if self.stars < 1 or self.star_size < 2 or self.relations < 1:
            raise ValueError("need stars >= 1, star_size >= 2, relations >= 1")
        if self.chains < 0 or (self.chains > 0 and self.chain_length < 2):
            raise ValueError("chains need length >= 2 edges")

    @property
    def min_entities(self) -> int:
        per_star = 2 + self.star_size + 1  # two hubs, shared leaves, held-out leaf
        chain_nodes = self.chains * (self.chain_length + 1)
        return self.stars * per_star + chain_nodes


def generate_synthetic_kg(config: SynthConfig) -> KnowledgeGraph:
    """Seed-deterministic synthetic graph; see SynthConfig for the knobs."""
    n_entities = config.entities if config.entities is not None else config.min_entities
    if n_entities < config.min_entities:
        raise DataError(
            f"need at least {config.min_entities} entities for this pattern mix, got {n_entities}"
        )
    rng = np.random.default_rng(config.seed)
    pool = [f"e{i:04d}" for i in rng.permutation(n_entities)]
    rel_names = [f"r{i}" for i in range(config.relations)]
    cursor = 0

    def take(count: int) -> list[str]:
        nonlocal cursor
        cursor += count
        return pool[cursor - count : cursor]

    train: list[tuple[str, str, str]] = []
    valid: list[tuple[str, str, str]] = []
    test: list[tuple[str, str, str]] = []
    twin_hubs: list[tuple[str, str]] = []  # (second hub, its relation)

    for _ in range(config.stars):
        rel = rel_names[int(rng.integers(config.relations))]
        hub_a, hub_b = take(2)
        for leaf in take(config.star_size):
            train.append((hub_a, rel, leaf))
            train.append((hub_b, rel, leaf))
        held_out = take(1)[0]
        train.append((hub_a, rel, held_out))
        test.append((hub_b, rel, held_out))
        twin_hubs.append((hub_b, rel))

    for _ in range(config.chains):
        rel = rel_names[int(rng.integers(config.relations))]
        nodes = take(config.chain_length + 1)
        edges = [(nodes[j], rel, nodes[j + 1]) for j in range(config.chain_length)]
        if config.chain_length >= 3:
            hold = 1 + int(rng.integers(config.chain_length - 2))
            valid.append(edges.pop(hold))
        train.extend(edges)

    # any extra entity budget becomes additional leaves spread over the stars
    for j, extra_leaf in enumerate(pool[cursor:]):
        hub, rel = twin_hubs[j % len(twin_hubs)]
        train.append((hub, rel, extra_leaf))

    order = rng.permutation(len(train))
    return encode_dataset([train[i] for i in order], valid, test)
