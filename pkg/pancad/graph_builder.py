import hashlib
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.spatial import cKDTree

from pancad.drawing import Drawing
from pancad.entities import Segment
from pancad.exceptions import InvariantViolation
from pancad.geometry import (
    anchor_points,
    entity_bbox,
    entity_distance,
    is_parallel,
    segment_min_distance,
)
from pancad.schemas import GraphConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EntityGraph:
    """Undirected entity graph; edges are (i, j) with i < j in lexicographic order."""

    n: int
    edges: tuple[tuple[int, int], ...]
    adjacency: tuple[tuple[int, ...], ...] = field(repr=False, compare=False, default=())

    def __post_init__(self):
        if not self.adjacency:
            neighbors = [[] for _ in range(self.n)]
            for i, j in self.edges:
                neighbors[i].append(j)
                neighbors[j].append(i)
            object.__setattr__(
                self, "adjacency", tuple(tuple(sorted(nbrs)) for nbrs in neighbors)
            )

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.adjacency[i]

    def degree(self) -> np.ndarray:
        return np.array([len(nbrs) for nbrs in self.adjacency], dtype=np.int64)

    def edge_array(self) -> np.ndarray:
        return np.array(self.edges, dtype=np.int64).reshape(-1, 2)

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "edges": [list(edge) for edge in self.edges]})

    @classmethod
    def from_json(cls, text: str) -> "EntityGraph":
        payload = json.loads(text)
        return cls(n=payload["n"], edges=tuple(tuple(edge) for edge in payload["edges"]))


def build_graph(d: Drawing, cfg: GraphConfig) -> EntityGraph:
    """
    Build the entity graph of a drawing.

    An edge (i, j) is a candidate when min(D, D_par) < epsilon, where D is the
    endpoint distance and D_par the scaled distance of two parallel segments.
    Degrees are then capped at k_max: nodes are visited in ascending index and
    random incident edges are dropped until the node's degree fits.

    Args:
        d (Drawing): The drawing, at least one entity.
        cfg (GraphConfig): Thresholds, degree cap and drop seed.

    Returns:
        EntityGraph: The capped graph, deterministic in (drawing, cfg).
    """
    candidates = candidate_pairs(d, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _id_hash(d.id)]))
    edges = _cap_degree(len(d), candidates, cfg.k_max, rng)
    graph = EntityGraph(n=len(d), edges=edges)

    if len(d) and graph.degree().max(initial=0) > cfg.k_max:
        raise InvariantViolation(f"Degree cap {cfg.k_max} violated in '{d.id}'.")
    logger.debug(
        "Graph '%s': %d nodes, %d candidates, %d edges",
        d.id,
        len(d),
        len(candidates),
        len(edges),
    )
    return graph


def candidate_pairs(
    d: Drawing, cfg: GraphConfig, method: Literal["grid", "all_pairs"] = "grid"
) -> list[tuple[int, int]]:
    """Sorted candidate edges before the degree cap."""
    entities = d.entities
    if method == "all_pairs":
        pairs = (
            (i, j) for i in range(len(entities)) for j in range(i + 1, len(entities))
        )
    else:
        pairs = _proximity_pairs(entities, cfg) | _parallel_pairs(entities, cfg)
    return sorted(pair for pair in pairs if _connected(entities[pair[0]], entities[pair[1]], cfg))


def pair_distance(a, b, cfg: GraphConfig) -> float:
    """min(D, D_par) with D_par only for parallel segments."""
    distance = entity_distance(a, b)
    if is_parallel(a, b, cfg.parallel_angle_tol):
        distance = min(distance, cfg.eta * segment_min_distance(a, b))
    return distance


def _connected(a, b, cfg: GraphConfig) -> bool:
    return pair_distance(a, b, cfg) < cfg.epsilon


def _proximity_pairs(entities: list, cfg: GraphConfig) -> set[tuple[int, int]]:
    anchors = [anchor_points(e) for e in entities]
    if not anchors:
        return set()
    owner = np.concatenate([np.full(len(a), i) for i, a in enumerate(anchors)])
    tree = cKDTree(np.concatenate(anchors))
    # Slightly widened radius; exact test happens in _connected
    raw = tree.query_pairs(r=cfg.epsilon * (1 + 1e-9), output_type="ndarray")
    pairs = set()
    for p, q in raw:
        i, j = int(owner[p]), int(owner[q])
        if i != j:
            pairs.add((min(i, j), max(i, j)))
    return pairs


def _parallel_pairs(entities: list, cfg: GraphConfig) -> set[tuple[int, int]]:
    reach = cfg.epsilon / cfg.eta
    half = reach / 2.0
    cells: dict[tuple[int, int], list[int]] = defaultdict(list)
    segments = [i for i, e in enumerate(entities) if isinstance(e, Segment)]
    for i in segments:
        xmin, ymin, xmax, ymax = entity_bbox(entities[i])
        for cx in range(math.floor((xmin - half) / reach), math.floor((xmax + half) / reach) + 1):
            for cy in range(
                math.floor((ymin - half) / reach), math.floor((ymax + half) / reach) + 1
            ):
                cells[(cx, cy)].append(i)

    pairs = set()
    for members in cells.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                i, j = members[a], members[b]
                if is_parallel(entities[i], entities[j], cfg.parallel_angle_tol):
                    pairs.add((min(i, j), max(i, j)))
    return pairs


def _cap_degree(
    n: int, candidates: list[tuple[int, int]], k_max: int, rng: np.random.Generator
) -> tuple[tuple[int, int], ...]:
    neighbors: list[set[int]] = [set() for _ in range(n)]
    for i, j in candidates:
        neighbors[i].add(j)
        neighbors[j].add(i)

    for v in range(n):
        while len(neighbors[v]) > k_max:
            ordered = sorted(neighbors[v])
            u = ordered[int(rng.integers(len(ordered)))]
            neighbors[v].discard(u)
            neighbors[u].discard(v)

    return tuple((i, j) for i in range(n) for j in sorted(neighbors[i]) if i < j)


def _id_hash(drawing_id: str) -> int:
    return int.from_bytes(hashlib.sha256(drawing_id.encode("utf-8")).digest()[:8], "little")
