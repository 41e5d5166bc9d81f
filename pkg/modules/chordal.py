"""
Chordal decomposition of the network graph into bags for the reduced PSD cone.

Bags come from a greedy minimum-fill tree decomposition; bags contained in a
neighbouring bag are merged away, which keeps the running-intersection property.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import networkx as nx
from networkx.algorithms.approximation import treewidth_min_fill_in

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChordalDecomposition:
    bags: Tuple[Tuple[int, ...], ...]
    tree_edges: Tuple[Tuple[int, int], ...]

    @property
    def max_bag(self) -> int:
        return max((len(b) for b in self.bags), default=0)

    def pairs(self) -> List[Tuple[int, int]]:
        """All vertex pairs (i < j) that share a bag: edges plus fill-in."""
        seen = set()
        for bag in self.bags:
            seen.update(itertools.combinations(sorted(bag), 2))
        return sorted(seen)

    def covers(self, graph: nx.Graph) -> bool:
        members = set().union(*map(set, self.bags)) if self.bags else set()
        if set(graph.nodes) - members:
            return False
        sets = [set(b) for b in self.bags]
        return all(any(i in s and j in s for s in sets) for i, j in graph.edges)

    def running_intersection(self) -> bool:
        tree = nx.Graph()
        tree.add_nodes_from(range(len(self.bags)))
        tree.add_edges_from(self.tree_edges)
        if len(self.bags) > 1 and not nx.is_tree(tree):
            return False
        vertices = set(itertools.chain.from_iterable(self.bags))
        for v in vertices:
            holders = [k for k, bag in enumerate(self.bags) if v in bag]
            if not nx.is_connected(tree.subgraph(holders)):
                return False
        return True


def _merge_subset_bags(tree: nx.Graph) -> nx.Graph:
    tree = tree.copy()
    merged = True
    while merged:
        merged = False
        for a, b in list(tree.edges):
            for small, big in ((a, b), (b, a)):
                if small <= big:
                    for nbr in list(tree.neighbors(small)):
                        if nbr != big:
                            tree.add_edge(big, nbr)
                    tree.remove_node(small)
                    merged = True
                    break
            if merged:
                break
    return tree


def decompose(graph: nx.Graph) -> ChordalDecomposition:
    """
    Tree decomposition of ``graph`` by greedy minimum fill-in.

    Args:
        graph: undirected network graph on dense bus indices

    Returns:
        ChordalDecomposition whose bags cover every vertex and edge
    """
    if graph.number_of_nodes() == 0:
        return ChordalDecomposition(bags=(), tree_edges=())
    width, tree = treewidth_min_fill_in(graph)
    tree = _merge_subset_bags(tree)
    order = sorted(tree.nodes, key=lambda bag: (min(bag), len(bag), sorted(bag)))
    position = {bag: k for k, bag in enumerate(order)}
    bags = tuple(tuple(sorted(bag)) for bag in order)
    edges = tuple(sorted(tuple(sorted((position[a], position[b]))) for a, b in tree.edges))

    logger.info(f"Chordal decomposition: {len(bags)} bags, treewidth {width}, largest bag {max(map(len, bags))}")
    return ChordalDecomposition(bags=bags, tree_edges=edges)


def single_bag(vertices: Sequence[int]) -> ChordalDecomposition:
    """The trivial decomposition used by the dense SDP mode."""
    return ChordalDecomposition(bags=(tuple(sorted(vertices)),), tree_edges=())
