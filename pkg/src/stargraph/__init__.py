"""Knowledge-graph embeddings from per-entity subgraph tokens.

Each entity is described by a fixed-size token set (nearest anchors,
highest-degree neighbors, and the entity itself), encoded by a
self-attention block and scored with a TripleRE-family distance.
"""

__version__ = "0.1.0"
