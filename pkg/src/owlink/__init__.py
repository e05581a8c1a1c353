"""Open-world knowledge graph link prediction.

Trains embedding-based link predictors (TransE, DistMult, ComplEx) on a
knowledge graph, learns a transformation from averaged word embeddings of
entity names/descriptions into the graph embedding space, and evaluates
both closed- and open-world link prediction with raw/filtered ranking
metrics.
"""

__version__ = "0.1.0"
