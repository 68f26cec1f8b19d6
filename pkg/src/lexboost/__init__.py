"""Lexical retrieval boosted by corpus-graph neighbour scores."""
