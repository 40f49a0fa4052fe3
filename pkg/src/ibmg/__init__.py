"""Geometric multigrid with box smoothers for the implicit immersed boundary method."""
