"""AGCA Multigrid - matrix-free geometric multigrid with adaptive Galerkin coarsening."""

__version__ = "0.1.0"
