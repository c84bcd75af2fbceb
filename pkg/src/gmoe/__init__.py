"""Graphlet moment estimation for latent-embedding random graph generators."""

__version__ = "0.1.0"
