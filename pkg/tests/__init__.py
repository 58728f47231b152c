"""Tests for AGCA multigrid."""
