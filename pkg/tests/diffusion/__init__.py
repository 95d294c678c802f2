"""Tests for the diffusion core."""
