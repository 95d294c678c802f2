"""Tests for the experiment configuration model."""
