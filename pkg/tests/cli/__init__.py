"""Tests for the c2f command line."""
