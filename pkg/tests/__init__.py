"""Test suite for PMC-variance."""
