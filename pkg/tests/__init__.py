"""Test suite for besov-relu package."""
