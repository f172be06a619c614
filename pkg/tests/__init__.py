"""Tests for dwoltransport."""
