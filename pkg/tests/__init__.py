"""Test package for delone-heat."""
