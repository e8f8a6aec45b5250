"""Test package for the debiased ranking toolkit."""
