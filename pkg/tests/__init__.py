"""Test package for causal-vote."""
