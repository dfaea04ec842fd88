"""
Tests for benchmark evaluation,
including dataset loading,
answer scoring,
and accuracy reports.
"""
