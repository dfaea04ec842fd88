"""
Tests for the QA construction pipeline,
including poster segmentation,
the curation agents,
and difficulty calibration.
"""
