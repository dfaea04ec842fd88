"""
Test suite for the text formats the harness reads.

This module contains validation tests for two capabilities:

1. **Turn Parsing**
   - think / tool_call / answer blocks of assistant turns
   - Violation flags and their format classes
   - Rendering tool results and corrective notices

2. **Run Configuration**
   - Defaults and partial documents
   - Rejection of unknown keys and out-of-range values
"""
