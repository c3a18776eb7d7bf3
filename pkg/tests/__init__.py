# Tests for the RLGAF toolkit
