"""
BSVIE representation toolkit tests.
"""
