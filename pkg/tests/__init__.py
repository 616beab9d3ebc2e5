"""
Test package.

Contains integration tests, unit tests, and test utilities.
"""