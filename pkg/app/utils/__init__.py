"""
Shared utilities: logging configuration, random stream fan-out and file formats.
"""
