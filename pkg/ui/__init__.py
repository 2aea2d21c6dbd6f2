"""
Console output helpers for the command line.

Rendering lives in ``ui/components.py``; commands import from there.
"""
