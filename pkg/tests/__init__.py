"""
Test package for Recipify project.
"""
