"""
Command-line interface package
"""
