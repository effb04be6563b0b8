"""
Core Package: sensing, analytics, scoring, storage and link
"""
