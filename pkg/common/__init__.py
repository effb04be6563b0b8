"""
Common Package: shared config, logging, errors and crypto
"""
