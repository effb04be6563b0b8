"""
DrowsyWatch - wearable drowsiness monitoring
"""
__version__ = '1.0.0'
__author__ = 'DrowsyWatch Team'
