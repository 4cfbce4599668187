"""VortexShaper Test Suite"""
