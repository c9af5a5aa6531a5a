"""
dcmr Test Suite

Unit, integration and slow training tests for the dcmr package.
"""
