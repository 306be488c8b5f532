"""
Test package for the Conforming Limit Discontinuity Toolkit
"""
