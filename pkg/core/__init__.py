"""
Conforming Limit Discontinuity Toolkit
Core package: errors, codecs, random streams and reporting
"""
