"""
Conforming Limit Discontinuity Toolkit
Services package: classification, estimation, simulation and validation
"""
