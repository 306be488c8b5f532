"""
Conforming Limit Discontinuity Toolkit
Models package: domain schemas, panels and design containers
"""
