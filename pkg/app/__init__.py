"""
Conforming Limit Discontinuity Toolkit
Application package initialization
"""

__version__ = "1.0.0"
__description__ = "Discontinuity estimators, Monte Carlo misclassification studies and panel audits at the conforming loan limit"
