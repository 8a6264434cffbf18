"""
Cooperative multi-agent bandits on stochastic block models
"""

__version__ = "0.1.0"
