"""Multi-agent debate engine for time-series reasoning.

Pipeline: knowledge elicitation → chart + tool interface construction →
iterative analyst debate → tool-verified parallel review → calibrated
synthesis. See the cli module for the operator entry points.
"""

__version__ = "0.1.0"
