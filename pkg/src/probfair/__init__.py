"""Budget-constrained planning for collapsing two-state bandits with
probabilistic fairness guarantees."""

__version__ = "0.1.0"
