"""PMC-variance - Pairwise Markov chain alignment scores and variance bounds."""

__version__ = "1.0.0"
