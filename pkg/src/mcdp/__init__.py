"""Multi-central differential privacy: secret-shared aggregation across m
non-colluding aggregators, with counting, frequency, threshold, sampled
k-query and selection protocols, plus an in-process protocol simulator."""

__version__ = "0.1.0"
