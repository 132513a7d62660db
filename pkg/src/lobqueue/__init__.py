"""Top-of-book queue models: imbalance-conditioned price-move and trade-arrival
probabilities, a Monte Carlo engine, an empirical trades-and-quotes pipeline
and a calibrator."""

__version__ = "0.1.0"
