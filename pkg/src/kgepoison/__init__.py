"""KGE training, filtered link-prediction evaluation, and data-poisoning attacks."""

__version__ = "0.1.0"
