"""Bidirectional LSTM/GRU gesture classifiers trained with a Fisher-augmented softmax loss."""

__version__ = "0.1.0"
