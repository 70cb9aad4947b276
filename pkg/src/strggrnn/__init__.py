"""Online spatio-temporal graph trajectory prediction with NMF neighbourhood proposals."""

__version__ = "0.1.0"
