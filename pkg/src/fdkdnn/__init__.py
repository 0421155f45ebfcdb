"""Transfer-learning toolkit: frozen CNN feature extraction plus a retrained softmax head."""

__version__ = "0.1.0"
