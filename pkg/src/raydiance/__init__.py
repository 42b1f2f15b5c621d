"""Neural ray rendering with convolutional ray features and a softmax surface prior."""

__version__ = "0.1.0"
