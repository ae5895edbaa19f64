"""Acoustic scene classification with a small VGG-style ConvNet.

The pipeline turns 30-second WAV clips into 1-second log-mel windows,
expands every window with frequency-delta copies, trains a numpy ConvNet
on the windows and aggregates window posteriors into clip decisions.
"""

__version__ = "0.1.0"
