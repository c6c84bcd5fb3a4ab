"""Successive pseudo meta-task partitioning for few-shot time-series prognosis.

Modules:

* :mod:`smaml.series` differencing, normalization, ADF test, AR fits
* :mod:`smaml.partition` sliding windows and pseudo meta-task builders
* :mod:`smaml.autodiff` reverse-mode tape with a fused LSTM cell
* :mod:`smaml.model`, :mod:`smaml.optim` LSTM forecaster, Adam and SGD
* :mod:`smaml.meta` first-order MAML training and few-shot evaluation
* :mod:`smaml.data`, :mod:`smaml.experiment`, :mod:`smaml.cli` I/O and the experiment runner
"""

__version__ = "0.1.0"
