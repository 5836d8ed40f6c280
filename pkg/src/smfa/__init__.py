"""Selective unlearning workbench.

Sub-packages: ``numerics`` (tensors, autodiff, optimizers, RNG),
``model`` (the desk-scale bimodal network and checkpoints), ``datagen``
(synthetic forget/retain/understanding benchmark), ``sculptor`` (delta
masking and merging), ``methods`` (unlearning procedures), ``evaluation``
(metrics and reports), ``cli`` (pipeline commands).
"""

__version__ = "0.1.0"
