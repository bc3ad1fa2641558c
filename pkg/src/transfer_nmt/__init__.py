"""Zero-shot cross-lingual transfer for NMT, reproduced on synthetic languages.

Modules: ``numerics`` (autodiff), ``data`` (languages, corpora, sampling),
``model`` (transformer), ``trainer`` (MLM pretraining, two-stage training,
back-translation), ``decode`` (beam search), ``metrics`` (BLEU, retrieval),
``experiments`` (ablations), ``config`` and ``cli``.
"""

__version__ = "0.1.0"
