"""Multi-task speech and speaker recognition on a shared encoder.

A from-scratch stack: float64 reverse-mode autodiff, a conv + transformer
encoder with two task heads, CTC and AAM-softmax losses, disjoint/joint
multi-task training, and the full WER/EER evaluation protocol, exercised on a
synthetic tone-language corpus.
"""

__version__ = "0.1.0"
