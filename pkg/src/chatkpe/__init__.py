"""chatkpe: supervised keyphrase extraction for long chat logs.

Block-wise encoding, n-gram convolutional scoring, joint ranking/chunking
training, duplicate-merged extraction, classical baselines (TF-IDF, RAKE,
TextRank), and an exact-match F1@K cross-validation harness.
"""

__version__ = "0.1.0"
