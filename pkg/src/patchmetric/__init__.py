"""Metric learning for local image patch descriptors.

Siamese, triplet and central-surround convolutional networks with
hand-written backpropagation, trained with pairwise, triplet and global
batch-statistics losses, plus the patch-matching (FPR95/ROC) evaluation
pipeline and a 2-D toy outlier study.
"""

__version__ = "0.1.0"
