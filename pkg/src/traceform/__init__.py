"""Traceform: UI representation learning from interaction traces.

Pipeline stages: synthesize app corpora with ground-truth interaction
traces, build app-disjoint pair datasets, pre-train a uni-stream
multimodal transformer on link/consecutiveness/masked-text tasks, and
fine-tune on downstream UI understanding tasks.
"""

__version__ = "0.1.0"
