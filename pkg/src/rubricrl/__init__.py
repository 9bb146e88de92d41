"""Rubric-transferability reward orchestration.

Subpackages by capability:

- ``data``: preference-sample loading, curation filters, teacher split,
  training-split allocation
- ``formats``: structured critique parsing/rendering and prompt templates
- ``rewards``: reward components and aggregation schemes
- ``gateway``: scripted and remote completion backends
- ``proxy``: transferability checks, evaluator ensembles, verified inference
- ``trainer``: group-relative rollout scoring, advantages, toy policy loop
- ``bench``: benchmark metrics and the rubric-transfer experiment
- ``cli``: pipeline commands (curate, distill, train, eval, transfer)
"""

__version__ = "0.1.0"
