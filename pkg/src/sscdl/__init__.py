"""Semi-supervised graph classification with weak/strong augmented views.

Modules: ``graph`` (sparse graphs and normalized adjacency), ``data``
(TUDataset ingestion and fold plans), ``augment`` (weak/strong views),
``model`` (GCN encoder and heads), ``losses``, ``train`` (pretrain and
fine-tune), ``evaluation`` (cross-validation harness), ``config`` and ``cli``.
"""

__version__ = "0.1.0"
