"""Analysis toolkit for multi-document summarization corpora.

Modules:

* ``corpus``     - ingestion, filtering, sentence splitting, tokenization, Table-1 style stats
* ``lexical``    - ROUGE-1/2, R12, extractive fragments, coverage and density
* ``oracles``    - random / LexRank baselines, five reference-aware oracles, BM25 retrieval
* ``entities``   - gazetteer linker and entity-level content analyses
* ``coherence``  - entity grids and a convolutional pairwise-ranking coherence model
* ``extractor``  - oracle label derivation and a trainable summary-aware sentence scorer
* ``synthgen``   - seeded synthetic corpora with planted, knob-controlled properties
* ``cli``        - command line entry point
"""

__version__ = "0.1.0"
