"""synthq: synthetic multi-query generation and complexity-weighted training.

Pipeline stages: ingest a document corpus, generate M queries per document
with a single zero-shot LLM call each, quantify query quality and diversity,
annotate content-word complexity, train a desk-scale dense retriever with
per-batch complexity weights, and run the complexity/diversity statistics.
"""

from .backends import ScorerBackend, SidecarBackend, StubBackend, backend_from_spec, stub_embed
from .corpus import (
    Document,
    HumanQuery,
    ResponseCache,
    SyntheticQuerySet,
    load_documents,
    load_human_queries,
    load_pairs,
    load_query_sets,
    save_pairs,
    save_query_sets,
)
from .eval_stats import (
    CorrelationResult,
    ThresholdFit,
    fit_cw_threshold,
    ndcg_at_k,
    pearson_r_p,
    positive_rate_buckets,
    rank_corpus,
)
from .qd_metrics import QDReport, bleu4, ce_ratio, dist_sim, len_sim, measure, self_bleu
from .synth import (
    DEFAULT_TEMPLATES,
    DIVERSE_TEMPLATE,
    PARAPHRASE_TEMPLATE,
    GenerationConfig,
    PromptSelection,
    PromptTemplate,
    build_dataset,
    generate_query_set,
    parse_numbered_list,
    render_prompt,
    tune_prompt,
)
from .tokenization import StopwordTable, TokenizerSpec, content_word_count, load_stopwords, tokenize
from .trainer import (
    ToyEncoder,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    load_encoder,
    new_encoder,
    optimizer_step,
    save_checkpoint,
    train,
    weighted_info_nce,
)
from .weighting import WeightConfig, WeightedPair, compose_and_normalize, cw_weights, reasoning_index

__version__ = "0.1.0"
