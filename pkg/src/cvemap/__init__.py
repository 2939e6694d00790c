"""CVE to MITRE ATT&CK mapping: data pipeline, retrieval, validation, curation, evaluation."""

from .attack_kb import (
    AttackKnowledgeBase,
    AttackTechnique,
    load_attack_bundle,
    normalize_name,
    parse_technique_id,
    technique_corpus_text,
)
from .cve_ingest import CveRecord, format_model_input, parse_cve_record
from .cvem import (
    CvemMapping,
    TechniqueClaim,
    ValidationOutcome,
    classify_output,
    parse_cvem,
    serialize_cvem,
    validate_cvem,
)
from .metrics import (
    CategorizedIdSets,
    MetricsReport,
    ast_accuracy,
    category_f1,
    category_iou,
    corpus_metrics,
)
from .pipeline import CurationRecord, CurationStore, RunAccounting, run_generation
from .prompting import ChatExample, PromptBundle, build_rat_prompt, split_dataset, to_chat_example
from .retrieval import (
    HashedTfEmbedder,
    RetrievalIndex,
    RetrievalResult,
    build_index,
    eval_retrieval,
    retrieve_top_n,
)

__version__ = "0.1.0"
