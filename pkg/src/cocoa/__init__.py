"""Two-stage multi-agent RAG engine with knowledge induction, decision
making, training-data synthesis, and a numerical loss lab."""

from .corpus import CorpusHandle, CorpusStore, ingest_corpus
from .generation import (
    GenerationRequest,
    GenerationResult,
    MockBackend,
    MockScript,
    RemoteBackend,
    load_mock_script,
)
from .losslab import (
    SequenceScore,
    ToyModel,
    chain_decomposition_residual,
    dpo_loss,
    run_verification,
    sequence_logprob,
    sft_loss,
)
from .metrics import EvalReport, EvalRow, evaluate_run, exact_match, f1_score, normalize_answer
from .pipeline import EXPECTED_TRANSCRIPT_COUNTS, Pipeline, PipelineConfig, StageError
from .prompts import (
    ParsedSections,
    PromptBindings,
    StageId,
    format_passages,
    parse_stage_output,
    render_prompt,
    render_unified_sections,
)
from .retrieval import BM25Index, RankedPassages, build_index, remote_retrieve, tokenize
from .synthesis import (
    DpoSample,
    Rejection,
    SftSample,
    build_dpo_sample,
    build_sft_sample,
    export_dataset,
)
from .types import (
    BranchResult,
    CandidateAnswer,
    Decision,
    InducedKnowledge,
    Passage,
    PipelineRecord,
    Query,
    Transcript,
    VariantId,
    decode_record,
    encode_record,
    validate_record,
)

__version__ = "0.1.0"
