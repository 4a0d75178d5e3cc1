//! Retrieval and answer-quality evaluation: MRR, hit@k, ROUGE-L, graded
//! answer records and per-strategy retrieval reports.

mod grading;
mod metrics;
mod retrieval;

pub use grading::{
    attach_external_scores, grade, read_records, summarize, write_records, AnswerReport, EvalRecord, RefusalPatterns,
};
pub use metrics::{hit_at_k, lcs_len, mrr, rouge_l, rouge_l_tokens};
pub use retrieval::{
    document_rank, gold_ranks, read_cases, run_retrieval_eval, run_retrieval_report, write_cases, EvalOptions,
    PartMetrics, RetrievalCase, RetrievalReport, SourcePart, StrategyReport, Strategy, HIT_K,
};
