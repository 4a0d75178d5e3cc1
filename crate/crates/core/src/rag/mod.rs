//! Grounded question answering over the knowledge graph and vector indexes.

mod answer;
mod chat;

pub use chat::{ChatClient, EchoChat, FixedChat, FnChat, HttpChatClient, OfflineChat};

pub use answer::{
    answer, classify_query, follow_up, ungrounded_numbers, AnswerConfig, GroundedAnswer, KgFact, KgOperation,
    QueryMode, QueryPlan, RagContext, Session, Source, SourceKind, Turn, VsRequest, REFUSAL_TEXT,
    SEMANTIC_SYSTEM_PROMPT,
};
