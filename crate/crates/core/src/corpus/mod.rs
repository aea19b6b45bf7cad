//! Student responses, dataset splits and the few-shot exemplar store.

mod exemplar;
mod responses;
mod split;
mod store;

pub use exemplar::{
    check_balance, BalanceReport, BalanceViolation, CotChain, Exemplar, ExemplarError, ExemplarKind,
    PolarityCount,
};
pub use responses::{
    ingest_responses, ingest_str, IngestError, Ingested, InputFormat, ResponseSet, RowError,
    StudentResponse, CSV_SCORE_PREFIX,
};
pub use split::{round_half_up, split_dataset, Split, SplitError, SplitSpec};
pub use store::{ExemplarSource, ExemplarStore, Manifest, ManifestEntry, StoreError};
