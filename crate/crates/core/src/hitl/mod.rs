//! Human-in-the-loop refinement: IRR sessions, error trends, candidate
//! ranking and exemplar promotion.

mod candidates;
mod irr;
mod promote;
mod sticking;
mod trends;

pub use candidates::{
    is_validation_split, rank_candidates, Candidate, CandidateRanking, CandidateWeights,
    ErrorDirection, SlotError,
};
pub use irr::{
    sample_ids, IrrError, IrrRound, IrrSession, IrrStatus, KappaResult, Resolution,
    DEFAULT_IRR_FRACTION, KAPPA_GATE,
};
pub use promote::{
    build_promotion, verdict_only_chain, ChainInput, Promotion, PromotionError, PromotionRequest,
};
pub use sticking::{
    effective_rubric, StickingPoint, StickingPointDraft, StickingPointError, StickingSource,
};
pub use trends::{
    detect_trends, trend_label, CriterionTrend, TrendLabel, TrendReport, DEFAULT_TREND_THRESHOLD,
};
