mod common;

use std::collections::{BTreeMap, BTreeSet};

use cotscore_core::fixtures;
use cotscore_core::hitl::{
    trend_label, ChainInput, ErrorDirection, IrrError, IrrSession, IrrStatus, PromotionError,
    PromotionRequest, StickingPointDraft, TrendLabel, KAPPA_GATE,
};
use cotscore_core::prompt::{BlockKind, PromptError};
use cotscore_core::rubric::{parse_rubric, Rubric, ScoreVector};
use cotscore_core::runner::RunRecord;
use cotscore_core::workspace::{
    IrrScoresRequest, OpenIrrRequest, Partition, ResolutionRequest, RunRequest, Workspace,
    WorkspaceError,
};
use proptest::prelude::*;

fn rubric(id: &str) -> Rubric {
    parse_rubric(fixtures::file(&format!("rubrics/{id}.toml")).unwrap()).unwrap()
}

fn run(ws: &Workspace, config: &str, provider: &str, split: Partition) -> RunRecord {
    ws.run(&RunRequest {
        config: config.into(),
        provider: provider.into(),
        split,
        assessment: None,
        parallelism: None,
    })
    .unwrap()
}

fn add_faulty(ws: &Workspace, id: &str, rubric: &str, overscore: &[&str]) {
    let slots: Vec<String> = overscore.iter().map(|s| format!("\"{s}\"")).collect();
    std::fs::write(
        ws.root().join("providers").join(format!("{id}.toml")),
        format!("id = \"{id}\"\nkind = \"faulty\"\nseed = 1\noverscore = [{}]\n# {rubric}\n", slots.join(", ")),
    )
    .unwrap();
}

#[test]
fn trend_labels() {
    assert_eq!(trend_label(19, 2, 2.0), TrendLabel::Overscoring);
    assert_eq!(trend_label(7, 7, 2.0), TrendLabel::Balanced);
    assert_eq!(trend_label(1, 9, 2.0), TrendLabel::Underscoring);
    assert_eq!(trend_label(0, 0, 2.0), TrendLabel::Balanced);
    assert_eq!(trend_label(4, 2, 2.0), TrendLabel::Overscoring);
    assert_eq!(trend_label(3, 2, 2.0), TrendLabel::Balanced);
}

fn mirror(l: TrendLabel) -> TrendLabel {
    match l {
        TrendLabel::Overscoring => TrendLabel::Underscoring,
        TrendLabel::Underscoring => TrendLabel::Overscoring,
        TrendLabel::Balanced => TrendLabel::Balanced,
    }
}

proptest! {
    #[test]
    fn trend_labels_mirror(fp in 0usize..200, fn_count in 0usize..200, threshold in 1.0f64..5.0) {
        let label = trend_label(fp, fn_count, threshold);
        prop_assert_eq!(trend_label(fn_count, fp, threshold), mirror(label));
        if label == TrendLabel::Overscoring {
            prop_assert!(fp > 0 && fp as f64 >= threshold * fn_count as f64);
        }
        if fp == fn_count {
            prop_assert_eq!(label, TrendLabel::Balanced);
        }
    }
}

#[test]
fn faulty_run_shows_overscoring_on_its_slots() {
    let (_dir, ws) = common::fixture_workspace();
    let r = run(&ws, "rules-cot", "faulty-rules", Partition::Validation);
    let trends = ws.trends(&r.manifest.run_id, None).unwrap();
    for c in &trends.criteria {
        let expected = if ["R2", "R5"].contains(&c.criterion_id.as_str()) {
            assert!(c.fp > 0);
            TrendLabel::Overscoring
        } else {
            assert_eq!((c.fp, c.fn_count), (0, 0));
            TrendLabel::Balanced
        };
        assert_eq!(c.label, expected, "{}", c.criterion_id);
        assert_eq!(c.fn_count, 0);
    }
    assert_eq!(trends.overall.label, TrendLabel::Overscoring);
}

#[test]
fn ranking_prefers_large_trend_aligned_errors() {
    let (_dir, ws) = common::fixture_workspace();
    add_faulty(&ws, "faulty-three", "rules", &["R2", "R5", "R9"]);
    let r = run(&ws, "rules-cot", "faulty-three", Partition::Validation);
    let ranking = ws.candidates(&r.manifest.run_id, None, None).unwrap();
    assert!(ranking.warning.is_none());
    assert_eq!(ranking.overall_trend, TrendLabel::Overscoring);

    let c = ranking.candidates.iter().find(|c| c.response_id == "rules-117").unwrap();
    assert_eq!((c.human_total, c.llm_total, c.total_delta), (6, 9, 3));
    assert_eq!((c.trend_match_count, c.struggling_criterion_hits), (3, 3));
    assert_eq!(c.score, 9.0);
    assert!(c.errors.iter().all(|e| e.direction == ErrorDirection::FalsePositive));
    assert_eq!(ranking.candidates[0].score, 9.0);

    for w in ranking.candidates.windows(2) {
        assert!(
            w[0].score > w[1].score || (w[0].score == w[1].score && w[0].response_id < w[1].response_id),
            "{} before {}",
            w[0].response_id,
            w[1].response_id
        );
    }
    let top: Vec<&str> = ranking.candidates.iter().filter(|c| c.score == 9.0).map(|c| c.response_id.as_str()).collect();
    assert!(top.contains(&"rules-117"));

    let test_run = run(&ws, "rules-cot", "faulty-three", Partition::Test);
    let warned = ws.candidates(&test_run.manifest.run_id, None, None).unwrap();
    assert!(warned.warning.is_some());
}

fn chains_for(errors: &[String], text: &str) -> Vec<ChainInput> {
    errors
        .iter()
        .map(|slot| ChainInput { slot: slot.clone(), text: format!("{text} ({slot})."), citations: vec![] })
        .collect()
}

#[test]
fn active_learning_loop_reduces_false_positives() {
    let (_dir, ws) = common::fixture_workspace();
    let before = run(&ws, "rules-cot", "faulty-rules", Partition::Validation);
    let m0 = ws.metrics(&before.manifest.run_id).unwrap();
    let fp0: usize = m0.criteria.iter().filter(|c| ["R2", "R5"].contains(&c.criterion_id.as_str())).map(|c| c.fp_count).sum();
    assert!(fp0 > 0);

    let ranking = ws.candidates(&before.manifest.run_id, None, None).unwrap();
    let top = ranking.candidates[0].clone();
    let error_slots: Vec<String> = top.errors.iter().map(|e| e.criterion_id.clone()).collect();
    assert_eq!(error_slots, vec!["R2", "R5"]);

    let missing = PromotionRequest {
        run_id: before.manifest.run_id.clone(),
        response_id: top.response_id.clone(),
        chains: chains_for(&error_slots[..1], "The student gives no value for this step"),
        exemplar_id: None,
    };
    let err = ws.promote(&missing).unwrap_err();
    assert!(matches!(err, WorkspaceError::Promotion(PromotionError::MissingChain(ref s)) if s == "R5"));

    let bad_cite = PromotionRequest {
        chains: vec![ChainInput {
            slot: "R2".into(),
            text: "The student says 'words never written'.".into(),
            citations: vec!["words never written".into()],
        }, chains_for(&error_slots[1..], "x").remove(0)],
        ..missing.clone()
    };
    assert!(matches!(
        ws.promote(&bad_cite).unwrap_err(),
        WorkspaceError::Promotion(PromotionError::CitationNotFound { .. })
    ));

    let request = PromotionRequest {
        chains: chains_for(&error_slots, "The student gives no value for this step"),
        ..missing
    };
    let store_before = ws.store().unwrap().ids();
    let outcome = ws.promote(&request).unwrap();
    assert_eq!(outcome.exemplar_id, format!("al-{}", top.response_id));
    assert_eq!((outcome.previous_version, outcome.version), (1, 2));
    assert_eq!(ws.active_version("rules-cot").unwrap(), 2);
    assert_eq!(ws.store().unwrap().ids().len(), store_before.len() + 1);
    let stored = ws.store().unwrap().get(&outcome.exemplar_id).unwrap();
    assert_eq!(stored.chains.len(), 9);
    assert!(stored.chain("R2").unwrap().text.ends_with("the student earned a score of 0."));
    assert!(stored.chain("R1").unwrap().text.contains("earned a score of"));
    let prompt = ws.render("rules-cot").unwrap();
    assert_eq!(prompt.config_hash, outcome.config_hash);
    assert!(prompt.section(BlockKind::FewShot).unwrap().contains("(active learning)"));

    let quota = ws.promote(&PromotionRequest { response_id: ranking.candidates[1].response_id.clone(), ..request.clone() });
    assert!(matches!(
        quota.unwrap_err(),
        WorkspaceError::Promotion(PromotionError::IterationQuotaExceeded { .. })
    ));

    let after = run(&ws, "rules-cot", "faulty-rules", Partition::Validation);
    assert_ne!(after.manifest.run_id, before.manifest.run_id);
    assert!(!after.manifest.response_ids.contains(&top.response_id));
    let m1 = ws.metrics(&after.manifest.run_id).unwrap();
    let fp1: usize = m1.criteria.iter().filter(|c| ["R2", "R5"].contains(&c.criterion_id.as_str())).map(|c| c.fp_count).sum();
    assert!(fp1 < fp0, "{fp1} >= {fp0}");
    assert!(m1.avg_subscore_qwk > m0.avg_subscore_qwk);

    // The old config stays renderable from its snapshot.
    assert_eq!(ws.render(&before.manifest.config_hash).unwrap().config_hash, before.manifest.config_hash);
}

#[test]
fn promotion_that_overflows_the_budget_changes_nothing() {
    let (dir, ws) = common::fixture_workspace();
    let r = run(&ws, "debugging-cot", "faulty-debugging", Partition::Validation);
    let al = fixtures::active_learning("debugging").unwrap();
    let ranking = ws.candidates(&r.manifest.run_id, None, None).unwrap();
    let cand = ranking.candidates.iter().find(|c| c.response_id == al.response.id).unwrap();
    let chains = cand
        .errors
        .iter()
        .map(|e| {
            let c = al.chain(&e.criterion_id).unwrap();
            ChainInput { slot: c.slot.clone(), text: c.text.clone(), citations: c.citations.clone() }
        })
        .collect();

    let snapshot = |p: &std::path::Path| -> BTreeMap<String, Vec<u8>> {
        walk(p).into_iter().filter(|(k, _)| !k.starts_with("runs/")).collect()
    };
    let before = snapshot(dir.path());
    let err = ws
        .promote(&PromotionRequest {
            run_id: r.manifest.run_id.clone(),
            response_id: al.response.id.clone(),
            chains,
            exemplar_id: Some("debugging-al".into()),
        })
        .unwrap_err();
    match err {
        WorkspaceError::Prompt(PromptError::TokenBudgetExceeded { overshoot, budget, ref largest, .. }) => {
            assert_eq!(budget, 8192);
            assert!(overshoot > 0);
            assert_eq!(largest[0].name, "few_shot");
        }
        other => panic!("expected budget error, got {other:?}"),
    }
    assert_eq!(err.code(), "TokenBudgetExceeded");
    assert_eq!(snapshot(dir.path()), before);
    assert_eq!(ws.active_version("debugging-cot").unwrap(), 1);
    assert!(!ws.store().unwrap().contains("debugging-al"));
}

fn walk(root: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        for entry in std::fs::read_dir(&p).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn ordinal_session(n: usize) -> (Rubric, IrrSession) {
    let r = rubric("engineering");
    let ids: Vec<String> = (0..n).map(|i| format!("e{i:03}")).collect();
    let s = IrrSession::open("s", "engineering", &r, &ids, 1.0, 0, ["ann".into(), "bo".into()]).unwrap();
    (r, s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn irr_gate_matches_kappa_oracle(pairs in prop::collection::vec((0i64..=4, 0i64..=4), 1..40)) {
        let (r, mut s) = ordinal_session(pairs.len());
        let ids = s.current().sampled_ids.clone();
        for (id, (a, b)) in ids.iter().zip(&pairs) {
            s.record_scores(&r, "ann", id, ScoreVector::ordinal(&r, *a).unwrap()).unwrap();
            s.record_scores(&r, "bo", id, ScoreVector::ordinal(&r, *b).unwrap()).unwrap();
        }
        let result = s.compute_kappa(&r).unwrap();
        let expected = common::oracle_kappa(&pairs, 0, 4);
        prop_assert!((result.kappa - expected).abs() < 1e-9);
        prop_assert!((result.qwk - common::oracle_qwk(&pairs, 0, 4)).abs() < 1e-9);
        prop_assert_eq!(result.consensus, expected >= KAPPA_GATE);
        prop_assert_eq!(s.status, if expected >= KAPPA_GATE { IrrStatus::Consensus } else { IrrStatus::NeedsResample });
        prop_assert_eq!(s.kappa_history.len(), 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn irr_sample_is_withheld_from_test(seed in 0u64..1000, fraction in 0.05f64..0.3) {
        let (_dir, ws) = common::fixture_workspace();
        let test_before = ws.stored_split("engineering").unwrap().unwrap().split.test.len();
        let s = ws.open_irr(&OpenIrrRequest {
            assessment_id: "engineering".into(),
            raters: ["ann".into(), "bo".into()],
            fraction: Some(fraction),
            seed,
        }).unwrap();
        let split = ws.stored_split("engineering").unwrap().unwrap();
        let test: BTreeSet<String> = split.split.test.iter().cloned().collect();
        prop_assert!(s.sampled_ids().is_disjoint(&test));
        prop_assert!(s.sampled_ids().is_subset(&split.spec.withheld_from_test));
        prop_assert_eq!(split.split.test.len(), test_before);
    }
}

#[test]
fn pooled_binary_kappa_uses_every_decision() {
    let r = rubric("rules");
    let ids: Vec<String> = (0..10).map(|i| format!("r{i}")).collect();
    let mut s = IrrSession::open("s", "rules", &r, &ids, 0.5, 3, ["ann".into(), "bo".into()]).unwrap();
    assert_eq!(s.current().sampled_ids.len(), 5);
    let sampled = s.current().sampled_ids.clone();
    let mut pairs = Vec::new();
    for (i, id) in sampled.iter().enumerate() {
        let a: BTreeMap<String, i64> = r.slots().iter().enumerate().map(|(j, s)| (s.to_string(), ((i + j) % 2) as i64)).collect();
        let mut b = a.clone();
        if i == 0 {
            b.insert("R1".into(), 1 - a["R1"]);
        }
        for slot in r.slots() {
            pairs.push((a[slot], b[slot]));
        }
        s.record_scores(&r, "ann", id, ScoreVector::new(&r, a).unwrap()).unwrap();
        s.record_scores(&r, "bo", id, ScoreVector::new(&r, b).unwrap()).unwrap();
    }
    let zeros = ScoreVector::new(&r, r.slots().iter().map(|s| (s.to_string(), 0)).collect()).unwrap();
    assert_eq!(s.record_scores(&r, "cy", &sampled[0], zeros.clone()), Err(IrrError::UnknownRater("cy".into())));
    assert_eq!(s.record_scores(&r, "ann", "elsewhere", zeros.clone()), Err(IrrError::NotSampled("elsewhere".into())));
    let result = s.compute_kappa(&r).unwrap();
    assert_eq!(result.pairs, 45);
    assert!((result.kappa - common::oracle_kappa(&pairs, 0, 1)).abs() < 1e-12);
    assert_eq!(result.per_criterion.len(), 9);
    assert_eq!(result.per_criterion["R2"], 1.0);
    assert_eq!(s.disagreements(), vec![(sampled[0].clone(), "R1".to_string())]);

    assert!(IrrSession::open("s", "rules", &r, &ids, 0.01, 0, ["a".into(), "b".into()]).is_err());
    assert_eq!(
        IrrSession::open("s", "rules", &r, &ids, 0.5, 0, ["a".into(), "a".into()]).unwrap_err(),
        IrrError::BadRaters
    );
}

#[test]
fn irr_workflow_with_sticking_point() {
    let (_dir, ws) = common::fixture_workspace();
    let session = ws
        .open_irr(&OpenIrrRequest {
            assessment_id: "rules".into(),
            raters: ["ann".into(), "bo".into()],
            fraction: None,
            seed: 5,
        })
        .unwrap();
    assert_eq!(session.id, "irr-rules-1");
    let sampled = session.current().sampled_ids.clone();
    assert_eq!(sampled.len(), 32);
    let responses = ws.responses("rules").unwrap();
    let human = |id: &String| responses.get(id).unwrap().human_scores.clone().unwrap();

    let ann: BTreeMap<_, _> = sampled.iter().map(|id| (id.clone(), human(id))).collect();
    // Bo disagrees on R3 for half the sample, which sinks kappa below the gate.
    let bo: BTreeMap<_, _> = sampled
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut h = human(id);
            if i % 2 == 0 {
                for slot in ["R3", "R6", "R9"] {
                    let v = h[slot];
                    h.insert(slot.into(), 1 - v);
                }
            }
            (id.clone(), h)
        })
        .collect();
    let half: BTreeMap<_, _> = ann.iter().take(10).map(|(k, v)| (k.clone(), v.clone())).collect();
    let s = ws.record_irr_scores(&session.id, &IrrScoresRequest { rater: "ann".into(), scores: half }).unwrap();
    assert_eq!(s.status, IrrStatus::Open);
    ws.record_irr_scores(&session.id, &IrrScoresRequest { rater: "ann".into(), scores: ann }).unwrap();
    let s = ws.record_irr_scores(&session.id, &IrrScoresRequest { rater: "bo".into(), scores: bo }).unwrap();
    let result = s.current().result.clone().unwrap();
    assert!(result.kappa < KAPPA_GATE, "kappa {}", result.kappa);
    assert_eq!(s.status, IrrStatus::NeedsResample);

    let (resp, slot) = s.disagreements()[0].clone();
    let guideline = "When a student names both quantities without saying which is larger, score the comparison 0.";
    let outcome = ws
        .resolve_irr(
            &session.id,
            &ResolutionRequest {
                response_id: resp.clone(),
                criterion_id: slot.clone(),
                consensus: 0,
                note: Some("Both quantities named, no comparison".into()),
                sticking_point: Some(StickingPointDraft {
                    description: "Comparison left implicit".into(),
                    resolution: String::new(),
                    guideline: Some(guideline.into()),
                    exemplar_id: None,
                }),
            },
        )
        .unwrap();
    let sp = outcome.sticking_point.unwrap();
    assert_eq!(sp.id, "sp-3");
    assert_eq!(sp.resolution, "Both quantities named, no comparison");
    assert_eq!(sp.source.as_ref().unwrap().response_id, resp);
    assert_eq!(outcome.resolution.sticking_point_id.as_deref(), Some("sp-3"));
    assert_eq!(ws.irr_session(&session.id).unwrap().resolutions.len(), 1);
    assert_eq!(ws.rubric("rules").unwrap().guidelines().last().map(String::as_str), Some(guideline));
    let guidelines = ws.render("rules-cot").unwrap();
    assert_eq!(guidelines.section(BlockKind::Guidelines).unwrap().matches(guideline).count(), 1);

    let again = ws.resolve_irr(
        &session.id,
        &ResolutionRequest { response_id: resp, criterion_id: slot, consensus: 0, note: None, sticking_point: None },
    );
    assert!(again.is_err());

    let resampled = ws.resample_irr(&session.id).unwrap();
    assert_eq!(resampled.rounds.len(), 2);
    assert_eq!(resampled.status, IrrStatus::Open);
    let split = ws.stored_split("rules").unwrap().unwrap();
    let test: BTreeSet<String> = split.split.test.iter().cloned().collect();
    assert!(resampled.sampled_ids().is_disjoint(&test));
    assert_eq!(split.split.test.len(), 32);
    assert_eq!(ws.irr_sessions().unwrap().len(), 1);
}
