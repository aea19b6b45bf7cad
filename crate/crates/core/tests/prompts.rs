mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use cotscore_core::corpus::{Exemplar, ExemplarKind, StudentResponse};
use cotscore_core::fixtures;
use cotscore_core::prompt::block_code::{BlockCodeListing, CodeLine};
use cotscore_core::prompt::cot::{quoted_spans, stated_verdict};
use cotscore_core::prompt::{
    encode_block_code, render_cot, BlockKind, CotError, ListingError, PromptConfig, PromptError,
    DEFAULT_COT_TEMPLATE,
};
use cotscore_core::workspace::{Workspace, WorkspaceError};
use sha2::{Digest, Sha256};

const COT_CONFIGS: [&str; 3] = ["rules-cot", "debugging-cot", "engineering-cot"];

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.txt"))
}

fn sums_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/SHA256SUMS")
}

fn sums() -> BTreeMap<String, String> {
    let text = std::fs::read_to_string(sums_path()).unwrap_or_default();
    text.lines()
        .filter_map(|l| l.split_once("  "))
        .map(|(h, f)| (f.to_string(), h.to_string()))
        .collect()
}

/// Set `UPDATE_GOLDEN=1` to rewrite the golden prompts after an intended change.
#[test]
fn rendered_prompts_match_golden_files() {
    let (_dir, ws) = common::fixture_workspace();
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut lines = Vec::new();
    for name in COT_CONFIGS {
        let prompt = ws.render(name).unwrap();
        let digest = hex::encode(Sha256::digest(prompt.text.as_bytes()));
        let file = format!("{name}.txt");
        if update {
            std::fs::write(golden_path(name), &prompt.text).unwrap();
        } else {
            let golden = std::fs::read_to_string(golden_path(name)).unwrap();
            assert_eq!(prompt.text, golden, "{name} drifted from its golden file");
            assert_eq!(sums().get(&file), Some(&digest), "{name} hash is not pinned");
        }
        lines.push(format!("{digest}  {file}"));
    }
    if update {
        std::fs::write(sums_path(), lines.join("\n") + "\n").unwrap();
    }
}

#[test]
fn rendering_is_deterministic() {
    let (_dir, ws) = common::fixture_workspace();
    for name in COT_CONFIGS {
        let first = ws.render(name).unwrap();
        for _ in 0..100 {
            assert_eq!(ws.render(name).unwrap(), first);
        }
    }
    let (_other, ws2) = common::fixture_workspace();
    for name in COT_CONFIGS {
        assert_eq!(ws.render(name).unwrap(), ws2.render(name).unwrap());
    }
}

#[test]
fn sections_follow_canonical_order() {
    let (_dir, ws) = common::fixture_workspace();
    for summary in ws.configs().unwrap() {
        let prompt = ws.render(&summary.name).unwrap();
        let kinds = prompt.kinds();
        let positions: Vec<usize> = kinds
            .iter()
            .map(|k| BlockKind::CANONICAL.iter().position(|c| c == k).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{}: {kinds:?}", summary.name);
        let mut heading_at = Vec::new();
        for k in &kinds {
            let at = prompt.text.find(&format!("{}\n", k.heading())).unwrap();
            heading_at.push(at);
            assert!(prompt.section(*k).unwrap().starts_with(k.heading()));
        }
        assert!(heading_at.windows(2).all(|w| w[0] < w[1]));
        assert!(prompt.text.starts_with("# Role\n"));
    }
}

#[test]
fn every_guideline_appears_once() {
    let (_dir, ws) = common::fixture_workspace();
    for name in COT_CONFIGS {
        let resolved = ws.resolve(name).unwrap();
        let prompt = ws.render(name).unwrap();
        let section = prompt.section(BlockKind::Guidelines).unwrap_or("");
        for g in resolved.rubric.guidelines() {
            assert_eq!(section.matches(g.trim()).count(), 1, "{name}: {g}");
        }
    }
}

#[test]
fn exemplar_citations_are_verbatim_in_prompt() {
    let (_dir, ws) = common::fixture_workspace();
    for name in COT_CONFIGS {
        let resolved = ws.resolve(name).unwrap();
        let prompt = ws.render(name).unwrap();
        assert_eq!(prompt.exemplars.len(), resolved.exemplars.len());
        for (span, e) in prompt.exemplars.iter().zip(&resolved.exemplars) {
            assert_eq!(span.exemplar_id, e.id);
            let body = &prompt.text[span.start..span.end];
            assert!(body.starts_with("## Example "));
            assert!(body.contains(&format!("({})", e.kind.label())));
            for chain in &e.chains {
                let escaped = serde_json::to_string(&chain.text).unwrap();
                assert!(body.contains(&escaped[1..escaped.len() - 1]), "{}: chain for {} not rendered", e.id, chain.slot);
                let spans = quoted_spans(&chain.text);
                for c in &chain.citations {
                    assert!(e.response.contains_verbatim(c), "{}: {c}", e.id);
                    assert!(spans.contains(&c.as_str()), "{}: citation {c} is not quoted", e.id);
                }
                assert_eq!(stated_verdict(&chain.text), Some(e.labels.values[&chain.slot]));
            }
        }
    }
}

#[test]
fn baselines_are_minimal() {
    let (_dir, ws) = common::fixture_workspace();
    for task in fixtures::TASKS {
        let prompt = ws.render(&format!("{task}-baseline")).unwrap();
        assert!(!prompt.kinds().contains(&BlockKind::FewShot));
        assert!(!prompt.kinds().contains(&BlockKind::Guidelines));
        assert!(!prompt.text.contains("Gold-standard response"));
        assert!(prompt.estimated_tokens < ws.render(&format!("{task}-cot")).unwrap().estimated_tokens);
    }
}

#[test]
fn debugging_prompt_carries_the_encoded_listing() {
    let (_dir, ws) = common::fixture_workspace();
    let prompt = ws.render("debugging-cot").unwrap();
    let code = prompt.section(BlockKind::MetaLanguage).unwrap();
    let listing = ws.assessment("debugging").unwrap().code_listing.unwrap();
    for line in &listing.lines {
        let expected = format!("{}{}  # Line {}", "\t".repeat(line.indent as usize), line.text, line.line_number);
        assert!(code.contains(&expected), "missing {expected:?}");
    }
    assert!(code.contains("Lines 3, 7, 10, and 12 are green"));
    let context = prompt.section(BlockKind::ContextManager).unwrap();
    assert!(context.contains("Related task rules"));
}

#[test]
fn sticking_point_guideline_reaches_the_prompt() {
    let (dir, ws) = common::fixture_workspace();
    let before = ws.render("rules-cot").unwrap();
    let guideline = "Treat a runoff value written as a dash the same as zero.";
    assert!(!before.text.contains(guideline));
    let sp_dir = dir.path().join("rubrics/rules.sticking_points");
    std::fs::create_dir_all(&sp_dir).unwrap();
    let sp = serde_json::json!({
        "id": "sp-9",
        "rubric_id": "rules",
        "description": "Dash used for zero runoff",
        "affected_criteria": ["R3"],
        "resolution": "Dash counts as zero",
        "guideline": guideline,
    });
    std::fs::write(sp_dir.join("sp-9.json"), sp.to_string()).unwrap();
    let ws = Workspace::open(dir.path()).unwrap();
    let after = ws.render("rules-cot").unwrap();
    let section = after.section(BlockKind::Guidelines).unwrap();
    assert_eq!(section.matches(guideline).count(), 1);
    assert_ne!(after.config_hash, before.config_hash);
}

#[test]
fn over_budget_reports_the_largest_parts() {
    let (_dir, ws) = common::fixture_workspace();
    let mut cfg = ws.active_config("rules-cot").unwrap();
    cfg.token_budget = 1000;
    let err = ws.resolve_config(&cfg).and_then(|r| {
        cotscore_core::prompt::render_resolved(&r, &cotscore_core::prompt::CharHeuristic).map_err(Into::into)
    });
    match err {
        Err(WorkspaceError::Prompt(PromptError::TokenBudgetExceeded { estimated, reserve, budget, overshoot, largest })) => {
            assert_eq!(budget, 1000);
            assert_eq!(overshoot, estimated + reserve - budget);
            assert_eq!(largest.len(), 3);
            assert!(largest.windows(2).all(|w| w[0].tokens >= w[1].tokens));
            assert_eq!(largest[0].name, "few_shot");
        }
        other => panic!("expected budget error, got {other:?}"),
    }
}

#[test]
fn unbalanced_exemplars_are_refused() {
    let (_dir, ws) = common::fixture_workspace();
    let mut cfg = ws.active_config("engineering-cot").unwrap();
    cfg.exemplar_ids.retain(|id| id != "engineering-2");
    let resolved = ws.resolve_config(&cfg).unwrap();
    let err = cotscore_core::prompt::render_resolved(&resolved, &cotscore_core::prompt::CharHeuristic).unwrap_err();
    assert!(matches!(err, PromptError::Unbalanced(ref v) if v.len() == 1));
    cfg.allow_unbalanced = true;
    let resolved = ws.resolve_config(&cfg).unwrap();
    assert!(cotscore_core::prompt::render_resolved(&resolved, &cotscore_core::prompt::CharHeuristic).is_ok());
}

#[test]
fn config_validation() {
    let text = fixtures::file("configs/rules-cot.toml").unwrap();
    let good = PromptConfig::parse(text).unwrap();
    assert_eq!(PromptConfig::parse(&good.to_toml()).unwrap(), good);

    let mut shuffled = good.clone();
    shuffled.block_order.swap(0, 1);
    assert!(matches!(shuffled.validate(), Err(PromptError::InvalidConfig(_))));

    let mut missing = good.clone();
    missing.block_order.retain(|k| *k != BlockKind::OutputTemplate);
    assert!(matches!(missing.validate(), Err(PromptError::InvalidConfig(_))));

    let mut dup = good.clone();
    dup.exemplar_ids.push(dup.exemplar_ids[0].clone());
    assert!(matches!(dup.validate(), Err(PromptError::InvalidConfig(_))));

    let mut schema = good;
    schema.output_schema = "[]".into();
    assert!(matches!(schema.validate(), Err(PromptError::InvalidConfig(_))));
}

fn line(n: u32, indent: u32, text: &str, color: Option<&str>) -> CodeLine {
    CodeLine { line_number: n, indent, text: text.into(), color: color.map(str::to_string) }
}

#[test]
fn block_code_encoding() {
    let listing = BlockCodeListing {
        lines: vec![
            line(1, 0, "when green flag clicked", None),
            line(2, 0, "if <[Rainfall (inch)] > [Absorption Limit (inch)]>", Some("green")),
            line(3, 1, "set [Runoff (inch)] to ([Rainfall (inch)] - [Absorption (inch)])", None),
            line(4, 0, "if <[Rainfall (inch)] < [Absorption Limit (inch)]>", Some("green")),
            line(5, 1, "set [Runoff (inch)] to [0]", Some("orange")),
        ],
    };
    let text = encode_block_code(&listing).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "when green flag clicked  # Line 1");
    assert_eq!(lines[2], "\tset [Runoff (inch)] to ([Rainfall (inch)] - [Absorption (inch)])  # Line 3");
    assert_eq!(lines[4], "\tset [Runoff (inch)] to [0]  # Line 5");
    assert_eq!(lines[5], "");
    let legend = lines[6];
    assert!(legend.contains("Lines 2 and 4 are green"));
    assert!(legend.contains("Line 5 is orange"));
    assert!(legend.contains("Rule 1 is the 'if' statement on Line 2; Rule 2 is the 'if' statement on Line 4."));
    assert_eq!(encode_block_code(&listing).unwrap(), text);

    let jump = BlockCodeListing { lines: vec![line(1, 0, "a", None), line(2, 2, "b", None)] };
    assert_eq!(encode_block_code(&jump), Err(ListingError::IndentJump(2)));
    let order = BlockCodeListing { lines: vec![line(3, 0, "a", None), line(3, 0, "b", None)] };
    assert!(matches!(encode_block_code(&order), Err(ListingError::NonMonotonicLineNumbers { .. })));
    let tab = BlockCodeListing { lines: vec![line(1, 0, "a\tb", None)] };
    assert_eq!(encode_block_code(&tab), Err(ListingError::BadLineText(1)));
}

#[test]
fn cot_template_filling() {
    let r = StudentResponse::new("x", "rules", [("Response", "runoff is none when it is equal")]);
    let text = render_cot(DEFAULT_COT_TEMPLATE, &r, "runoff is none", "Runoff is zero when equal.", 1).unwrap();
    assert_eq!(
        text,
        "The student says 'runoff is none'. The rubric states: Runoff is zero when equal. \
         Based on the rubric, the student earned a score of 1."
    );
    assert_eq!(stated_verdict(&text), Some(1));
    assert_eq!(quoted_spans(&text), vec!["runoff is none"]);
    assert_eq!(
        render_cot(DEFAULT_COT_TEMPLATE, &r, "runoff is zero", "c", 1),
        Err(CotError::CitationNotFound("runoff is zero".into()))
    );
    assert_eq!(render_cot(DEFAULT_COT_TEMPLATE, &r, "", "c", 1), Err(CotError::EmptyCitation));
    assert_eq!(render_cot(DEFAULT_COT_TEMPLATE, &r, "runoff", " ", 1), Err(CotError::EmptyRubricClause));
}

#[test]
fn exemplar_kinds_have_labels() {
    for kind in [ExemplarKind::GroundTruth, ExemplarKind::StickingPoint, ExemplarKind::Balance, ExemplarKind::ActiveLearning] {
        assert_eq!(ExemplarKind::from_label(kind.label()), Some(kind));
    }
    let al: Exemplar = fixtures::active_learning("rules").unwrap();
    assert_eq!(al.kind, ExemplarKind::ActiveLearning);
}
