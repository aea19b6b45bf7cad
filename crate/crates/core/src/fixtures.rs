//! Shipped fixture data: the three task rubrics, assessments, exemplars,
//! response sets, prompt configs and providers.

use crate::corpus::Exemplar;

pub struct FixtureFile {
    /// Path relative to the fixture root, e.g. `rubrics/rules.toml`.
    pub path: &'static str,
    pub text: &'static str,
}

macro_rules! fixture {
    ($path:literal) => {
        FixtureFile {
            path: $path,
            text: include_str!(concat!("../fixtures/", $path)),
        }
    };
}

pub const FILES: &[FixtureFile] = &[
    fixture!("active_learning/debugging-al.json"),
    fixture!("active_learning/engineering-al.json"),
    fixture!("active_learning/rules-al.json"),
    fixture!("assessments/debugging.toml"),
    fixture!("assessments/engineering.toml"),
    fixture!("assessments/rules.toml"),
    fixture!("configs/debugging-baseline.toml"),
    fixture!("configs/debugging-cot.toml"),
    fixture!("configs/engineering-baseline.toml"),
    fixture!("configs/engineering-cot.toml"),
    fixture!("configs/rules-baseline.toml"),
    fixture!("configs/rules-cot.toml"),
    fixture!("exemplars/debugging-balance-1.json"),
    fixture!("exemplars/debugging-balance-2.json"),
    fixture!("exemplars/debugging-gt.json"),
    fixture!("exemplars/debugging-lines.json"),
    fixture!("exemplars/debugging-sp-ambiguous.json"),
    fixture!("exemplars/debugging-sp-conflation.json"),
    fixture!("exemplars/engineering-0.json"),
    fixture!("exemplars/engineering-1.json"),
    fixture!("exemplars/engineering-2.json"),
    fixture!("exemplars/engineering-3.json"),
    fixture!("exemplars/engineering-4.json"),
    fixture!("exemplars/rules-balance.json"),
    fixture!("exemplars/rules-gt.json"),
    fixture!("exemplars/rules-sp-minus.json"),
    fixture!("exemplars/rules-sp-none.json"),
    fixture!("providers/echo.toml"),
    fixture!("providers/faulty-debugging.toml"),
    fixture!("providers/faulty-rules.toml"),
    fixture!("providers/openai.toml"),
    fixture!("responses/debugging.jsonl"),
    fixture!("responses/engineering.jsonl"),
    fixture!("responses/rules.jsonl"),
    fixture!("rubrics/debugging.toml"),
    fixture!("rubrics/engineering.toml"),
    fixture!("rubrics/rules.toml"),
    fixture!("sticking_points/debugging/sp-1.json"),
    fixture!("sticking_points/debugging/sp-2.json"),
    fixture!("sticking_points/rules/sp-1.json"),
    fixture!("sticking_points/rules/sp-2.json"),
];

/// The three assessment ids the fixtures cover.
pub const TASKS: [&str; 3] = ["rules", "debugging", "engineering"];

pub fn file(path: &str) -> Option<&'static str> {
    FILES.iter().find(|f| f.path == path).map(|f| f.text)
}

/// Files under `dir/`, as (file name, text) pairs in name order.
pub fn dir(dir: &str) -> Vec<(&'static str, &'static str)> {
    FILES
        .iter()
        .filter_map(|f| {
            let rest = f.path.strip_prefix(dir)?.strip_prefix('/')?;
            Some((rest, f.text))
        })
        .collect()
}

/// The active-learning exemplar prepared for `task`. These are not installed
/// into a workspace; they are the documents a promotion would add.
pub fn active_learning(task: &str) -> Option<Exemplar> {
    let text = file(&format!("active_learning/{task}-al.json"))?;
    Some(serde_json::from_str(text).expect("fixture exemplar parses"))
}
