//! Plain-text encoding of block-based programs.
//!
//! Each block becomes one line: nesting is shown with leading tabs, variable
//! and constant slots stay in square brackets, and every line ends with a
//! `# Line N` comment so the model can resolve references to line numbers.
//! A legend paragraph follows the code and explains line numbers, block
//! colors, and which `if` statement corresponds to which numbered rule.

use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
pub struct CodeLine {
    pub line_number: u32,
    #[serde(default)]
    pub indent: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
pub struct BlockCodeListing {
    pub lines: Vec<CodeLine>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ListingError {
    #[error("line number {found} does not follow {previous}")]
    NonMonotonicLineNumbers { previous: u32, found: u32 },
    #[error("line {0} is nested more than one level deeper than the line before it")]
    IndentJump(u32),
    #[error("line {0} text must be nonempty, single-line, without tabs or surrounding whitespace")]
    BadLineText(u32),
    #[error("line {0} has an empty or multi-line color tag")]
    BadColor(u32),
}

impl BlockCodeListing {
    pub fn validate(&self) -> Result<(), ListingError> {
        let mut prev: Option<&CodeLine> = None;
        for line in &self.lines {
            if let Some(p) = prev {
                if line.line_number <= p.line_number {
                    return Err(ListingError::NonMonotonicLineNumbers {
                        previous: p.line_number,
                        found: line.line_number,
                    });
                }
                if line.indent > p.indent + 1 {
                    return Err(ListingError::IndentJump(line.line_number));
                }
            } else if line.indent > 1 {
                return Err(ListingError::IndentJump(line.line_number));
            }
            let t = &line.text;
            if t.is_empty() || t.trim() != t || t.contains(['\n', '\r', '\t']) {
                return Err(ListingError::BadLineText(line.line_number));
            }
            if let Some(c) = &line.color {
                if c.trim().is_empty() || c.trim() != c || c.contains(['\n', '\r', '.', ',']) {
                    return Err(ListingError::BadColor(line.line_number));
                }
            }
            prev = Some(line);
        }
        Ok(())
    }
}

fn render_line(line: &CodeLine) -> String {
    format!(
        "{}{}  # Line {}",
        "\t".repeat(line.indent as usize),
        line.text,
        line.line_number
    )
}

fn join_numbers(nums: &[u32]) -> String {
    let parts: Vec<String> = nums.iter().map(u32::to_string).collect();
    match parts.len() {
        0 => String::new(),
        1 => parts[0].clone(),
        2 => format!("{} and {}", parts[0], parts[1]),
        n => format!("{}, and {}", parts[..n - 1].join(", "), parts[n - 1]),
    }
}

fn legend(listing: &BlockCodeListing) -> String {
    let mut out = String::from(
        "How to read the code above: each line ends with a comment giving its line number \
         (for example `# Line 3`), because students often point at code by line number. \
         Tabs show nesting: a line indented one tab further than the line above it sits inside \
         that block. Words in square brackets are variables or constants.",
    );

    let mut by_color: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for line in &listing.lines {
        if let Some(c) = &line.color {
            by_color.entry(c.as_str()).or_default().push(line.line_number);
        }
    }
    for (color, nums) in &by_color {
        if nums.len() == 1 {
            out.push_str(&format!(" Line {} is {color} in the original picture of the code.", nums[0]));
        } else {
            out.push_str(&format!(
                " Lines {} are {color} in the original picture of the code.",
                join_numbers(nums)
            ));
        }
    }

    let ifs: Vec<u32> = listing
        .lines
        .iter()
        .filter(|l| l.text.starts_with("if "))
        .map(|l| l.line_number)
        .collect();
    if !ifs.is_empty() {
        out.push_str(" Students may call each 'if' statement a \"rule\", numbered in order:");
        let rules: Vec<String> = ifs
            .iter()
            .enumerate()
            .map(|(i, n)| format!(" Rule {} is the 'if' statement on Line {n}", i + 1))
            .collect();
        out.push_str(&rules.join(";"));
        out.push('.');
    }
    out
}

/// Renders a validated listing followed by its legend.
pub fn encode_block_code(listing: &BlockCodeListing) -> Result<String, ListingError> {
    listing.validate()?;
    let body: Vec<String> = listing.lines.iter().map(render_line).collect();
    let legend = legend(listing);
    if body.is_empty() {
        Ok(legend)
    } else {
        Ok(format!("{}\n\n{}", body.join("\n"), legend))
    }
}
