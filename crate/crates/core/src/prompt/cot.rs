//! Chain-of-thought text for few-shot exemplars.

use thiserror::Error;

use crate::corpus::StudentResponse;

/// Default reasoning template. `{citation}`, `{clause}` and `{score}` are
/// substituted by [`render_cot`].
pub const DEFAULT_COT_TEMPLATE: &str = "The student says '{citation}'. The rubric states: {clause} \
Based on the rubric, the student earned a score of {score}.";

const VERDICT_MARKER: &str = "earned a score of ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CotError {
    #[error("citation {0:?} is not a verbatim substring of the response")]
    CitationNotFound(String),
    #[error("citation is empty")]
    EmptyCitation,
    #[error("rubric clause is empty")]
    EmptyRubricClause,
}

/// Fills the template after checking the citation against the response.
pub fn render_cot(
    template: &str,
    response: &StudentResponse,
    citation: &str,
    rubric_clause: &str,
    score: i64,
) -> Result<String, CotError> {
    if rubric_clause.trim().is_empty() {
        return Err(CotError::EmptyRubricClause);
    }
    if citation.is_empty() {
        return Err(CotError::EmptyCitation);
    }
    if !response.contains_verbatim(citation) {
        return Err(CotError::CitationNotFound(citation.to_string()));
    }
    Ok(template
        .replace("{citation}", citation)
        .replace("{clause}", rubric_clause.trim())
        .replace("{score}", &score.to_string()))
}

/// The score a reasoning text announces in its closing verdict, if any.
///
/// Looks for the last "earned a score of N" (case-insensitive).
pub fn stated_verdict(text: &str) -> Option<i64> {
    let lower = text.to_ascii_lowercase();
    let at = lower.rfind(VERDICT_MARKER)? + VERDICT_MARKER.len();
    let rest = &text[at..];
    let end = rest
        .char_indices()
        .find(|(i, c)| !(c.is_ascii_digit() || (*i == 0 && *c == '-')))
        .map(|(i, _)| i)
        .unwrap_or(rest.len());
    rest[..end].parse().ok()
}

/// Text spans a reasoning chain quotes from the student, delimited by
/// single quotes at word boundaries (`'like this'`).
pub fn quoted_spans(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'\'' {
            continue;
        }
        let prev_alnum = i > 0 && bytes[i - 1].is_ascii_alphanumeric();
        let next_alnum = i + 1 < bytes.len() && bytes[i + 1].is_ascii_alphanumeric();
        match open {
            None if !prev_alnum && i + 1 < bytes.len() && !bytes[i + 1].is_ascii_whitespace() => {
                open = Some(i + 1)
            }
            Some(start) if !next_alnum && i > start => {
                spans.push(&text[start..i]);
                open = None;
            }
            _ => {}
        }
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    fn morgan() -> StudentResponse {
        StudentResponse::new(
            "e-1",
            "engineering",
            [
                ("Answer", "No"),
                ("Explanation", "Morgan has different inches of rainfall, which means that it is not equal or fair."),
            ],
        )
    }

    #[test]
    fn renders_template() {
        let text = render_cot(
            DEFAULT_COT_TEMPLATE,
            &morgan(),
            "it is not equal or fair",
            "4 points: the designs cannot be compared and the tests are not fair.",
            4,
        )
        .unwrap();
        assert!(text.starts_with("The student says 'it is not equal or fair'. The rubric states: 4 points"));
        assert!(text.ends_with("Based on the rubric, the student earned a score of 4."));
        assert_eq!(stated_verdict(&text), Some(4));
    }

    #[test]
    fn rejects_missing_citation_and_clause() {
        assert_eq!(
            render_cot(DEFAULT_COT_TEMPLATE, &morgan(), "it is fair", "c", 4).unwrap_err(),
            CotError::CitationNotFound("it is fair".into())
        );
        assert_eq!(
            render_cot(DEFAULT_COT_TEMPLATE, &morgan(), "No", "  ", 1).unwrap_err(),
            CotError::EmptyRubricClause
        );
    }

    #[test]
    fn verdicts() {
        assert_eq!(stated_verdict("Based on the Rubric, the student earned a score of 2."), Some(2));
        assert_eq!(stated_verdict("no verdict here"), None);
        assert_eq!(
            stated_verdict("earned a score of 1 at first, but earned a score of 0"),
            Some(0)
        );
    }

    #[test]
    fn quotes_skip_apostrophes() {
        let t = "The student's answer says 'all is absorbed' and 'runoff is 0'. It's fine.";
        assert_eq!(quoted_spans(t), vec!["all is absorbed", "runoff is 0"]);
    }
}
