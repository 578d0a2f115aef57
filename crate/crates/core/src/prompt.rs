//! Prompt rendering in the marker template and the equivalent prose layout.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::bench::{synthesize_from_header, BenchmarkTask};
use crate::corpus::{serialize, TrainingInstance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Header,
    Caller,
    Nl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Structured,
    Natural,
}

impl std::str::FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(Style::Structured),
            "natural" => Ok(Style::Natural),
            _ => Err(Error::Config(format!("unknown prompt style {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NTest {
    Count(usize),
    All,
}

impl std::str::FromStr for NTest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(NTest::All),
            n => match n.parse::<usize>() {
                Ok(k @ 1..) => Ok(NTest::Count(k)),
                _ => Err(Error::Config(format!("n-test must be a positive integer or \"all\", got {s:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeHint {
    pub top_p: f64,
    pub temperature: f64,
}

impl Default for DecodeHint {
    fn default() -> Self {
        DecodeHint {
            top_p: 0.95,
            temperature: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub fields: BTreeSet<Field>,
    pub style: Style,
    pub n_test: NTest,
    pub decode_hint: DecodeHint,
    /// Fill a missing caller with a synthesized minimal invocation.
    pub synthesize_missing: bool,
}

impl PromptConfig {
    /// Parse `header`, `header+nl`, `header+caller`, or `header+caller+nl`.
    pub fn parse_fields(text: &str) -> Result<BTreeSet<Field>> {
        let mut fields = BTreeSet::new();
        for part in text.split('+') {
            let f = match part.trim().to_ascii_lowercase().as_str() {
                "header" => Field::Header,
                "caller" => Field::Caller,
                "nl" => Field::Nl,
                other => return Err(Error::Config(format!("unknown prompt field {other:?}"))),
            };
            fields.insert(f);
        }
        if !fields.contains(&Field::Header) {
            return Err(Error::Config("the header field is always required".into()));
        }
        Ok(fields)
    }

    pub fn new(fields: &str, style: Style, n_test: NTest) -> Result<Self> {
        Ok(PromptConfig {
            fields: Self::parse_fields(fields)?,
            style,
            n_test,
            decode_hint: DecodeHint::default(),
            synthesize_missing: false,
        })
    }

    pub fn name(&self) -> String {
        let mut parts = vec!["header"];
        if self.fields.contains(&Field::Caller) {
            parts.push("caller");
        }
        if self.fields.contains(&Field::Nl) {
            parts.push("nl");
        }
        parts.join("+")
    }

    fn caller_on(&self) -> bool {
        self.fields.contains(&Field::Caller)
    }

    fn nl_on(&self) -> bool {
        self.fields.contains(&Field::Nl)
    }
}

/// Caller text with its location, used for ordering.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PromptCaller {
    pub path: String,
    pub line: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptInput {
    pub id: String,
    pub header: String,
    pub callers: Vec<PromptCaller>,
    pub docstring: Option<String>,
}

impl From<&BenchmarkTask> for PromptInput {
    fn from(t: &BenchmarkTask) -> Self {
        PromptInput {
            id: t.task_id.clone(),
            header: t.target.header.clone(),
            callers: t
                .callers
                .iter()
                .map(|c| PromptCaller {
                    path: c.path.clone(),
                    line: c.line,
                    text: c.text.clone(),
                })
                .collect(),
            docstring: t.nl_description.clone(),
        }
    }
}

impl From<&TrainingInstance> for PromptInput {
    fn from(t: &TrainingInstance) -> Self {
        PromptInput {
            id: t.id.clone(),
            header: t.header.clone(),
            callers: t
                .callers
                .iter()
                .enumerate()
                .map(|(i, text)| PromptCaller {
                    path: String::new(),
                    line: i,
                    text: text.clone(),
                })
                .collect(),
            docstring: Some(t.docstring.clone()).filter(|d| !d.is_empty()),
        }
    }
}

/// Callers in path/line order, truncated to n_test.
fn selected_callers(input: &PromptInput, config: &PromptConfig) -> Result<Vec<String>> {
    if !config.caller_on() {
        return Ok(Vec::new());
    }
    let mut callers = input.callers.clone();
    callers.sort();
    if callers.is_empty() {
        if !config.synthesize_missing {
            return Err(Error::MissingCaller(input.id.clone()));
        }
        return Ok(vec![synthesize_from_header(&input.header)?.text]);
    }
    let take = match config.n_test {
        NTest::Count(k) => k,
        NTest::All => callers.len(),
    };
    Ok(callers.into_iter().take(take).map(|c| c.text).collect())
}

fn docstring(input: &PromptInput, config: &PromptConfig) -> Option<String> {
    input
        .docstring
        .clone()
        .filter(|d| config.nl_on() && !d.trim().is_empty())
}

pub fn render_structured(input: &PromptInput, config: &PromptConfig) -> Result<String> {
    let callers = selected_callers(input, config)?;
    Ok(serialize(&input.header, &callers, &docstring(input, config).unwrap_or_default()))
}

pub const INSTRUCTION: &str = "You are an expert Python programmer. You will be given the header of a function, the body of a function that calls it, and a natural language description explaining what the code should do. Your task is to implement the function so that it integrates correctly with the caller and matches the description. The implementation should be efficient, robust, and handle edge cases. Do not include explanations in your response.";

fn fenced(lang: &str, body: &str) -> String {
    format!("```{lang}\n{}\n```\n", body.trim_end_matches('\n'))
}

pub fn render_natural(input: &PromptInput, config: &PromptConfig) -> Result<String> {
    let callers = selected_callers(input, config)?;
    let mut s = format!("Task:\n{INSTRUCTION}\n");
    if !callers.is_empty() {
        s.push_str("\nCaller Context:\n");
        for (i, c) in callers.iter().enumerate() {
            s.push_str(&format!("Caller {}:\n", i + 1));
            s.push_str(&fenced("python", c));
        }
    }
    s.push_str("\nTarget Function:\n");
    s.push_str(&fenced("python", &input.header));
    if let Some(d) = docstring(input, config) {
        s.push_str("\nDocstring:\n");
        s.push_str(&fenced("", &d));
    }
    Ok(s)
}

pub fn render(input: &PromptInput, config: &PromptConfig) -> Result<String> {
    match config.style {
        Style::Structured => render_structured(input, config),
        Style::Natural => render_natural(input, config),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub task_id: String,
    pub config: String,
    pub text: String,
    pub decode_hint: DecodeHint,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(n: usize, doc: Option<&str>) -> PromptInput {
        PromptInput {
            id: "t".into(),
            header: "def f(x):".into(),
            callers: (0..n)
                .rev()
                .map(|i| PromptCaller {
                    path: format!("m{i}.py"),
                    line: 1,
                    text: format!("def c{i}():\n    f({i})"),
                })
                .collect(),
            docstring: doc.map(String::from),
        }
    }

    fn cfg(fields: &str, style: Style, n: NTest) -> PromptConfig {
        PromptConfig::new(fields, style, n).unwrap()
    }

    #[test]
    fn structured_header_only() {
        let t = render(&input(2, Some("Doc.")), &cfg("header", Style::Structured, NTest::All)).unwrap();
        assert_eq!(t, "<func>\ndef f(x):\n<calledby>\n\n<docstring>\n\n");
    }

    #[test]
    fn n_test_orders_and_truncates() {
        let t = render(&input(3, None), &cfg("header+caller", Style::Structured, NTest::Count(2))).unwrap();
        assert!(t.contains("def c0():\n    f(0)\n\ndef c1():\n    f(1)\n<docstring>"));
        assert!(!t.contains("c2"));
        let one = cfg("header+caller", Style::Natural, NTest::Count(1));
        let all = cfg("header+caller", Style::Natural, NTest::All);
        assert_eq!(render(&input(1, None), &one).unwrap(), render(&input(1, None), &all).unwrap());
    }

    #[test]
    fn natural_blocks() {
        let t = render(&input(1, Some("Doc.")), &cfg("header+nl", Style::Natural, NTest::All)).unwrap();
        assert!(t.starts_with("Task:\nYou are an expert Python programmer."));
        assert!(!t.contains("Caller"));
        assert!(t.contains("Target Function:\n```python\ndef f(x):\n```\n"));
        assert!(t.contains("Docstring:\n```\nDoc.\n```\n"));
        let full = cfg("header+caller+nl", Style::Natural, NTest::All);
        let a = render(&input(2, Some("Doc.")), &full).unwrap();
        assert!(a.contains("Caller Context:\nCaller 1:\n```python\ndef c0()"));
        assert!(a.contains("Caller 2:"));
        assert_eq!(a, render(&input(2, Some("Doc.")), &full).unwrap());
    }

    #[test]
    fn missing_caller() {
        let c = cfg("header+caller", Style::Structured, NTest::All);
        assert!(matches!(render(&input(0, None), &c), Err(Error::MissingCaller(_))));
        let mut s = c.clone();
        s.synthesize_missing = true;
        assert!(render(&input(0, None), &s).unwrap().contains("_r = f(None)"));
    }

    #[test]
    fn field_parsing() {
        assert!(PromptConfig::parse_fields("caller+nl").is_err());
        assert!(PromptConfig::parse_fields("header+bogus").is_err());
        assert_eq!(cfg("header+nl+caller", Style::Natural, NTest::All).name(), "header+caller+nl");
        assert!("0".parse::<NTest>().is_err());
    }
}
