//! JSON-lines interchange files.
//!
//! One UTF-8 JSON object per line, keys in declaration order, floats written
//! with 17 significant digits so every `f64` survives a round trip.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, PartialRanking};
use crate::metrics::{MetricsError, ScoreTable};
use crate::trainer::LinearRewardModel;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
}

impl FormatError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(path: &Path, line: usize, message: impl ToString) -> Self {
        Self::Parse {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        }
    }
}

/// `printf("%.17g")`: 17 significant digits, trailing zeros dropped,
/// exponent notation outside `1e-4 <= |x| < 1e17`.
pub fn format_g17(x: f64) -> String {
    if !x.is_finite() {
        return "null".to_string();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.to_string();
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exponent) = sci.split_once('e').expect("exponent present");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if !(-4..17).contains(&exponent) {
        let mantissa = trim_fraction(mantissa);
        let sign = if exponent < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exponent.abs())
    } else {
        let decimals = (16 - exponent) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

struct G17;

impl serde_json::ser::Formatter for G17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_g17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        writer.write_all(format_g17(f64::from(value)).as_bytes())
    }
}

/// Compact single-line JSON with 17-digit floats.
pub fn to_json_line<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, G17);
    value
        .serialize(&mut ser)
        .expect("in-memory serialization of plain records");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn encode_lines<'a, T: Serialize + 'a>(records: impl IntoIterator<Item = &'a T>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&to_json_line(r));
        out.push('\n');
    }
    out
}

pub fn write_lines<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<(), FormatError> {
    fs::write(path, encode_lines(records)).map_err(|e| FormatError::io(path, e))
}

pub fn write_document<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = to_json_line(value);
    text.push('\n');
    fs::write(path, text).map_err(|e| FormatError::io(path, e))
}

/// Parses JSON lines, skipping blank lines. Line numbers in errors are 1-based.
pub fn decode_lines<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<(usize, T)>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map(|v| (i + 1, v))
                .map_err(|e| FormatError::parse(path, i + 1, e))
        })
        .collect()
}

pub fn read_numbered<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    decode_lines(path, &text)
}

pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    Ok(read_numbered(path)?.into_iter().map(|(_, v)| v).collect())
}

pub fn read_document<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FormatError::parse(path, e.line(), e))
}

/// On-disk form of a [`PartialRanking`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingLine {
    pub prompt_id: String,
    pub tiers: Vec<Vec<String>>,
    pub closure: Vec<(String, String)>,
}

impl From<&PartialRanking> for RankingLine {
    fn from(r: &PartialRanking) -> Self {
        Self {
            prompt_id: r.prompt_id.clone(),
            tiers: r.tiers.clone(),
            closure: r.closure.iter().cloned().collect(),
        }
    }
}

impl TryFrom<RankingLine> for PartialRanking {
    type Error = GraphError;

    fn try_from(line: RankingLine) -> Result<Self, GraphError> {
        PartialRanking::from_parts(line.prompt_id, line.tiers, line.closure)
    }
}

pub fn read_rankings(path: &Path) -> Result<Vec<PartialRanking>, FormatError> {
    read_numbered::<RankingLine>(path)?
        .into_iter()
        .map(|(line, r)| PartialRanking::try_from(r).map_err(|e| FormatError::parse(path, line, e)))
        .collect()
}

pub fn write_rankings(path: &Path, rankings: &[PartialRanking]) -> Result<(), FormatError> {
    let lines: Vec<RankingLine> = rankings.iter().map(RankingLine::from).collect();
    write_lines(path, &lines)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub prompt_id: String,
    pub response_id: String,
    pub score: f64,
}

/// Reads a score file. Repeated keys are reported as [`MetricsError`]s so the
/// caller can classify them as referential problems.
pub fn read_scores(path: &Path) -> Result<Result<ScoreTable<f64>, MetricsError>, FormatError> {
    let lines: Vec<ScoreLine> = read_lines(path)?;
    Ok(ScoreTable::from_entries(
        lines.into_iter().map(|l| (l.prompt_id, l.response_id, l.score)),
    ))
}

/// On-disk form of a [`LinearRewardModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub d: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl From<&LinearRewardModel<f64>> for ModelDocument {
    fn from(m: &LinearRewardModel<f64>) -> Self {
        Self {
            d: m.dim(),
            weights: m.weights.clone(),
            bias: m.bias,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{AnnotationRecord, Source, Verdict};
    use proptest::prelude::*;

    #[test]
    fn g17_matches_printf() {
        // Reference strings from C printf("%.17g").
        let cases = [
            (0.5, "0.5"),
            (1.0, "1"),
            (0.1, "0.10000000000000001"),
            (std::f64::consts::LN_2, "0.69314718055994529"),
            (-2.5e-7, "-2.4999999999999999e-07"),
            (1e17, "1e+17"),
            (123456.0, "123456"),
            (0.0001, "0.0001"),
            (2.0 / 3.0, "0.66666666666666663"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g17(x), want, "{x:e}");
        }
        assert_eq!(format_g17(0.0), "0");
        assert_eq!(format_g17(-0.0), "-0");
        let back: f64 = serde_json::from_str(&format_g17(-0.0)).unwrap();
        assert!(back == 0.0 && back.is_sign_negative());
    }

    #[test]
    fn annotation_line_is_bit_exact() {
        let a = AnnotationRecord::new("p1", "r1", "r2", Verdict::Tie, Source::Machine);
        assert_eq!(
            to_json_line(&a),
            r#"{"prompt_id":"p1","first":"r1","second":"r2","verdict":"tie","source":"machine"}"#
        );
    }

    #[test]
    fn ranking_line_layout() {
        let r = PartialRanking::from_parts(
            "p",
            vec![vec!["a".into()], vec!["b".into()]],
            [("a".to_string(), "b".to_string())],
        )
        .unwrap();
        assert_eq!(
            to_json_line(&RankingLine::from(&r)),
            r#"{"prompt_id":"p","tiers":[["a"],["b"]],"closure":[["a","b"]]}"#
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "{\"prompt_id\":\"p\",\"response_id\":\"a\",\"score\":1}\n\n{oops}\n";
        let err = decode_lines::<ScoreLine>(Path::new("s.jsonl"), text).unwrap_err();
        match err {
            FormatError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn g17_round_trips(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let line = ScoreLine { prompt_id: "p".into(), response_id: "r".into(), score: x };
            let back: ScoreLine = serde_json::from_str(&to_json_line(&line)).unwrap();
            prop_assert_eq!(back.score.to_bits(), x.to_bits());
        }
    }
}
