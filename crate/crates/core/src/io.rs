//! Text formats read from untrusted files.
//!
//! A dataset is one vector per line, components separated by commas and/or
//! whitespace; `#` starts a comment and blank lines are skipped. Score maps
//! travel as JSON `{"height": H, "width": W, "maps": [[...], ...]}` with each
//! map row-major.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridDims, GridError, ScoreMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("map {index}: {source}")]
    Map { index: usize, source: GridError },
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub fn parse_dataset(text: &str) -> Result<Vec<Vec<f64>>, ParseError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| ParseError::Line {
            line: i + 1,
            message,
        };
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(err(format!("non-finite value {t:?}"))),
                Err(_) => Err(err(format!("not a number: {t:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if row.is_empty() {
            return Err(err("no values".into()));
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(err(format!(
                    "expected {} values, found {}",
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ParseError::Empty);
    }
    Ok(rows)
}

pub fn format_dataset(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().map(f64::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreMapsDoc {
    pub height: usize,
    pub width: usize,
    pub maps: Vec<Vec<f64>>,
}

impl ScoreMapsDoc {
    pub fn from_maps(maps: &[ScoreMap]) -> Option<Self> {
        let d = maps.first()?.dims();
        Some(Self {
            height: d.height(),
            width: d.width(),
            maps: maps.iter().map(|m| m.values().to_vec()).collect(),
        })
    }

    pub fn into_maps(self) -> Result<Vec<ScoreMap>, ParseError> {
        let dims = GridDims::spatial(self.height, self.width)?;
        self.maps
            .into_iter()
            .enumerate()
            .map(|(index, v)| {
                ScoreMap::new(dims, v).map_err(|source| ParseError::Map { index, source })
            })
            .collect()
    }
}

pub fn parse_score_maps(text: &str) -> Result<Vec<ScoreMap>, ParseError> {
    let doc: ScoreMapsDoc =
        serde_json::from_str(text).map_err(|e| ParseError::Json(e.to_string()))?;
    doc.into_maps()
}
