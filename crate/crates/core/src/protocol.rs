//! Response grammar, parser and format reward.
//!
//! A response is exactly
//!
//! ```text
//! <think>REASONING</think><answer>[[x1,y1],[x2,y2],...]</answer>
//! ```
//!
//! with no text before `<think>` or after `</answer>`. The reasoning text is
//! opaque and never inspected. The answer array holds between 1 and `n_max`
//! pairs of finite numbers, in generation order.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

use crate::geometry::Point;

/// Default cap on the number of candidate points in one response.
pub const DEFAULT_N_MAX: usize = 8;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum FormatError {
    #[error("missing or malformed <think> block")]
    MissingThink,
    #[error("missing or malformed <answer> block")]
    MissingAnswer,
    #[error("answer is not an array of finite [x, y] pairs")]
    BadNumber,
    #[error("answer contains no points")]
    EmptySet,
    #[error("answer contains more than n_max points")]
    TooMany,
}

/// Ordered candidate points; rank 1 is the first point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct CandidateSet(Vec<Point>);

impl CandidateSet {
    pub fn new(points: Vec<Point>) -> Result<Self, FormatError> {
        if points.is_empty() {
            return Err(FormatError::EmptySet);
        }
        if !points.iter().all(Point::is_finite) {
            return Err(FormatError::BadNumber);
        }
        Ok(Self(points))
    }

    pub fn points(&self) -> &[Point] {
        &self.0
    }

    /// Number of candidates, `N`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> Point {
        self.0[0]
    }
}

impl TryFrom<Vec<Point>> for CandidateSet {
    type Error = FormatError;
    fn try_from(points: Vec<Point>) -> Result<Self, Self::Error> {
        Self::new(points)
    }
}

impl From<CandidateSet> for Vec<Point> {
    fn from(c: CandidateSet) -> Self {
        c.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub think: String,
    pub candidates: CandidateSet,
}

/// Writes the response in the wire grammar.
///
/// Numbers use Rust's shortest round-trip decimal form, so parsing the result
/// recovers every coordinate bit for bit. `think` must not contain `</think>`.
pub fn serialize_response(r: &Response) -> String {
    let mut out = String::with_capacity(32 + r.think.len() + 16 * r.candidates.len());
    out.push_str(THINK_OPEN);
    out.push_str(&r.think);
    out.push_str(THINK_CLOSE);
    out.push_str(ANSWER_OPEN);
    out.push('[');
    for (i, p) in r.candidates.points().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "[{},{}]", p.x, p.y);
    }
    out.push(']');
    out.push_str(ANSWER_CLOSE);
    out
}

pub fn parse_response(s: &str, n_max: usize) -> Result<Response, FormatError> {
    let rest = s
        .strip_prefix(THINK_OPEN)
        .ok_or(FormatError::MissingThink)?;
    let close = rest.find(THINK_CLOSE).ok_or(FormatError::MissingThink)?;
    let think = &rest[..close];
    let rest = &rest[close + THINK_CLOSE.len()..];
    let body = rest
        .strip_prefix(ANSWER_OPEN)
        .and_then(|r| r.strip_suffix(ANSWER_CLOSE))
        .ok_or(FormatError::MissingAnswer)?;
    if body.contains(ANSWER_CLOSE) || body.contains(ANSWER_OPEN) {
        return Err(FormatError::MissingAnswer);
    }
    let pairs: Vec<[f64; 2]> = serde_json::from_str(body).map_err(|_| FormatError::BadNumber)?;
    if pairs.is_empty() {
        return Err(FormatError::EmptySet);
    }
    if pairs.len() > n_max {
        return Err(FormatError::TooMany);
    }
    let points = pairs.into_iter().map(|[x, y]| Point::new(x, y)).collect();
    Ok(Response {
        think: think.to_string(),
        candidates: CandidateSet::new(points)?,
    })
}

/// `R_format`: 1 when the string parses under the grammar, else 0.
pub fn format_reward(s: &str, n_max: usize) -> u8 {
    u8::from(parse_response(s, n_max).is_ok())
}
