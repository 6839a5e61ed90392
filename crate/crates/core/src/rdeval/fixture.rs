//! Plain-text fixtures: whitespace-separated numbers, one record per line,
//! blank lines and `#` comments ignored.

use std::str::FromStr;

use crate::error::{CodecError, Result};

fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_line<T: FromStr>(line_no: usize, line: &str) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse()
                .map_err(|_| CodecError::Format(format!("line {line_no}: cannot parse {tok:?}")))
        })
        .collect()
}

/// One vector per line.
pub fn parse_vectors(text: &str) -> Result<Vec<Vec<f64>>> {
    records(text).map(|(n, l)| parse_line(n, l)).collect()
}

/// One `x y` point per line.
pub fn parse_landmarks(text: &str) -> Result<Vec<[f64; 2]>> {
    records(text)
        .map(|(n, l)| {
            let v: Vec<f64> = parse_line(n, l)?;
            match v[..] {
                [x, y] => Ok([x, y]),
                _ => Err(CodecError::Format(format!(
                    "line {n}: expected 2 coordinates, got {}",
                    v.len()
                ))),
            }
        })
        .collect()
}

/// Square confusion matrix, one row per line.
pub fn parse_confusion(text: &str) -> Result<Vec<Vec<u64>>> {
    let rows: Vec<Vec<u64>> = records(text)
        .map(|(n, l)| parse_line(n, l))
        .collect::<Result<_>>()?;
    if rows.iter().any(|r| r.len() != rows.len()) {
        return Err(CodecError::Format(format!(
            "confusion matrix with {} rows is not square",
            rows.len()
        )));
    }
    Ok(rows)
}

/// Integer ratings, any number per line.
pub fn parse_ratings(text: &str) -> Result<Vec<u8>> {
    Ok(records(text)
        .map(|(n, l)| parse_line(n, l))
        .collect::<Result<Vec<Vec<u8>>>>()?
        .concat())
}
