//! Concrete bilevel instances and their dataset formats.

pub mod denoise;
pub mod oed;
pub mod toy;
pub mod tv;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A ground truth and its noisy observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub x_true: Vec<f64>,
    pub d: Vec<f64>,
}

fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',').map(|f| f.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {lineno}: {e}")))).collect()
}

fn write_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        write!(out, "{v:e}").unwrap();
    }
    out.push('\n');
}

/// One row per pair: the `n` entries of `x_true` followed by the `n` entries of `d`.
pub fn pairs_to_csv(pairs: &[Pair]) -> String {
    let mut out = String::new();
    for p in pairs {
        write_row(&mut out, p.x_true.iter().chain(&p.d).copied());
    }
    out
}

pub fn pairs_from_csv(text: &str) -> Result<Vec<Pair>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = parse_row(line, i + 1)?;
        if row.len() % 2 != 0 {
            return Err(Error::Parse(format!("line {}: odd number of fields", i + 1)));
        }
        let n = row.len() / 2;
        pairs.push(Pair { x_true: row[..n].to_vec(), d: row[n..].to_vec() });
    }
    Ok(pairs)
}

/// One flattened (row-major) image or sinogram per row.
pub fn rows_to_csv(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for r in rows {
        write_row(&mut out, r.iter().copied());
    }
    out
}

pub fn rows_from_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| parse_row(l, i + 1)).collect()
}

/// Plain (ASCII) PGM with values in `[0, 1]` mapped to `0..=255`.
pub fn image_to_pgm(img: &[f64], side: usize) -> String {
    let mut out = format!("P2\n{side} {side}\n255\n");
    for row in img.chunks(side) {
        let line: Vec<String> = row.iter().map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Reads a plain PGM written by [`image_to_pgm`], returning `(image, side)`.
pub fn image_from_pgm(text: &str) -> Result<(Vec<f64>, usize)> {
    let mut tokens = text.lines().filter(|l| !l.starts_with('#')).flat_map(str::split_whitespace);
    let bad = |m: &str| Error::Parse(format!("pgm: {m}"));
    if tokens.next() != Some("P2") {
        return Err(bad("expected P2 header"));
    }
    let mut num = |what: &str| -> Result<usize> { tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(what)) };
    let w = num("width")?;
    let h = num("height")?;
    let max = num("maxval")?;
    if w != h || max == 0 {
        return Err(bad("expected a square image with positive maxval"));
    }
    let img = (0..w * h).map(|_| num("pixel").map(|v| v as f64 / max as f64)).collect::<Result<Vec<f64>>>()?;
    Ok((img, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_csv_round_trip() {
        let pairs = vec![
            Pair { x_true: vec![0.0, 1.0, 1.0], d: vec![0.01, 0.98, 1.0000000000000002] },
            Pair { x_true: vec![1.0, 0.0, 0.0], d: vec![-3e-5, 0.5, 2.0] },
        ];
        assert_eq!(pairs_from_csv(&pairs_to_csv(&pairs)).unwrap(), pairs);
        assert!(pairs_from_csv("1,2,3\n").is_err());
        assert!(pairs_from_csv("1,x\n").is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let img: Vec<f64> = (0..16).map(|i| (i * 17) as f64 / 255.0).collect();
        let (back, side) = image_from_pgm(&image_to_pgm(&img, 4)).unwrap();
        assert_eq!(side, 4);
        for (a, b) in img.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(image_from_pgm("P5\n1 1\n255\n0").is_err());
    }
}
