//! Line-oriented, self-describing text records used for model files.
//!
//! Each line is `key token token ...`. Vectors are written as
//! `key len v_1 .. v_len`, matrices as `key rows cols v_11 v_12 ..`
//! (row-major). Floats use Rust's shortest round-trip representation, so a
//! write/read cycle is bit-exact.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct TextWriter {
    out: String,
}

impl TextWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn line(&mut self, key: &str, tokens: &[String]) {
        self.out.push_str(key);
        for t in tokens {
            self.out.push(' ');
            self.out.push_str(t);
        }
        self.out.push('\n');
    }

    pub fn word(&mut self, key: &str, value: &str) {
        self.line(key, &[value.to_string()]);
    }

    pub fn int(&mut self, key: &str, value: usize) {
        self.line(key, &[value.to_string()]);
    }

    pub fn float(&mut self, key: &str, value: f64) {
        self.line(key, &[format!("{value:?}")]);
    }

    pub fn floats(&mut self, key: &str, values: &[f64]) {
        let mut s = String::with_capacity(values.len() * 20);
        let _ = write!(s, "{}", values.len());
        for v in values {
            let _ = write!(s, " {v:?}");
        }
        self.line(key, &[s]);
    }

    pub fn matrix(&mut self, key: &str, m: &DMatrix<f64>) {
        let mut s = String::with_capacity(m.len() * 20);
        let _ = write!(s, "{} {}", m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let _ = write!(s, " {:?}", m[(i, j)]);
            }
        }
        self.line(key, &[s]);
    }

    pub fn finish(self) -> String {
        self.out
    }
}

pub(crate) struct TextReader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> TextReader<'a> {
    pub fn new(text: &'a str) -> Self {
        TextReader {
            lines: text.lines().enumerate().peekable(),
        }
    }

    /// Next non-empty line, which must start with `key`; returns its tokens.
    pub fn expect(&mut self, key: &str) -> Result<Vec<&'a str>> {
        loop {
            let (no, line) = self
                .lines
                .next()
                .ok_or_else(|| Error::parse(format!("unexpected end of input, wanted `{key}`")))?;
            let mut toks = line.split_ascii_whitespace();
            match toks.next() {
                None => continue,
                Some(k) if k == key => return Ok(toks.collect()),
                Some(k) => {
                    return Err(Error::parse(format!(
                        "line {}: expected `{key}`, found `{k}`",
                        no + 1
                    )))
                }
            }
        }
    }

    pub fn word(&mut self, key: &str) -> Result<&'a str> {
        let t = self.expect(key)?;
        match t.as_slice() {
            [w] => Ok(w),
            _ => Err(Error::parse(format!("`{key}` expects one token"))),
        }
    }

    pub fn int(&mut self, key: &str) -> Result<usize> {
        parse_usize(self.word(key)?)
    }

    pub fn float(&mut self, key: &str) -> Result<f64> {
        parse_f64(self.word(key)?)
    }

    pub fn floats(&mut self, key: &str) -> Result<Vec<f64>> {
        let t = self.expect(key)?;
        let (n, rest) = t
            .split_first()
            .ok_or_else(|| Error::parse(format!("`{key}` missing length")))?;
        let n = parse_usize(n)?;
        if rest.len() != n {
            return Err(Error::parse(format!(
                "`{key}` declares {n} values, found {}",
                rest.len()
            )));
        }
        rest.iter().map(|s| parse_f64(s)).collect()
    }

    pub fn matrix(&mut self, key: &str) -> Result<DMatrix<f64>> {
        let t = self.expect(key)?;
        if t.len() < 2 {
            return Err(Error::parse(format!("`{key}` missing shape")));
        }
        let (r, c) = (parse_usize(t[0])?, parse_usize(t[1])?);
        if t.len() != 2 + r * c {
            return Err(Error::parse(format!(
                "`{key}` declares {r}x{c}, found {} values",
                t.len() - 2
            )));
        }
        let vals: Vec<f64> = t[2..].iter().map(|s| parse_f64(s)).collect::<Result<_>>()?;
        Ok(DMatrix::from_row_slice(r, c, &vals))
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::parse(format!("bad float `{s}`")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::parse(format!("bad integer `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn floats_and_matrices_round_trip_bit_exactly(
            vals in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)
        ) {
            let m = DMatrix::from_row_slice(1, vals.len(), &vals);
            let mut w = TextWriter::new();
            w.floats("v", &vals);
            w.matrix("m", &m);
            let text = w.finish();
            let mut r = TextReader::new(&text);
            let back = r.floats("v").unwrap();
            let mb = r.matrix("m").unwrap();
            for (a, b) in vals.iter().zip(&back) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in m.iter().zip(mb.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn wrong_key_is_reported() {
        let mut r = TextReader::new("alpha 1\n");
        assert!(matches!(r.int("beta"), Err(Error::Parse(_))));
    }
}
