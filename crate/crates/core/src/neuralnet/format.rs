//! Line-oriented text format for trained experts.
//!
//! ```text
//! OILCAST-MLP v1
//! in=<n> hidden=<m> out=1 seed=<s>
//! scale <feature> <min> <max>      (n lines, then one for the target)
//! W1                               (m rows of n values)
//! b1                               (one row of m values)
//! W2                               (one row of m values)
//! b2                               (one value)
//! history <k>                      (k lines "<epoch> <fraction>")
//! checksum <sha256 of everything above>
//! ```
//!
//! Reals are written with 17 significant digits so a load reproduces every
//! bit of the saved expert.

use sha2::{Digest, Sha256};
use std::fmt::Write as _;

use super::mlp::{EpochStat, MlpExpert, Scaling};
use super::NetError;

pub const FORMAT_HEADER: &str = "OILCAST-MLP v1";

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn row(values: &[f64]) -> String {
    values.iter().map(|&v| real(v)).collect::<Vec<_>>().join(" ")
}

fn digest_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn bad(line: usize, reason: impl Into<String>) -> NetError {
    NetError::Format { line, reason: reason.into() }
}

pub fn save_expert(expert: &MlpExpert) -> Result<String, NetError> {
    let mut body = String::new();
    let mut push = |line: String| {
        body.push_str(&line);
        body.push('\n');
    };
    push(FORMAT_HEADER.to_string());
    push(format!(
        "in={} hidden={} out=1 seed={}",
        expert.n_inputs, expert.n_hidden, expert.seed
    ));
    if let Some(out) = &expert.output_scaling {
        for s in expert.input_scaling.iter().chain(std::iter::once(out)) {
            if s.name.is_empty() || s.name.chars().any(char::is_whitespace) {
                return Err(bad(0, format!("scaling name '{}' must be non-empty without whitespace", s.name)));
            }
            push(format!("scale {} {} {}", s.name, real(s.min), real(s.max)));
        }
    }
    push("W1".into());
    for r in expert.w1.chunks_exact(expert.n_inputs) {
        push(row(r));
    }
    push("b1".into());
    push(row(&expert.b1));
    push("W2".into());
    push(row(&expert.w2));
    push("b2".into());
    push(real(expert.b2));
    push(format!("history {}", expert.history.len()));
    for h in &expert.history {
        push(format!("{} {}", h.epoch, real(h.fraction_within_tolerance)));
    }
    let sum = digest_hex(&body);
    body.push_str(&format!("checksum {sum}\n"));
    Ok(body)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), NetError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l.trim_end_matches('\r')))
            }
            None => Err(bad(self.last + 1, format!("document ends before {what}"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), NetError> {
        let (n, l) = self.next(kw)?;
        if l.trim() != kw {
            return Err(bad(n, format!("expected '{kw}', found '{l}'")));
        }
        Ok(())
    }

    fn reals(&mut self, count: usize, what: &str) -> Result<Vec<f64>, NetError> {
        let (n, l) = self.next(what)?;
        let values = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad(n, format!("bad number '{t}' in {what}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != count {
            return Err(bad(n, format!("{what} has {} values, expected {count}", values.len())));
        }
        Ok(values)
    }
}

fn field<T: std::str::FromStr>(line: usize, token: Option<&str>, key: &str) -> Result<T, NetError> {
    token
        .and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(line, format!("expected {key}=<value>")))
}

pub fn load_expert(text: &str) -> Result<MlpExpert, NetError> {
    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| bad(1, "document too short"))?;
    let (body, trailer) = text.split_at(body_end);
    let total_lines = body.lines().count() + 1;
    let recorded = trailer
        .trim()
        .strip_prefix("checksum ")
        .ok_or_else(|| bad(total_lines, "missing checksum line (truncated document?)"))?;
    if recorded.trim() != digest_hex(body) {
        return Err(bad(total_lines, "checksum mismatch"));
    }

    let mut lines = Lines { inner: body.lines().enumerate(), last: 0 };
    let (n, header) = lines.next("header")?;
    if header != FORMAT_HEADER {
        return Err(bad(n, format!("unsupported header '{header}', expected '{FORMAT_HEADER}'")));
    }
    let (n, topo) = lines.next("topology")?;
    let mut tokens = topo.split_whitespace();
    let n_inputs: usize = field(n, tokens.next(), "in")?;
    let n_hidden: usize = field(n, tokens.next(), "hidden")?;
    let n_out: usize = field(n, tokens.next(), "out")?;
    let seed: u64 = field(n, tokens.next(), "seed")?;
    if n_out != 1 || n_inputs == 0 || n_hidden == 0 || tokens.next().is_some() {
        return Err(bad(n, format!("unsupported topology '{topo}'")));
    }

    let mut scaling = Vec::new();
    let (mut n, mut line) = lines.next("W1")?;
    while let Some(rest) = line.strip_prefix("scale ") {
        let parts: Vec<&str> = rest.split_whitespace().collect();
        let [name, lo, hi] = parts[..] else {
            return Err(bad(n, "scale line needs <name> <min> <max>"));
        };
        let parse = |t: &str| t.parse::<f64>().map_err(|_| bad(n, format!("bad number '{t}'")));
        scaling.push(Scaling::new(name, parse(lo)?, parse(hi)?).map_err(|e| bad(n, e.to_string()))?);
        (n, line) = lines.next("W1")?;
    }
    if !scaling.is_empty() && scaling.len() != n_inputs + 1 {
        return Err(bad(n, format!("{} scale lines, expected {}", scaling.len(), n_inputs + 1)));
    }
    if line.trim() != "W1" {
        return Err(bad(n, format!("expected 'W1', found '{line}'")));
    }
    let mut w1 = Vec::with_capacity(n_inputs * n_hidden);
    for _ in 0..n_hidden {
        w1.extend(lines.reals(n_inputs, "W1 row")?);
    }
    lines.keyword("b1")?;
    let b1 = lines.reals(n_hidden, "b1")?;
    lines.keyword("W2")?;
    let w2 = lines.reals(n_hidden, "W2")?;
    lines.keyword("b2")?;
    let b2 = lines.reals(1, "b2")?[0];

    let (n, hist) = lines.next("history")?;
    let count: usize = hist
        .strip_prefix("history ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| bad(n, "expected 'history <count>'"))?;
    let mut history = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, l) = lines.next("history entry")?;
        let mut it = l.split_whitespace();
        let epoch = it.next().and_then(|t| t.parse().ok());
        let frac = it.next().and_then(|t| t.parse::<f64>().ok());
        match (epoch, frac, it.next()) {
            (Some(epoch), Some(f), None) if (0.0..=1.0).contains(&f) => history.push(EpochStat {
                epoch,
                fraction_within_tolerance: f,
            }),
            _ => return Err(bad(n, format!("bad history entry '{l}'"))),
        }
    }
    if let Ok((n, extra)) = lines.next("end") {
        return Err(bad(n, format!("unexpected trailing content '{extra}'")));
    }

    let mut expert =
        MlpExpert::from_parts(n_inputs, n_hidden, w1, b1, w2, b2, seed).map_err(|e| bad(0, e.to_string()))?;
    if let Some(out) = scaling.pop() {
        expert.input_scaling = scaling;
        expert.output_scaling = Some(out);
    }
    expert.history = history;
    Ok(expert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::TrainConfig;

    fn trained() -> MlpExpert {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let ys: Vec<f64> = rows.iter().map(|r| 1.0 / (1.0 + r[0]) + r[1]).collect();
        let mut e = MlpExpert::init(2, 3, 0.4, 77).unwrap();
        e.fit_scaling(&["u.raw.lag0".into(), "v.sma2.lag15".into()], "price.target", &rows, &ys)
            .unwrap();
        e.train(&rows, &ys, &TrainConfig { max_epochs: 5, ..TrainConfig::default() }).unwrap();
        e
    }

    #[test]
    fn round_trip_is_exact() {
        let e = trained();
        let text = save_expert(&e).unwrap();
        assert!(text.starts_with("OILCAST-MLP v1\nin=2 hidden=3 out=1 seed=77\nscale u.raw.lag0 "));
        let back = load_expert(&text).unwrap();
        assert_eq!(back, e);
        for (a, b) in back.parameters().iter().zip(e.parameters()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let unscaled = MlpExpert::init(1, 1, 0.4, 2).unwrap();
        assert_eq!(load_expert(&save_expert(&unscaled).unwrap()).unwrap(), unscaled);
    }

    #[test]
    fn truncated_document_is_rejected() {
        let text = save_expert(&trained()).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(load_expert(cut), Err(NetError::Format { .. })));
        assert!(load_expert("").is_err());
    }

    #[test]
    fn wrong_header_is_rejected() {
        let e = trained();
        let text = save_expert(&e).unwrap().replacen("v1", "v2", 1);
        // Re-sign so the header check, not the checksum, trips.
        let body_end = text.trim_end().rfind('\n').unwrap() + 1;
        let resigned = format!("{}checksum {}\n", &text[..body_end], digest_hex(&text[..body_end]));
        let err = load_expert(&resigned).unwrap_err();
        assert!(matches!(err, NetError::Format { line: 1, .. }), "{err}");
    }

    #[test]
    fn tampering_fails_checksum() {
        let text = save_expert(&trained()).unwrap();
        let idx = text.find("W2\n").unwrap() + 3;
        let mut bytes = text.into_bytes();
        bytes[idx + 1] = if bytes[idx + 1] == b'1' { b'2' } else { b'1' };
        let err = load_expert(std::str::from_utf8(&bytes).unwrap()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let text = save_expert(&trained()).unwrap();
        let body_end = text.trim_end().rfind('\n').unwrap() + 1;
        let body = text[..body_end].replacen("hidden=3", "hidden=4", 1);
        let resigned = format!("{body}checksum {}\n", digest_hex(&body));
        assert!(matches!(load_expert(&resigned), Err(NetError::Format { .. })));
    }
}
