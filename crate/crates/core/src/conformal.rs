//! Functional conformal prediction over score trajectories: a time-indexed
//! mean curve plus a one-sided width calibrated as a finite-sample quantile
//! of per-segment maximum deviations.  Scores strictly above mu[t] + w are
//! flagged out-of-distribution.

use crate::error::{Error, Result};
use crate::io::f64_exact;
use std::fs;
use std::path::Path;

/// A fixed-length window of consecutive scores, s_0..s_T.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSegment {
    scores: Vec<f64>,
}

impl ScoreSegment {
    /// Length must be the chunker's T+1; values must be finite.
    pub fn new(scores: Vec<f64>) -> Result<ScoreSegment> {
        if scores.is_empty() || scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "score segment must be non-empty and finite".into(),
            ));
        }
        Ok(ScoreSegment { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// One-sided band: intervals [-inf, mu[t] + w] indexed by t mod (T+1).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBand {
    pub mu: Vec<f64>,
    pub w: f64,
    pub alpha: f64,
    pub n_mu: usize,
    pub n_w: usize,
}

/// Splits each trajectory into non-overlapping windows of length T+1,
/// dropping any trailing remainder rather than padding it.
pub fn chunk(trajectories: &[Vec<f64>], t_len: usize) -> Vec<ScoreSegment> {
    assert!(t_len >= 1, "segment length T must be at least 1");
    let seg = t_len + 1;
    let mut out = Vec::new();
    for traj in trajectories {
        for win in traj.chunks_exact(seg) {
            out.push(ScoreSegment {
                scores: win.to_vec(),
            });
        }
    }
    out
}

/// Fits the band: the first `split_fraction` of segments (by position) give
/// the mean curve, the rest give per-segment deviations d_j = max_t (s_t -
/// mu_t); w is the ceil((n_w+1)(1-alpha))-th smallest deviation, clamped to
/// the largest when the index overruns, floored at zero.
pub fn fit_band(segments: &[ScoreSegment], alpha: f64, split_fraction: f64) -> Result<PredictionBand> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be in (0,1), got {alpha}"
        )));
    }
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split fraction must be in (0,1), got {split_fraction}"
        )));
    }
    let n = segments.len();
    let n_mu = ((n as f64) * split_fraction).round() as usize;
    let n_w = n - n_mu;
    if n_mu < 2 || n_w < 2 {
        return Err(Error::InsufficientSegments(format!(
            "need at least 2 segments per split, got {n_mu} for the mean and {n_w} for the width"
        )));
    }
    let seg_len = segments[0].len();
    if segments.iter().any(|s| s.len() != seg_len) {
        return Err(Error::InvalidParameter(
            "segments must share one length".into(),
        ));
    }
    let (c_mu, c_w) = segments.split_at(n_mu);

    let mut mu = vec![0.0; seg_len];
    for seg in c_mu {
        for (m, &s) in mu.iter_mut().zip(seg.scores()) {
            *m += s;
        }
    }
    for m in &mut mu {
        *m /= n_mu as f64;
    }

    let mut devs: Vec<f64> = c_w
        .iter()
        .map(|seg| {
            seg.scores()
                .iter()
                .zip(&mu)
                .map(|(&s, &m)| s - m)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    devs.sort_by(|a, b| a.partial_cmp(b).expect("finite deviations"));

    let idx = ((n_w + 1) as f64 * (1.0 - alpha)).ceil() as usize;
    let w = if idx > n_w {
        devs[n_w - 1]
    } else {
        devs[idx - 1]
    };
    Ok(PredictionBand {
        mu,
        w: w.max(0.0),
        alpha,
        n_mu,
        n_w,
    })
}

impl PredictionBand {
    /// T: the segment index range is 0..=T.
    pub fn t_len(&self) -> usize {
        self.mu.len() - 1
    }

    /// b_t: score strictly above the band at frame t (t counted from episode
    /// start; indexing wraps at the segment length).  Equality is
    /// in-distribution.
    pub fn is_ood(&self, score: f64, t: usize) -> bool {
        score > self.mu[t % self.mu.len()] + self.w
    }

    pub fn upper(&self, t: usize) -> f64 {
        self.mu[t % self.mu.len()] + self.w
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("alpha={}\n", f64_exact(self.alpha)));
        out.push_str(&format!("T={}\n", self.t_len()));
        out.push_str(&format!("w={}\n", f64_exact(self.w)));
        out.push_str(&format!("n_mu={}\n", self.n_mu));
        out.push_str(&format!("n_w={}\n", self.n_w));
        for m in &self.mu {
            out.push_str(&f64_exact(*m));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<PredictionBand> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let mut header = std::collections::HashMap::new();
        for _ in 0..5 {
            let line = lines
                .next()
                .ok_or_else(|| Error::format(path, "truncated band header"))?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("bad band header line: {line}")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let field = |k: &str| -> Result<&str> {
            header
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::format(path, format!("band header missing `{k}`")))
        };
        let parse_f = |k: &str| -> Result<f64> {
            field(k)?
                .parse()
                .map_err(|_| Error::format(path, format!("band header `{k}` is not a number")))
        };
        let parse_u = |k: &str| -> Result<usize> {
            field(k)?
                .parse()
                .map_err(|_| Error::format(path, format!("band header `{k}` is not an integer")))
        };
        let (alpha, w) = (parse_f("alpha")?, parse_f("w")?);
        let (t_len, n_mu, n_w) = (parse_u("T")?, parse_u("n_mu")?, parse_u("n_w")?);
        let mu: Vec<f64> = lines
            .map(|l| {
                l.trim()
                    .parse()
                    .map_err(|_| Error::format(path, format!("bad mu value: {l}")))
            })
            .collect::<Result<_>>()?;
        if mu.len() != t_len + 1 {
            return Err(Error::format(
                path,
                format!("band declares T={t_len} but has {} mu values", mu.len()),
            ));
        }
        if w < 0.0 || !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::format(path, "band parameters out of range"));
        }
        Ok(PredictionBand {
            mu,
            w,
            alpha,
            n_mu,
            n_w,
        })
    }
}
