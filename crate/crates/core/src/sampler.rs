//! Frame selection: proficiency-aware segment sampling and the uniform baseline.
//!
//! Segment sampling concentrates a frame budget in a few short, densely
//! sampled windows whose starts are spread over the clip. All arithmetic is
//! on integers with round-half-up division so the plans are reproducible
//! bit-for-bit in any language.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of segment sampling. `segment_duration` is measured in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_target: usize,
    pub n_segments: usize,
    pub segment_duration: usize,
}

impl SamplerConfig {
    pub fn new(n_target: usize, n_segments: usize, segment_duration: usize) -> Result<Self> {
        let c = Self {
            n_target,
            n_segments,
            segment_duration,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_target == 0 {
            return Err(Error::Config("n_target must be positive".into()));
        }
        if self.n_segments == 0 || self.n_segments > self.n_target {
            return Err(Error::Config(format!(
                "n_segments must be in [1, n_target={}], got {}",
                self.n_target, self.n_segments
            )));
        }
        if self.segment_duration == 0 {
            return Err(Error::Config("segment_duration must be at least 1".into()));
        }
        Ok(())
    }
}

/// An ordered frame-index plan with the segments it was drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePlan {
    pub video_length: usize,
    pub indices: Vec<usize>,
    /// `[start, effective_duration]` pairs.
    pub segments: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub coverage_fraction: f64,
    pub max_gap: usize,
    pub within_segment_density: f64,
}

/// `round(num / den)` with halves rounded up, for non-negative operands.
fn div_round(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// Budget per segment: the first `n % k` segments receive one extra frame.
pub fn split_budget(n_target: usize, n_segments: usize) -> Vec<usize> {
    let base = n_target / n_segments;
    let extra = n_target % n_segments;
    (0..n_segments).map(|i| base + usize::from(i < extra)).collect()
}

/// `count` indices evenly spread over `[0, span - 1]`, endpoints included.
/// A single index lands on the midpoint.
fn spread(span: usize, count: usize) -> impl Iterator<Item = usize> {
    (0..count).map(move |j| {
        if count == 1 {
            div_round(span - 1, 2)
        } else {
            div_round(j * (span - 1), count - 1)
        }
    })
}

pub fn pats_plan(video_length: usize, config: &SamplerConfig) -> Result<FramePlan> {
    config.validate()?;
    if video_length == 0 {
        return Err(Error::Input("video_length must be at least 1".into()));
    }
    let (f, n, k) = (video_length, config.n_target, config.n_segments);
    let budgets = split_budget(n, k);
    let widest = budgets[0];
    let room = f / k;

    if f >= n && widest > room {
        return Ok(tight_plan(f, &budgets));
    }

    // Segments are widened to hold their budget without repeats, then
    // shortened so that k of them fit in the clip.
    let d_eff = config.segment_duration.max(widest).min(room).max(1);
    let starts: Vec<usize> = if k == 1 {
        vec![(f - d_eff) / 2]
    } else {
        (0..k).map(|i| div_round(i * (f - d_eff), k - 1)).collect()
    };

    let mut indices: Vec<usize> = starts
        .iter()
        .zip(&budgets)
        .flat_map(|(&s, &b)| spread(d_eff, b).map(move |o| s + o))
        .collect();
    indices.sort_unstable();
    Ok(FramePlan {
        video_length: f,
        indices,
        segments: starts.into_iter().map(|s| [s, d_eff]).collect(),
    })
}

/// Fallback when the clip holds the budget but not `k` equal segments wide
/// enough for it: each segment is exactly as long as its budget and the
/// leftover frames are spread evenly between segments.
fn tight_plan(f: usize, budgets: &[usize]) -> FramePlan {
    let k = budgets.len();
    let total: usize = budgets.iter().sum();
    let slack = f - total;
    let mut segments = Vec::with_capacity(k);
    let mut used = 0;
    for (i, &b) in budgets.iter().enumerate() {
        let gap = if k == 1 { slack / 2 } else { div_round(i * slack, k - 1) };
        segments.push([used + gap, b]);
        used += b;
    }
    let indices = segments.iter().flat_map(|&[s, b]| s..s + b).collect();
    FramePlan {
        video_length: f,
        indices,
        segments,
    }
}

pub fn uniform_plan(video_length: usize, n_target: usize) -> Result<FramePlan> {
    if video_length == 0 {
        return Err(Error::Input("video_length must be at least 1".into()));
    }
    if n_target == 0 {
        return Err(Error::Input("n_target must be at least 1".into()));
    }
    Ok(FramePlan {
        video_length,
        indices: spread(video_length, n_target).collect(),
        segments: vec![[0, video_length]],
    })
}

impl FramePlan {
    pub fn n_target(&self) -> usize {
        self.indices.len()
    }

    /// True when the plan repeats a frame (only possible for clips shorter than the budget).
    pub fn has_duplicates(&self) -> bool {
        self.indices.windows(2).any(|w| w[0] == w[1])
    }

    pub fn density_report(&self) -> DensityReport {
        let first = self.indices.first().copied().unwrap_or(0);
        let last = self.indices.last().copied().unwrap_or(0);
        let max_gap = self.indices.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0);
        let budgets = split_budget(self.indices.len(), self.segments.len().max(1));
        let within = self
            .segments
            .iter()
            .zip(&budgets)
            .map(|(&[_, d], &b)| b as f64 / d as f64)
            .sum::<f64>()
            / self.segments.len().max(1) as f64;
        DensityReport {
            coverage_fraction: (last - first) as f64 / self.video_length as f64,
            max_gap,
            within_segment_density: within,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    /// Line-oriented form:
    ///
    /// ```text
    /// video_length 300
    /// segments 2
    /// 0 50
    /// 250 50
    /// indices 8
    /// 0 16 33 49 250 266 283 299
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "video_length {}", self.video_length);
        let _ = writeln!(s, "segments {}", self.segments.len());
        for [a, d] in &self.segments {
            let _ = writeln!(s, "{a} {d}");
        }
        let _ = writeln!(s, "indices {}", self.indices.len());
        let joined: Vec<String> = self.indices.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "{}", joined.join(" "));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |what: &str| Error::Parse {
            reason: format!("frame plan text: {what}"),
        };
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<usize> {
            let line = lines.next().ok_or_else(|| bad("unexpected end"))?;
            let rest = line
                .strip_prefix(key)
                .ok_or_else(|| bad(&format!("expected `{key}`")))?;
            rest.trim()
                .parse()
                .map_err(|_| bad(&format!("bad count after `{key}`")))
        };
        let video_length = header("video_length")?;
        let nseg = header("segments")?;
        let mut segments = Vec::with_capacity(nseg);
        for _ in 0..nseg {
            let line = lines.next().ok_or_else(|| bad("missing segment line"))?;
            let nums: Vec<usize> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("segment line"))?;
            match nums[..] {
                [a, d] => segments.push([a, d]),
                _ => return Err(bad("segment line needs two numbers")),
            }
        }
        let line = lines.next().ok_or_else(|| bad("missing indices header"))?;
        let count: usize = line
            .strip_prefix("indices")
            .ok_or_else(|| bad("expected `indices`"))?
            .trim()
            .parse()
            .map_err(|_| bad("indices count"))?;
        let indices: Vec<usize> = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("index list"))?;
        if indices.len() != count {
            return Err(bad("index count mismatch"));
        }
        Ok(Self {
            video_length,
            indices,
            segments,
        })
    }
}
