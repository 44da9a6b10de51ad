//! Label accuracy and commentary overlap scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textio::{parse_output, ParseMode, ProficiencyLabel};

/// Fraction of positions where `preds` equals `golds`.
pub fn top1<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<f64> {
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(Error::Length(format!(
            "top1 needs equal non-empty lists, got {} predictions and {} labels",
            preds.len(),
            golds.len()
        )));
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Lowercase whitespace tokenization used by both text metrics.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn require_reference<T>(reference: &[T]) -> Result<()> {
    if reference.is_empty() {
        Err(Error::Input("reference is empty".into()))
    } else {
        Ok(())
    }
}

/// LCS F-measure with equal weight on precision and recall.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> Result<f64> {
    require_reference(reference)?;
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

/// One-to-one exact unigram alignment: each reference token, in order, takes
/// the earliest unused identical candidate token. Pairs are `(cand, ref)`
/// sorted by candidate position.
pub fn align_exact<T: PartialEq>(candidate: &[T], reference: &[T]) -> Vec<(usize, usize)> {
    let mut used = vec![false; candidate.len()];
    let mut pairs = Vec::new();
    for (j, r) in reference.iter().enumerate() {
        if let Some(i) = (0..candidate.len()).find(|&i| !used[i] && candidate[i] == *r) {
            used[i] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Fewest runs of pairs that are adjacent in both sequences.
pub fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// METEOR restricted to exact matches: recall-weighted harmonic mean times a
/// fragmentation penalty `0.5 (chunks / m)^3`.
pub fn meteor_exact<T: PartialEq>(candidate: &[T], reference: &[T]) -> Result<f64> {
    require_reference(reference)?;
    let pairs = align_exact(candidate, reference);
    let m = pairs.len() as f64;
    if m == 0.0 {
        return Ok(0.0);
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (count_chunks(&pairs) as f64 / m).powi(3);
    Ok(f_mean * (1.0 - penalty))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub top1: f64,
    pub count: usize,
}

/// Evaluation summary. Text fields are `null` for classifier runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub parse_success_rate: Option<f64>,
    pub rouge_l: Option<f64>,
    pub meteor_exact: Option<f64>,
    pub per_domain: BTreeMap<usize, DomainScore>,
    pub sample_count: usize,
    /// Share of samples parsed by the strict or the lenient rule.
    pub lenient_parse_success_rate: Option<f64>,
    /// Accuracy over parsed samples only (unparseable ones excluded).
    pub top1_parsed_only: Option<f64>,
}

/// One classifier prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub domain_id: usize,
    pub predicted: ProficiencyLabel,
    pub gold: ProficiencyLabel,
}

/// One generated response with its reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub domain_id: usize,
    pub gold: ProficiencyLabel,
    pub reference: String,
    pub generated: String,
}

fn per_domain(items: impl Iterator<Item = (usize, bool)>) -> BTreeMap<usize, DomainScore> {
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (d, hit) in items {
        let e = tally.entry(d).or_default();
        e.0 += hit as usize;
        e.1 += 1;
    }
    tally
        .into_iter()
        .map(|(d, (hits, n))| {
            (
                d,
                DomainScore {
                    top1: hits as f64 / n as f64,
                    count: n,
                },
            )
        })
        .collect()
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl EvalReport {
    pub fn from_predictions(preds: &[Prediction]) -> Result<Self> {
        let p: Vec<_> = preds.iter().map(|x| x.predicted).collect();
        let g: Vec<_> = preds.iter().map(|x| x.gold).collect();
        Ok(Self {
            top1: top1(&p, &g)?,
            parse_success_rate: None,
            rouge_l: None,
            meteor_exact: None,
            per_domain: per_domain(preds.iter().map(|x| (x.domain_id, x.predicted == x.gold))),
            sample_count: preds.len(),
            lenient_parse_success_rate: None,
            top1_parsed_only: None,
        })
    }

    /// Parses each generation strictly, then leniently. Unparseable samples
    /// count as wrong for `top1`, are excluded from `top1_parsed_only`, and
    /// are excluded from the text metrics.
    pub fn from_generations(items: &[Generation]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Input("no generations to score".into()));
        }
        let n = items.len() as f64;
        let (mut strict_ok, mut hits, mut parsed_hits) = (0usize, 0usize, 0usize);
        let (mut rouge, mut meteor) = (Vec::new(), Vec::new());
        let mut domain_hits = Vec::with_capacity(items.len());
        for item in items {
            if parse_output(&item.generated, ParseMode::Strict).is_ok() {
                strict_ok += 1;
            }
            let hit = match parse_output(&item.generated, ParseMode::Lenient) {
                Ok(resp) => {
                    let cand = tokenize(&resp.commentary);
                    let reference = tokenize(&item.reference);
                    rouge.push(rouge_l(&cand, &reference)?);
                    meteor.push(meteor_exact(&cand, &reference)?);
                    let hit = resp.label == item.gold;
                    parsed_hits += hit as usize;
                    hit
                }
                Err(_) => false,
            };
            hits += hit as usize;
            domain_hits.push((item.domain_id, hit));
        }
        let parsed = rouge.len();
        Ok(Self {
            top1: hits as f64 / n,
            parse_success_rate: Some(strict_ok as f64 / n),
            rouge_l: Some(mean(&rouge).unwrap_or(0.0)),
            meteor_exact: Some(mean(&meteor).unwrap_or(0.0)),
            per_domain: per_domain(domain_hits.into_iter()),
            sample_count: items.len(),
            lenient_parse_success_rate: Some(parsed as f64 / n),
            top1_parsed_only: Some(if parsed == 0 {
                0.0
            } else {
                parsed_hits as f64 / parsed as f64
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProficiencyLabel::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn top1_examples() {
        assert_eq!(top1(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(top1(&[1, 0, 3, 0], &[1, 2, 3, 4]).unwrap(), 0.5);
        assert!(top1::<u8>(&[], &[]).is_err());
        assert!(top1(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&toks("a b c"), &toks("a b c")).unwrap(), 1.0);
        assert_eq!(rouge_l(&toks("x y"), &toks("a b c")).unwrap(), 0.0);
        assert_eq!(rouge_l(&toks("a b c d"), &toks("a c d b")).unwrap(), 0.75);
        assert_eq!(rouge_l(&toks(""), &toks("a")).unwrap(), 0.0);
        assert!(rouge_l(&toks("a"), &toks("  ")).is_err());
        assert_eq!(rouge_l(&toks("A b"), &toks("a B")).unwrap(), 1.0);
    }

    #[test]
    fn meteor_fixtures() {
        // m = 2, P = 2/3, R = 1/2, one chunk: F = 20/39, penalty 1/16.
        let s = meteor_exact(&toks("the cat sat"), &toks("the cat is sad")).unwrap();
        assert!((s - 25.0 / 52.0).abs() < 1e-15);
        // Full reversal: three singleton chunks, penalty 0.5.
        assert!((meteor_exact(&toks("a b c"), &toks("c b a")).unwrap() - 0.5).abs() < 1e-15);
        // Duplicate candidate token stays unmatched; pairs (0,0), (2,1).
        let s = meteor_exact(&toks("a a b"), &toks("a b")).unwrap();
        assert!((s - 10.0 / 21.0).abs() < 1e-15);
        // Identical: 1 - 0.5 / m^3.
        let s = meteor_exact(&toks("p q r s"), &toks("p q r s")).unwrap();
        assert!((s - (1.0 - 0.5 / 64.0)).abs() < 1e-15);
        assert_eq!(meteor_exact(&toks("x"), &toks("y")).unwrap(), 0.0);
        assert!(meteor_exact(&toks("x"), &toks("")).is_err());
    }

    #[test]
    fn generation_report_conventions() {
        let reference = "shooting form: basic control is still missing, watch the tempo".to_string();
        let items = vec![
            Generation {
                domain_id: 0,
                gold: Novice,
                reference: reference.clone(),
                generated: format!("Proficiency Level: Novice; Proficiency Commentary: {reference}"),
            },
            Generation {
                domain_id: 0,
                gold: Novice,
                reference: reference.clone(),
                generated: "garbage".into(),
            },
            Generation {
                domain_id: 3,
                gold: LateExpert,
                reference: reference.clone(),
                generated: "Late Expert: shooting form".into(),
            },
        ];
        let r = EvalReport::from_generations(&items).unwrap();
        assert_eq!(r.sample_count, 3);
        assert!((r.top1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.parse_success_rate, Some(1.0 / 3.0));
        assert_eq!(r.lenient_parse_success_rate, Some(2.0 / 3.0));
        assert_eq!(r.top1_parsed_only, Some(1.0));
        assert_eq!(r.per_domain[&0], DomainScore { top1: 0.5, count: 2 });
        assert_eq!(r.per_domain.values().map(|d| d.count).sum::<usize>(), 3);
        let rouge = r.rouge_l.unwrap();
        assert!(rouge > 0.0 && rouge < 1.0);
        let json = serde_json::to_value(&r).unwrap();
        for key in [
            "top1",
            "parse_success_rate",
            "rouge_l",
            "meteor_exact",
            "per_domain",
            "sample_count",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
