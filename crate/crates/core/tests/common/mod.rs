//! Oracles shared by the module tests and the acceptance run.
#![allow(dead_code)]

use mvskill_core::rng::SplitMix64;
use mvskill_core::sampler::{FramePlan, SamplerConfig};
use mvskill_core::textio::ProficiencyLabel;

/// Every plan invariant; returns a description of the first violation.
pub fn check_plan(f: usize, cfg: &SamplerConfig, plan: &FramePlan) -> Result<(), String> {
    let idx = &plan.indices;
    if idx.len() != cfg.n_target {
        return Err(format!("budget {} != {}", idx.len(), cfg.n_target));
    }
    if plan.video_length != f || idx.iter().any(|&i| i >= f) {
        return Err("index out of range".into());
    }
    let strict = f >= cfg.n_target;
    for w in idx.windows(2) {
        if w[1] < w[0] || (strict && w[1] == w[0]) {
            return Err(format!("order broken at {w:?}"));
        }
    }
    if plan.segments.len() != cfg.n_segments {
        return Err("segment count".into());
    }
    for &i in idx {
        if !plan.segments.iter().any(|&[s, d]| s <= i && i < s + d) {
            return Err(format!("index {i} outside every segment"));
        }
    }
    for &[s, d] in &plan.segments {
        if d == 0 || s + d > f {
            return Err(format!("segment [{s}, {d}] leaves the clip"));
        }
    }
    let d_eff = plan.segments.iter().map(|s| s[1]).max().unwrap();
    if cfg.n_segments * d_eff <= f {
        let mut segs = plan.segments.clone();
        segs.sort_unstable();
        for w in segs.windows(2) {
            if w[0][0] + w[0][1] > w[1][0] {
                return Err(format!("segments overlap: {w:?}"));
            }
        }
    }
    Ok(())
}

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let is_subseq = |s: &[u8]| {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == x))
    };
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let s: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            is_subseq(&s).then_some(s.len())
        })
        .max()
        .unwrap_or(0)
}

pub const N: ProficiencyLabel = ProficiencyLabel::ALL[0];
pub const E: ProficiencyLabel = ProficiencyLabel::ALL[1];
pub const I: ProficiencyLabel = ProficiencyLabel::ALL[2];
pub const L: ProficiencyLabel = ProficiencyLabel::ALL[3];

pub type Expect = Option<(ProficiencyLabel, &'static str)>;

/// (input, strict result, lenient result). Strict successes carry over to
/// lenient mode unchanged.
pub const FIXTURES: [(&str, Expect, Expect); 50] = [
    (
        "Proficiency Level: Novice; Proficiency Commentary: keep elbows in",
        Some((N, "keep elbows in")),
        Some((N, "keep elbows in")),
    ),
    (
        "Proficiency Level: Late Expert; Proficiency Commentary: x",
        Some((L, "x")),
        Some((L, "x")),
    ),
    (
        "Proficiency Level: Intermediate Expert; Proficiency Commentary: solid footwork",
        Some((I, "solid footwork")),
        Some((I, "solid footwork")),
    ),
    (
        "proficiency level:  novice ;Proficiency Commentary:ok",
        Some((N, "ok")),
        Some((N, "ok")),
    ),
    (
        "   Proficiency Level: Early Expert; Proficiency Commentary: fine  ",
        Some((E, "fine")),
        Some((E, "fine")),
    ),
    (
        "PROFICIENCY LEVEL: LATE EXPERT; PROFICIENCY COMMENTARY: LOUD",
        Some((L, "LOUD")),
        Some((L, "LOUD")),
    ),
    (
        "Proficiency Level:Early Expert;Proficiency Commentary:tight",
        Some((E, "tight")),
        Some((E, "tight")),
    ),
    (
        "Proficiency Level: Novice ; Proficiency Commentary:   spaced out   ",
        Some((N, "spaced out")),
        Some((N, "spaced out")),
    ),
    (
        "\n\tProficiency Level: Novice; Proficiency Commentary: tabbed",
        Some((N, "tabbed")),
        Some((N, "tabbed")),
    ),
    (
        "Proficiency Level: Novice; Proficiency Commentary: a; b: c",
        Some((N, "a; b: c")),
        Some((N, "a; b: c")),
    ),
    (
        "Proficiency Level: Novice; Proficiency Commentary: ",
        None,
        Some((N, "Proficiency Commentary:")),
    ),
    ("Level Late Expert stuff", None, Some((L, "stuff"))),
    ("Proficiency Level: Master; Proficiency Commentary: x", None, None),
    ("", None, None),
    (
        "Proficiency Level: Novice Proficiency Commentary: x",
        None,
        Some((N, "x")),
    ),
    (
        "Proficiency Level: Novice; Commentary: x",
        None,
        Some((N, "Commentary: x")),
    ),
    ("Proficiency Level: Expert; Proficiency Commentary: x", None, None),
    (
        "I would say early expert: good balance",
        None,
        Some((E, "good balance")),
    ),
    ("late expert", None, Some((L, ""))),
    ("novice novice; ok", None, Some((N, "ok"))),
    ("Late Expert or Novice: hmm", None, Some((L, "hmm"))),
    ("Novice or Late Expert: hmm", None, Some((N, "hmm"))),
    ("Proficiency Level: Late  Expert; Proficiency Commentary: x", None, None),
    (
        "Proficiency Level: Intermediate Expert; Proficiency Commentary: Novice-level grip",
        Some((I, "Novice-level grip")),
        Some((I, "Novice-level grip")),
    ),
    (
        "xx Proficiency Level: Novice; Proficiency Commentary: y",
        None,
        Some((N, "Proficiency Commentary: y")),
    ),
    (
        "Proficiency Level: Novice; Proficiency Commentary: x; Proficiency Commentary: y",
        Some((N, "x; Proficiency Commentary: y")),
        Some((N, "x; Proficiency Commentary: y")),
    ),
    (
        "Proficiency Level: novice; proficiency commentary: lower",
        Some((N, "lower")),
        Some((N, "lower")),
    ),
    (
        "Proficiency Level: EARLY expert; Proficiency Commentary: mixed",
        Some((E, "mixed")),
        Some((E, "mixed")),
    ),
    ("Proficiency Level: ; Proficiency Commentary: x", None, None),
    ("Proficiency Level: Novice;", None, Some((N, ""))),
    ("Proficiency Level: Novice", None, Some((N, ""))),
    ("INTERMEDIATE EXPERT;done", None, Some((I, "done"))),
    ("Intermediate Expertise: great", None, Some((I, "great"))),
    ("The novice's technique: shaky", None, Some((N, "shaky"))),
    ("early experts; late expert", None, Some((E, "late expert"))),
    (
        "Proficiency Level: Late Expert; Proficiency Commentary:\n multi\nline ",
        Some((L, "multi\nline")),
        Some((L, "multi\nline")),
    ),
    (
        "Proficiency Level: Late Expert ;  Proficiency Commentary : x",
        None,
        Some((L, "Proficiency Commentary : x")),
    ),
    (
        "Proficiency Level - Novice; Proficiency Commentary: x",
        None,
        Some((N, "Proficiency Commentary: x")),
    ),
    (
        "Proficiency Level: Novice; Proficiency Commentary: café ☕",
        Some((N, "café ☕")),
        Some((N, "café ☕")),
    ),
    (
        "🙂 Proficiency Level: Novice; Proficiency Commentary: x",
        None,
        Some((N, "Proficiency Commentary: x")),
    ),
    (
        "Proficiency Level: Late Expert; Proficiency Commentary: late expert",
        Some((L, "late expert")),
        Some((L, "late expert")),
    ),
    (
        "proficiency level: intermediate expert; proficiency commentary: 42",
        Some((I, "42")),
        Some((I, "42")),
    ),
    (
        "Proficiency Level:\tNovice\t;\tProficiency Commentary:\tx",
        Some((N, "x")),
        Some((N, "x")),
    ),
    (
        "Proficiency Level: Novice; Proficiency Commentary: ;",
        Some((N, ";")),
        Some((N, ";")),
    ),
    (
        "Proficiency Level: Novice; Proficiency Commentary: :",
        Some((N, ":")),
        Some((N, ":")),
    ),
    ("noviceearly expert", None, Some((N, "early expert"))),
    ("Early Expert:", None, Some((E, ""))),
    (":;", None, None),
    ("Proficiency Level: Intermediate; Proficiency Commentary: x", None, None),
    (
        "\u{a0}Proficiency Level: Early Expert; Proficiency Commentary: ok",
        Some((E, "ok")),
        Some((E, "ok")),
    ),
];

/// Random bytes salted with grammar fragments so deep parser paths are reached.
pub fn noisy_bytes(rng: &mut SplitMix64) -> Vec<u8> {
    const PIECES: [&[u8]; 9] = [
        b"Proficiency Level:",
        b"Proficiency Commentary:",
        b";",
        b":",
        b"Late Expert",
        b"novice",
        b" ",
        b"\xf0\x9f",
        b"\xc3\xa9",
    ];
    let mut out = Vec::new();
    for _ in 0..rng.below(12) {
        if rng.below(3) == 0 {
            out.extend_from_slice(PIECES[rng.below(PIECES.len() as u64) as usize]);
        } else {
            out.extend((0..rng.below(6)).map(|_| rng.below(256) as u8));
        }
    }
    out
}
