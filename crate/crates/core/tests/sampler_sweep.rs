use mvskill_core::sampler::{pats_plan, uniform_plan, FramePlan, SamplerConfig};
use proptest::prelude::*;

mod common;
use common::check_plan;

#[test]
fn exhaustive_pats_sweep() {
    let mut checked = 0usize;
    for f in 1..=128 {
        for n in 1..=64 {
            for k in 1..=8.min(n) {
                for d in 1..=64 {
                    let cfg = SamplerConfig::new(n, k, d).unwrap();
                    let plan = pats_plan(f, &cfg).unwrap();
                    if let Err(e) = check_plan(f, &cfg, &plan) {
                        panic!("F={f} N={n} Ns={k} ds={d}: {e}\n{plan:?}");
                    }
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 128 * 64 * (8 * 64 - 28));
}

#[test]
fn single_full_segment_is_uniform() {
    for f in 1..=128 {
        for n in 1..=64 {
            let pats = pats_plan(f, &SamplerConfig::new(n, 1, f).unwrap()).unwrap();
            assert_eq!(pats.indices, uniform_plan(f, n).unwrap().indices, "F={f} N={n}");
        }
    }
}

#[test]
fn density_dominates_uniform_when_segments_fit() {
    for f in 1..=128 {
        for n in 1..=64 {
            let uniform = uniform_plan(f, n).unwrap().density_report().within_segment_density;
            for k in 1..=8.min(n) {
                for d in (1..=64).filter(|d| d * k < f) {
                    let plan = pats_plan(f, &SamplerConfig::new(n, k, d).unwrap()).unwrap();
                    let pats = plan.density_report().within_segment_density;
                    assert!(pats >= uniform - 1e-12, "F={f} N={n} Ns={k} ds={d}: {pats} < {uniform}");
                }
            }
        }
    }
}

#[test]
fn config_invariants_are_enforced() {
    assert!(SamplerConfig::new(0, 1, 1).is_err());
    assert!(SamplerConfig::new(4, 5, 1).is_err());
    assert!(SamplerConfig::new(4, 0, 1).is_err());
    assert!(SamplerConfig::new(4, 2, 0).is_err());
    assert!(pats_plan(0, &SamplerConfig::new(4, 2, 3).unwrap()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn large_configs_keep_invariants(f in 1usize..=512, n in 1usize..=512, k in 1usize..=16, d in 1usize..=512) {
        prop_assume!(k <= n);
        let cfg = SamplerConfig::new(n, k, d).unwrap();
        let plan = pats_plan(f, &cfg).unwrap();
        prop_assert!(check_plan(f, &cfg, &plan).is_ok(), "{:?}", check_plan(f, &cfg, &plan));
        prop_assert_eq!(&plan, &pats_plan(f, &cfg).unwrap());
    }

    #[test]
    fn uniform_matches_rounding_formula(f in 1usize..=512, n in 1usize..=512) {
        let plan = uniform_plan(f, n).unwrap();
        let expect: Vec<usize> = if n == 1 {
            vec![((f - 1) as f64 / 2.0).round() as usize]
        } else {
            (0..n).map(|j| (j as f64 * (f - 1) as f64 / (n - 1) as f64).round() as usize).collect()
        };
        prop_assert_eq!(plan.indices, expect);
    }

    #[test]
    fn text_form_round_trips(f in 1usize..=300, n in 1usize..=40, k in 1usize..=6, d in 1usize..=80) {
        prop_assume!(k <= n);
        let plan = pats_plan(f, &SamplerConfig::new(n, k, d).unwrap()).unwrap();
        prop_assert_eq!(FramePlan::from_text(&plan.to_text()).unwrap(), plan);
    }
}
