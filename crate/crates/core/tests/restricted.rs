use imm_core::prob::Vocab;
use imm_core::restricted::{corrupt, kn_fit, AnalyticRestrictedLogistic, KneserNeyBigram, RestrictedModel};
use imm_core::RandomSource;
use proptest::prelude::*;

/// Monte-Carlo estimate of P(y = 1 | x1) from uniform (x2, x3), within 4 SE.
fn mc_agrees(m: &AnalyticRestrictedLogistic, x1: f64, rng: &mut RandomSource) {
    let draws = 200_000;
    let hits = (0..draws).filter(|_| m.label(&[x1, rng.uniform(m.lo, m.hi), rng.uniform(m.lo, m.hi)]) == 1).count();
    let p_mc = hits as f64 / draws as f64;
    let p = m.predict(&x1).unwrap().prob(1);
    let se = (p * (1.0 - p) / draws as f64).sqrt().max(1e-6);
    assert!((p - p_mc).abs() <= 4.0 * se, "x1 = {x1}: analytic {p} vs monte carlo {p_mc}");
}

#[test]
fn analytic_restricted_logistic_matches_monte_carlo() {
    let mut rng = RandomSource::new(5, 0);
    let default = AnalyticRestrictedLogistic::default();
    for x1 in [-1.0, -0.6, -0.1, 0.0, 0.35, 0.9] {
        mc_agrees(&default, x1, &mut rng);
    }
    let skewed = AnalyticRestrictedLogistic::new(2.0, 0.5, -1.5, 0.3, -2.0, 1.0).unwrap();
    for x1 in [-2.0, -1.1, -0.2, 0.4, 1.0] {
        mc_agrees(&skewed, x1, &mut rng);
    }
}

#[test]
fn corrupted_target_mixes_toward_uniform() {
    let eps = 0.3;
    let m = corrupt(AnalyticRestrictedLogistic::default(), eps).unwrap();
    for x1 in [-0.8, 0.1, 0.7] {
        let base = AnalyticRestrictedLogistic::default().predict(&x1).unwrap().prob(1);
        let got = m.predict(&x1).unwrap().prob(1);
        assert!((got - ((1.0 - eps) * base + eps / 2.0)).abs() < 1e-15);
    }
}

fn corpus_strategy() -> impl Strategy<Value = (usize, Vec<u32>)> {
    (2usize..7).prop_flat_map(|v| (Just(v), prop::collection::vec(0..v as u32, 2..60)))
}

proptest! {
    #[test]
    fn kn_rows_are_distributions((v, corpus) in corpus_strategy(), discount in 0.05f64..0.95) {
        let kn = kn_fit(&corpus, v, discount).unwrap();
        for ctx in 0..v as u32 {
            let row = kn.row(ctx);
            prop_assert!((row.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.probs().iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn kn_text_round_trip_preserves_rows((v, corpus) in corpus_strategy(), discount in 0.05f64..0.95) {
        let kn = kn_fit(&corpus, v, discount).unwrap();
        let vocab = Vocab::from_tokens((0..v).map(|i| format!("w{i}")).collect()).unwrap();
        let (back, vocab2) = KneserNeyBigram::from_text(&kn.to_text(&vocab)).unwrap();
        prop_assert_eq!(vocab2.tokens(), vocab.tokens());
        for ctx in 0..v as u32 {
            let (a, b) = (kn.row(ctx), back.row(ctx));
            prop_assert_eq!(a.probs(), b.probs());
        }
    }

    #[test]
    fn positive_fraction_is_monotone_in_x1(a in 0.1f64..3.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -1.0f64..1.0) {
        let m = AnalyticRestrictedLogistic::new(a, b, c, d, -1.0, 1.0).unwrap();
        let mut prev = 0.0;
        for i in 0..=20 {
            let p = m.positive_fraction(-1.0 + i as f64 * 0.1).unwrap();
            prop_assert!(p >= prev - 1e-12);
            prev = p;
        }
    }
}
