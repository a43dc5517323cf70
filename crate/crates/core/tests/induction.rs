#![allow(clippy::needless_range_loop)]

use imm_core::induction::{imm_grad_sampled, induce_exact, induce_kernel, LaplaceKernelInducer};
use imm_core::models::{backward_weighted, DifferentiableModel, LogisticModel, TabularSoftmax, TinyNeuralLM};
use imm_core::prob::build_index;
use imm_core::{Categorical, Dataset, RandomSource, SampleRecord};
use proptest::prelude::*;

fn lin_check<M: DifferentiableModel>(m: &M, short: &M::Short, ext: &M::Ext, w1: &[f64], w2: &[f64], c: f64) -> f64 {
    let combined: Vec<f64> = w1.iter().zip(w2).map(|(a, b)| a + c * b).collect();
    let g = backward_weighted(m, short, ext, &combined).unwrap();
    let g1 = backward_weighted(m, short, ext, w1).unwrap();
    let g2 = backward_weighted(m, short, ext, w2).unwrap();
    g.iter().zip(g1.iter().zip(&g2)).map(|(g, (a, b))| (g - a - c * b).abs()).fold(0.0, f64::max)
}

fn weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = RandomSource::new(seed, 1);
    (0..n).map(|_| rng.uniform(0.0, 2.0)).collect()
}

proptest! {
    #[test]
    fn backward_is_linear_in_weights(seed in 0u64..1000, c in 0.0f64..3.0) {
        let mut rng = RandomSource::new(seed, 0);
        let lr = LogisticModel::init(&mut rng);
        prop_assert!(lin_check(&lr, &0.3, &[-0.2, 0.7], &weights(2, seed), &weights(2, seed + 1), c) < 1e-12);
        let tab = TabularSoftmax::random(3, 4, 5, 1.0, &mut rng);
        prop_assert!(lin_check(&tab, &2, &1, &weights(5, seed), &weights(5, seed + 1), c) < 1e-12);
        let lm = TinyNeuralLM::new(7, &mut rng);
        prop_assert!(lin_check(&lm, &3, &[1, 6], &weights(7, seed), &weights(7, seed + 1), c) < 1e-10);
    }

    #[test]
    fn exact_induction_is_bucket_average(seed in 0u64..1000, n in 1usize..25) {
        let mut rng = RandomSource::new(seed, 0);
        let model = TabularSoftmax::random(3, 4, 3, 2.0, &mut rng);
        let records: Vec<SampleRecord<usize, usize>> = (0..n).map(|_| SampleRecord::new(rng.index(3), rng.index(4), rng.index(3))).collect();
        let data = Dataset::new(records).unwrap();
        let index = build_index(&data);
        for s in 0..3usize {
            let members: Vec<usize> = (0..n).filter(|&t| data.record(t).short_ctx == s).collect();
            let got = induce_exact(&model, &index, &data, &s);
            if members.is_empty() {
                prop_assert!(got.is_err());
                continue;
            }
            let mut avg = [0.0; 3];
            for &t in &members {
                let q = model.forward(&s, &data.record(t).ext_ctx).unwrap();
                for y in 0..3 {
                    avg[y] += q.prob(y) / members.len() as f64;
                }
            }
            let got = got.unwrap();
            prop_assert_eq!(got.support_size, members.len());
            for y in 0..3 {
                prop_assert!((got.dist.prob(y) - avg[y]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_samples_reduce_to_single_sample(seed in 0u64..1000, k in 1usize..7) {
        let mut rng = RandomSource::new(seed, 0);
        let model = TabularSoftmax::random(2, 3, 4, 2.0, &mut rng);
        let target = Categorical::from_weights((0..4).map(|_| rng.uniform(0.1, 1.0)).collect()).unwrap();
        let ext = rng.index(3);
        let many: Vec<&usize> = vec![&ext; k];
        let g = imm_grad_sampled(&model, &target, &1, &many).unwrap();
        let single = backward_weighted(&model, &1, &ext, target.probs()).unwrap();
        prop_assert!(g.iter().zip(&single).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn kernel_induction_concentrates_on_nearest_record(seed in 0u64..1000) {
        let mut rng = RandomSource::new(seed, 0);
        let model = LogisticModel::init(&mut rng);
        let records: Vec<SampleRecord<f64, [f64; 2]>> =
            (0..6).map(|i| SampleRecord::new(i as f64, [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)], 0)).collect();
        let data = Dataset::new(records).unwrap();
        let sharp = LaplaceKernelInducer::new(200.0).unwrap();
        let got = induce_kernel(&model, &data, 3.0, &sharp).unwrap();
        let own = model.forward(&3.0, &data.record(3).ext_ctx).unwrap();
        prop_assert!((got.dist.prob(1) - own.prob(1)).abs() < 1e-12);
    }
}
