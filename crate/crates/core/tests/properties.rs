use proptest::prelude::*;

use selfeval::benchmark::dataset::{read_examples, write_examples};
use selfeval::benchmark::{build_task_suite, Task, TaskSpec};
use selfeval::condition::Condition;
use selfeval::denoiser::{AnalyticDenoiser, GaussianClassModel};
use selfeval::estimator::{Aggregation, Estimator, EstimatorConfig, Posterior};
use selfeval::metrics::{spearman_rho, votes_from_predictions};
use selfeval::schedule::{build_schedule, NoiseSchedule, ScheduleKind};
use selfeval::winoground::image_text_scores;

fn sched(t: usize) -> NoiseSchedule {
    build_schedule(ScheduleKind::Linear, t, 1e-3, 0.2).unwrap().rescaled(t).unwrap()
}

fn two_class(dim: usize, sep: f64) -> (AnalyticDenoiser, [Condition; 2]) {
    let c = [Condition::Class(0), Condition::Class(1)];
    let g = GaussianClassModel::new(dim, 0.05)
        .and_then(|g| g.with_class(&c[0], vec![-sep; dim]))
        .and_then(|g| g.with_class(&c[1], vec![sep; dim]))
        .unwrap();
    (AnalyticDenoiser::new(g), c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spearman_invariant_under_monotone_maps(
        pairs in prop::collection::vec((-50i32..50, -50i32..50), 3..40),
        shift in -10.0f64..10.0,
        scale in 0.1f64..5.0,
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        if let Ok(rho) = spearman_rho(&a, &b) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
            let a2: Vec<f64> = a.iter().map(|x| (scale * x + shift).exp()).collect();
            let b2: Vec<f64> = b.iter().map(|x| x.powi(3)).collect();
            prop_assert!((spearman_rho(&a2, &b2).unwrap() - rho).abs() < 1e-12);
            let flipped: Vec<f64> = b.iter().map(|x| -x).collect();
            prop_assert!((spearman_rho(&a, &flipped).unwrap() + rho).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_is_a_distribution(logs in prop::collection::vec(-1e4f64..1e4, 1..8)) {
        let ids = (0..logs.len()).map(|i| i.to_string()).collect();
        let p = Posterior::from_log_likelihoods(ids, logs.clone());
        prop_assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(p.argmax, logs.iter().position(|&l| l == max).unwrap());
    }

    #[test]
    fn jensen_gap_bounds(logs in prop::collection::vec(-1e3f64..1e3, 1..20)) {
        let n = logs.len() as f64;
        let gap = Aggregation::LogSumExp.apply(&logs) - Aggregation::JensenSum.apply(&logs) / n;
        prop_assert!(gap >= -1e-9);
        // log-mean-exp never exceeds the max; the mean is at least max/N above the rest.
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(Aggregation::LogSumExp.apply(&logs) <= max + 1e-9);
        prop_assert!(Aggregation::LogSumExp.apply(&logs) >= max - n.ln() - 1e-9);
    }

    #[test]
    fn votes_partition_examples(
        rows in prop::collection::vec((0usize..3, 0usize..3, 0usize..3), 1..50),
    ) {
        let a: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let b: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let c: Vec<usize> = rows.iter().map(|r| r.2).collect();
        let v = votes_from_predictions(&a, &b, &c).unwrap();
        prop_assert_eq!(v.total(), rows.len());
        let swapped = votes_from_predictions(&b, &a, &c).unwrap();
        prop_assert_eq!((swapped.only_a, swapped.only_b), (v.only_b, v.only_a));
    }

    #[test]
    fn winoground_scores_are_fractions(s in prop::collection::vec(prop::array::uniform4(-5i8..5), 1..30)) {
        let scores: Vec<[[f64; 2]; 2]> =
            s.iter().map(|v| [[v[0] as f64, v[1] as f64], [v[2] as f64, v[3] as f64]]).collect();
        let r = image_text_scores(&scores).unwrap();
        prop_assert!(r.group_score <= r.image_score.min(r.text_score) + 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.image_score) && (0.0..=1.0).contains(&r.text_score));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dataset_roundtrip(seed in any::<u64>(), size in 1usize..6, task in 0usize..6) {
        let ex = build_task_suite(&TaskSpec::new(Task::ALL[task]), size, seed, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_examples(&p, &ex).unwrap();
        prop_assert_eq!(read_examples(&p).unwrap(), ex);
    }

    #[test]
    fn estimates_are_deterministic_and_order_free(
        seed in any::<u64>(),
        x in prop::collection::vec(-1.0f64..1.0, 4),
        trials in 1usize..5,
    ) {
        let s = sched(20);
        let (model, c) = two_class(4, 0.4);
        let cfg = EstimatorConfig { trials, timesteps: 20, seed, ..Default::default() };
        let bank = Estimator::bank_for(&cfg, 4, &s);
        let est = Estimator::new(&model, &s, &cfg, &bank).unwrap();
        let fwd = est.estimate_many(&x, &[c[0].clone(), c[1].clone()]).unwrap();
        let rev = est.estimate_many(&x, &[c[1].clone(), c[0].clone()]).unwrap();
        prop_assert_eq!(&fwd[0], &rev[1]);
        prop_assert_eq!(&fwd[1], &rev[0]);
        let again = Estimator::bank_for(&cfg, 4, &s);
        let est2 = Estimator::new(&model, &s, &cfg, &again).unwrap();
        prop_assert_eq!(&est2.estimate(&x, &c[0]).unwrap(), &fwd[0]);
        prop_assert_eq!(fwd[0].per_trial_logs.len(), trials);
    }

    #[test]
    fn fast_path_matches_stepwise(seed in any::<u64>(), x in prop::collection::vec(-1.0f64..1.0, 3)) {
        let s = sched(15);
        let (model, c) = two_class(3, 0.3);
        let cfg = EstimatorConfig { trials: 3, timesteps: 15, seed, proposal_correction: true, ..Default::default() };
        let bank = Estimator::bank_for(&cfg, 3, &s);
        let fast = Estimator::new(&model, &s, &cfg, &bank).unwrap();
        let slow = Estimator::new(&model, &s, &cfg, &bank).unwrap().stepwise();
        for cand in &c {
            let (a, b) = (fast.estimate(&x, cand).unwrap(), slow.estimate(&x, cand).unwrap());
            for (u, v) in a.per_trial_logs.iter().zip(&b.per_trial_logs) {
                prop_assert!((u - v).abs() <= 1e-8 * u.abs().max(1.0), "{} vs {}", u, v);
            }
        }
    }
}
