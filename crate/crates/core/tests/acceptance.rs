//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any of them failed.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use selfeval::benchmark::{
    build_task_suite, build_winoground_pairs, pooled_blind_model, training_set, Task, TaskSpec, ORACLE_CLASS_VAR,
};
use selfeval::cli::scale_fixture_scores;
use selfeval::condition::{Condition, ConditionVocabulary};
use selfeval::config::RunConfig;
use selfeval::denoiser::{train_mlp, AnalyticDenoiser, Denoiser, GaussianClassModel, TrainConfig};
use selfeval::estimator::{estimate_log_likelihood, Aggregation, Estimator, EstimatorConfig};
use selfeval::eval::{jensen_summary, summarize, worker_pool, Evaluator, ExampleOutcome, ModelSource};
use selfeval::metrics::{spearman_rho, votes_from_predictions, TaskResult, VoteTally};
use selfeval::rng::{lane, normal_vec, StreamKey};
use selfeval::schedule::{build_schedule, NoiseSchedule, ScheduleKind};
use selfeval::trajectory::forward_trajectory;
use selfeval::winoground::Scorer;

type Outcome = Result<String, String>;

fn report(results: &mut Vec<bool>, name: &str, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let r = f();
    let secs = start.elapsed().as_secs_f64();
    let line = match &r {
        Ok(d) => format!("PASS {name}: {d} ({secs:.1}s)"),
        Err(d) => format!("FAIL {name}: {d} ({secs:.1}s)"),
    };
    // Written straight to stdout so the line survives output capture.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    results.push(r.is_ok());
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI).ln() + var.ln() + (x - mean) * (x - mean) / var)
}

/// Exact reverse transition for N(m, s²) data, written out from scratch.
fn reverse_params(x_t: f64, t: usize, m: f64, s2: f64, sched: &NoiseSchedule) -> (f64, f64) {
    let ab = |k: usize| if k == 0 { 1.0 } else { sched.alpha_bars()[k - 1] };
    let (ab_t, ab_prev) = (ab(t), ab(t - 1));
    let beta = 1.0 - ab_t / ab_prev;
    let denom = ab_t * s2 + 1.0 - ab_t;
    let post_mean = m + ab_t.sqrt() * s2 / denom * (x_t - ab_t.sqrt() * m);
    let post_var = s2 * (1.0 - ab_t) / denom;
    let c1 = ab_prev.sqrt() * beta / (1.0 - ab_t);
    let c2 = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
    let tilde = (1.0 - ab_prev) * beta / (1.0 - ab_t);
    (c1 * post_mean + c2 * x_t, (tilde + c1 * c1 * post_var).max(1e-12))
}

fn term_by_term() -> Outcome {
    let sched = build_schedule(ScheduleKind::Linear, 3, 0.1, 0.5).map_err(|e| e.to_string())?;
    let (m, s2, x0) = (0.3, 0.5, 0.8);
    let c = Condition::Class(0);
    let model = AnalyticDenoiser::new(
        GaussianClassModel::new(1, s2).and_then(|g| g.with_class(&c, vec![m])).map_err(|e| e.to_string())?,
    );
    let cfg = EstimatorConfig { trials: 1, timesteps: 3, seed: 11, ..Default::default() };
    let est = estimate_log_likelihood(&[x0], &c, &model, &sched, &cfg).map_err(|e| e.to_string())?;

    // Markov recurrence from the raw forward draws.
    let traj = forward_trajectory(&[x0], &sched, 11);
    let mut xs = vec![x0];
    for t in 1..=3 {
        let b = sched.betas()[t - 1];
        xs.push((1.0 - b).sqrt() * xs[t - 1] + b.sqrt() * traj.noises[t - 1][0]);
    }
    let mut expected = ln_normal(xs[3], 0.0, 1.0);
    for t in 1..=3 {
        let (mean, var) = reverse_params(xs[t], t, m, s2, &sched);
        expected += ln_normal(xs[t - 1], mean, var);
    }
    let err = (est.log_likelihood - expected).abs();
    if err <= 1e-9 {
        Ok(format!("estimate {:.12} vs straight-line {expected:.12}, |diff| {err:.1e}", est.log_likelihood))
    } else {
        Err(format!("estimate {} vs straight-line {expected}, |diff| {err:.3e} > 1e-9", est.log_likelihood))
    }
}

fn bayes_agreement() -> Outcome {
    let sigma = 0.1f64;
    let means = [[-3.0 * sigma, -3.0 * sigma], [3.0 * sigma, -3.0 * sigma], [-3.0 * sigma, 3.0 * sigma], [3.0 * sigma, 3.0 * sigma]];
    let conds: Vec<Condition> = (0..4).map(Condition::Class).collect();
    let mut gm = GaussianClassModel::new(2, sigma * sigma).map_err(|e| e.to_string())?;
    for (c, mu) in conds.iter().zip(&means) {
        gm.insert(c, mu.to_vec()).map_err(|e| e.to_string())?;
    }
    let model = AnalyticDenoiser::new(gm);
    let sched = RunConfig::default().schedule.build().and_then(|s| s.rescaled(50)).map_err(|e| e.to_string())?;
    let cfg = EstimatorConfig {
        trials: 10,
        timesteps: 50,
        seed: 3,
        aggregation: Aggregation::LogSumExp,
        proposal_correction: true,
        ..Default::default()
    };
    let bank = Estimator::bank_for(&cfg, 2, &sched);
    let est = Estimator::new(&model, &sched, &cfg, &bank).map_err(|e| e.to_string())?;
    let mut rng = StreamKey::new(3, 0, 0, lane::FIXTURE).rng();
    let (mut agree, mut correct) = (0, 0);
    for i in 0..1000u64 {
        let k = rng.random_range(0..4);
        let z = normal_vec(StreamKey::new(3, i, 1, lane::FIXTURE), 2);
        let x = [means[k][0] + sigma * z[0], means[k][1] + sigma * z[1]];
        let bayes = (0..4)
            .map(|j| -((x[0] - means[j][0]).powi(2) + (x[1] - means[j][1]).powi(2)))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, v)| if v > best.1 { (j, v) } else { best })
            .0;
        let p = est.classify(&x, &conds).map_err(|e| e.to_string())?;
        agree += usize::from(p.argmax == bayes);
        correct += usize::from(bayes == k);
    }
    let pct = agree as f64 / 10.0;
    let detail = format!("agreement {pct:.1}% on 1000 samples (Bayes accuracy {:.1}%)", correct as f64 / 10.0);
    if pct >= 98.0 { Ok(detail) } else { Err(detail) }
}

fn suites(tasks: &[Task], size: usize, seeds: &[u64]) -> Result<Vec<selfeval::benchmark::ItmExample>, String> {
    let mut out = Vec::new();
    for &t in tasks {
        for &s in seeds {
            out.extend(build_task_suite(&TaskSpec::new(t), size, s, 16).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn task_table(outcomes: &[ExampleOutcome]) -> Result<Vec<TaskResult>, String> {
    let refs: Vec<&ExampleOutcome> = outcomes.iter().collect();
    Task::ALL.iter().map(|&t| summarize(t, &refs).map_err(|e| e.to_string())).collect()
}

fn fmt_table(rows: &[TaskResult], f: impl Fn(&TaskResult) -> String) -> String {
    rows.iter().map(|r| format!("{} {}", r.task, f(r))).collect::<Vec<_>>().join(", ")
}

fn run_suites(source: ModelSource, cfg: EstimatorConfig, seeds: &[u64]) -> Result<Vec<ExampleOutcome>, String> {
    let sched = RunConfig::default().eval_schedule().map_err(|e| e.to_string())?;
    let examples = suites(&Task::ALL, 1000, seeds)?;
    let ev = Evaluator { source, sched: &sched, scorer: Scorer::SelfEval, cfg };
    let pool = worker_pool(workers()).map_err(|e| e.to_string())?;
    ev.evaluate(&examples, &pool).map_err(|e| e.to_string())
}

fn chance_calibration() -> Outcome {
    let blind = pooled_blind_model(16);
    let outcomes = run_suites(ModelSource::Shared(&blind), EstimatorConfig::default(), &[0, 1, 2])?;
    let rows = task_table(&outcomes)?;
    let detail = fmt_table(&rows, |r| format!("{:.2} (chance {:.2})", r.accuracy_mean_pct, r.chance_pct));
    if rows.iter().all(|r| (r.accuracy_mean_pct - r.chance_pct).abs() <= 3.0) { Ok(detail) } else { Err(detail) }
}

fn learned_run() -> Outcome {
    let rc = RunConfig::default();
    let train_sched = rc.training_schedule().map_err(|e| e.to_string())?;
    let data = training_set(rc.benchmark.train_size, rc.master_seed, 16).map_err(|e| e.to_string())?;
    let tc = TrainConfig { seed: rc.master_seed, ..rc.trainer.clone() };
    let (model, log) = train_mlp(&data, &ConditionVocabulary::scene(), &train_sched, &tc).map_err(|e| e.to_string())?;
    let outcomes = run_suites(ModelSource::Shared(&model), rc.estimator_config(rc.master_seed), &rc.repeat_seeds())?;
    let rows = task_table(&outcomes)?;
    let passing = rows.iter().filter(|r| r.delta_pct >= 15.0).count();
    let detail = format!(
        "{passing}/6 tasks at chance+15 (probe mse {:.4} -> {:.4}); {}",
        log.initial_mse,
        log.final_mse(),
        fmt_table(&rows, |r| format!("{:.2} ({:+.2})", r.accuracy_mean_pct, r.delta_pct))
    );
    if passing >= 5 { Ok(detail) } else { Err(detail) }
}

fn winoground() -> Outcome {
    let sched = RunConfig::default().eval_schedule().map_err(|e| e.to_string())?;
    let pool = worker_pool(workers()).map_err(|e| e.to_string())?;
    let cfg = EstimatorConfig::default();
    let pairs = build_winoground_pairs(200, 0, 16).map_err(|e| e.to_string())?;
    let ev = Evaluator {
        source: ModelSource::Oracle { class_var: ORACLE_CLASS_VAR, image_size: 16 },
        sched: &sched,
        scorer: Scorer::SelfEval,
        cfg: cfg.clone(),
    };
    let oracle = ev.winoground(&pairs, &pool).map_err(|e| e.to_string())?.as_pct();
    let se = scale_fixture_scores(Scorer::SelfEval, 200, 0, &sched, &cfg, &pool).map_err(|e| e.to_string())?.as_pct();
    let elbo = scale_fixture_scores(Scorer::Elbo, 200, 0, &sched, &cfg, &pool).map_err(|e| e.to_string())?.as_pct();
    let gap = se.image_score - elbo.image_score;
    let detail = format!(
        "oracle pairs image {:.1} text {:.1} group {:.1}; scale fixture image SelfEval {:.1} vs ELBO {:.1} (gap {gap:.1})",
        oracle.image_score, oracle.text_score, oracle.group_score, se.image_score, elbo.image_score
    );
    if oracle.image_score >= 90.0 && oracle.text_score >= 90.0 && gap >= 20.0 { Ok(detail) } else { Err(detail) }
}

fn oracle_source() -> ModelSource<'static> {
    ModelSource::Oracle { class_var: ORACLE_CLASS_VAR, image_size: 16 }
}

fn seed_stability() -> Outcome {
    let outcomes = run_suites(oracle_source(), EstimatorConfig::default(), &[0, 1, 2])?;
    let rows = task_table(&outcomes)?;
    let detail = fmt_table(&rows, |r| format!("{:.2}±{:.2}", r.accuracy_mean_pct, r.accuracy_std_pct));
    if rows.iter().all(|r| r.accuracy_std_pct <= 1.5) { Ok(detail) } else { Err(detail) }
}

fn aggregation_bound() -> Outcome {
    let cfg = EstimatorConfig { proposal_correction: true, ..Default::default() };
    let outcomes = run_suites(oracle_source(), cfg, &[0])?;
    let s = jensen_summary(&outcomes).ok_or("no estimates")?;
    // The sum-based gap, reported for reference.
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for e in outcomes.iter().flat_map(|o| &o.estimates) {
        let g = Aggregation::LogSumExp.apply(&e.per_trial_logs) - Aggregation::JensenSum.apply(&e.per_trial_logs);
        lo = lo.min(g);
        hi = hi.max(g);
    }
    let detail = format!(
        "{} estimates, logSumExp minus trial mean in [{:.4}, {:.4}] vs [0, ln N = {:.4}], {} violations; \
         logSumExp minus trial sum spans [{lo:.1}, {hi:.1}]",
        s.estimates, s.min_gap, s.max_gap, s.ln_n, s.violations
    );
    if s.violations == 0 { Ok(detail) } else { Err(detail) }
}

fn complexity() -> Outcome {
    let rc = RunConfig::default();
    let data = training_set(64, 5, 16).map_err(|e| e.to_string())?;
    let tc = TrainConfig { epochs: 0, probe_size: 16, ..TrainConfig::default() };
    let base = rc.training_schedule().map_err(|e| e.to_string())?;
    let (model, _) = train_mlp(&data, &ConditionVocabulary::scene(), &base, &tc).map_err(|e| e.to_string())?;
    let mut conds: Vec<Condition> = Vec::new();
    for s in &data {
        if !conds.contains(&s.condition) {
            conds.push(s.condition.clone());
        }
    }
    let images: Vec<&[f64]> = data.iter().take(8).map(|s| s.x0.as_slice()).collect();
    let timed = |n: usize, t: usize, c: usize| -> Result<f64, String> {
        let sched = base.rescaled(t).map_err(|e| e.to_string())?;
        let cfg = EstimatorConfig { trials: n, timesteps: t, ..Default::default() };
        let bank = Estimator::bank_for(&cfg, model.dim(), &sched);
        let est = Estimator::new(&model, &sched, &cfg, &bank).map_err(|e| e.to_string())?;
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let start = Instant::now();
            for x in &images {
                est.estimate_many(x, &conds[..c]).map_err(|e| e.to_string())?;
            }
            best = best.min(start.elapsed().as_secs_f64());
        }
        Ok(best)
    };
    let ratios = [
        ("N", timed(16, 50, 4)? / timed(4, 50, 4)?),
        ("T", timed(8, 100, 4)? / timed(8, 25, 4)?),
        ("C", timed(8, 50, 16)? / timed(8, 50, 4)?),
    ];
    let detail = ratios.iter().map(|(k, r)| format!("{k} x4 -> x{r:.2}")).collect::<Vec<_>>().join(", ");
    if ratios.iter().all(|(_, r)| (2.8..=5.2).contains(r)) { Ok(detail) } else { Err(detail) }
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_selfeval")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("selfeval {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn read(p: &Path) -> Result<String, String> {
    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("run");
    let root = root.to_str().ok_or("non-utf8 temp path")?;
    let common = ["--seed", "4", "--suite-size", "40", "--repeats", "3", "--pairs", "20", "--train-size", "400"];
    let with = |extra: &[&str]| -> Vec<String> { common.iter().chain(extra).map(|s| s.to_string()).collect() };
    let run = |cmd: &str, extra: &[&str]| -> Result<(), String> {
        let mut args = vec![cmd.to_string()];
        args.extend(with(extra));
        cli(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    run("generate", &["-o", root])?;
    run("train", &["-o", root, "--epochs", "2"])?;
    let ckpt = format!("{root}/model.ckpt");
    let data = format!("{root}/datasets");
    let mut outputs = Vec::new();
    for w in ["1", "8"] {
        let out = format!("{root}/eval-{w}");
        run("evaluate", &["-o", &out, "--data", &data, "--checkpoint", &ckpt, "--workers", w])?;
        outputs.push(out);
    }
    let strip = |s: String| s.lines().filter(|l| !l.trim_start().starts_with("\"runId\"")).collect::<Vec<_>>().join("\n");
    for f in ["report.json", "tasks.csv", "bar_chart.csv", "predictions.csv", "estimates.jsonl"] {
        let a = read(&Path::new(&outputs[0]).join(f))?;
        let b = read(&Path::new(&outputs[1]).join(f))?;
        let same = if f == "report.json" { strip(a) == strip(b) } else { a == b };
        if !same {
            return Err(format!("{f} differs between 1 and 8 workers"));
        }
    }
    Ok("report.json (runId excluded), tasks.csv, bar_chart.csv, predictions.csv, estimates.jsonl identical for 1 vs 8 workers".into())
}

fn brute_rho(a: &[f64], b: &[f64]) -> f64 {
    // Average ranks by counting, then plain Pearson.
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let less = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

fn metric_oracles() -> Outcome {
    let mut rng = StreamKey::new(9, 0, 0, lane::FIXTURE).rng();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(3..40);
        // Small integer ranges force ties.
        let levels = rng.random_range(2..12);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect();
        let want = brute_rho(&a, &b);
        match spearman_rho(&a, &b) {
            Ok(got) => worst = worst.max((got - want).abs()),
            Err(_) if !want.is_finite() => {}
            Err(e) => return Err(format!("spearman_rho failed on a defined input: {e}")),
        }
    }
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let k = rng.random_range(2..6);
        let draw = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> { (0..n).map(|_| r.random_range(0..k)).collect() };
        let (pa, pb, truth) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let mut want = VoteTally { only_a: 0, only_b: 0, both: 0, neither: 0 };
        for i in 0..n {
            match (pa[i] == truth[i], pb[i] == truth[i]) {
                (true, true) => want.both += 1,
                (true, false) => want.only_a += 1,
                (false, true) => want.only_b += 1,
                (false, false) => want.neither += 1,
            }
        }
        let got = votes_from_predictions(&pa, &pb, &truth).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("vote tally {got:?} vs recount {want:?}"));
        }
    }
    let detail = format!("max |rho - brute force| {worst:.1e} over 1000 tied vectors; 1000 vote fixtures recounted");
    if worst <= 1e-12 { Ok(detail) } else { Err(detail) }
}

fn main() {
    let mut results = Vec::new();
    report(&mut results, "term-by-term oracle", term_by_term);
    report(&mut results, "bayes agreement", bayes_agreement);
    report(&mut results, "chance calibration", chance_calibration);
    report(&mut results, "end-to-end learned run", learned_run);
    report(&mut results, "winoground scores", winoground);
    report(&mut results, "seed stability", seed_stability);
    report(&mut results, "aggregation bound", aggregation_bound);
    report(&mut results, "complexity", complexity);
    report(&mut results, "determinism", determinism);
    report(&mut results, "metric oracles", metric_oracles);
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
