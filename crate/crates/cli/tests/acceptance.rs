//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test -p dldp --test acceptance -- --nocapture` to see the
//! summary lines.

mod support;

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dldp_core::discovery::{adjusted_rand_index, discover, kmeans, write_discovery_log, DiscoveryConfig, OuterRecord};
use dldp_core::eval::{evaluate_index, gallery_sweep, EvalConfig, RankMethod};
use dldp_core::net::{
    fine_tune_domain, fine_tune_hard, mine_hard_negatives, train_autoencoder, train_id_baseline, Autoencoder, EmbedNet,
    InputPipeline, NetConfig, TrainSchedule,
};
use dldp_core::pool::{domain_pool, generate_synthetic, DataPool, Sample, SourceAssignment, Split, SynthSpec};
use dldp_core::reid::{build_gallery_index, DomainBank, GalleryIndex};
use dldp_core::{seeded_rng, Error};
use rand::Rng;

const SEEDS: u64 = 5;

fn report(n: usize, ok: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let timed = elapsed < limit;
    let verdict = if ok && timed { "PASS" } else { "FAIL" };
    println!(
        "{verdict} criterion {n}: {detail} [{:.2}s, limit {}s]",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(ok, "criterion {n} failed: {detail}");
    assert!(timed, "criterion {n} exceeded {}s", limit.as_secs());
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn net_config(input_dim: usize, standardize: bool) -> NetConfig {
    NetConfig {
        input_dim,
        hidden_dims: vec![64],
        embed_dim: 32,
        head_dim: 2,
        standardize_input: standardize,
    }
}

fn baseline_schedule() -> TrainSchedule {
    TrainSchedule {
        total_iters: 3000,
        lr_drop_every: 1000,
        ..TrainSchedule::baseline()
    }
}

fn planted_modes(pool: &DataPool, modes: &[usize], train: &DataPool) -> Vec<usize> {
    pool.samples()
        .iter()
        .zip(modes)
        .filter(|(s, _)| train.get(&s.sample_id).is_some())
        .map(|(_, &m)| m)
        .collect()
}

fn labels_of(train: &DataPool, assignments: &std::collections::BTreeMap<String, usize>) -> Vec<usize> {
    train.samples().iter().map(|s| assignments[&s.sample_id]).collect()
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let t = Instant::now();
    let mut rng = seeded_rng(101);
    let shapes: [(usize, &[usize], usize, usize); 3] = [(5, &[], 3, 4), (6, &[8], 4, 5), (7, &[9, 6], 5, 3)];
    let eps = 1e-4;
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for (input, hidden, embed, head) in shapes {
        let cfg = NetConfig {
            input_dim: input,
            hidden_dims: hidden.to_vec(),
            embed_dim: embed,
            head_dim: head,
            standardize_input: false,
        };
        let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let labels: Vec<usize> = (0..6).map(|i| i % head).collect();

        let mut net = EmbedNet::new(cfg.clone(), &mut rng).unwrap();
        let (_, g) = net.loss_and_grads(&refs, &labels).unwrap();
        for _ in 0..25 {
            let i = rng.random_range(0..net.num_params());
            let orig = net.param(i);
            *net.param_mut(i) = orig + eps;
            let lp = net.loss_and_grads(&refs, &labels).unwrap().0;
            *net.param_mut(i) = orig - eps;
            let lm = net.loss_and_grads(&refs, &labels).unwrap().0;
            *net.param_mut(i) = orig;
            worst = worst.max(rel_err(g.get(i), (lp - lm) / (2.0 * eps)));
            checked += 1;
        }

        let mut ae = Autoencoder::new(cfg, &mut rng).unwrap();
        let (_, g) = ae.loss_and_grads(&refs).unwrap();
        for _ in 0..25 {
            let i = rng.random_range(0..ae.num_params());
            let orig = ae.param(i);
            *ae.param_mut(i) = orig + eps;
            let lp = ae.loss_and_grads(&refs).unwrap().0;
            *ae.param_mut(i) = orig - eps;
            let lm = ae.loss_and_grads(&refs).unwrap().0;
            *ae.param_mut(i) = orig;
            worst = worst.max(rel_err(g.get(i), (lp - lm) / (2.0 * eps)));
            checked += 1;
        }
    }
    report(
        1,
        checked >= 100 && worst < 1e-3,
        t.elapsed(),
        Duration::from_secs(10),
        &format!("{checked} coordinates, max relative error {worst:.2e}"),
    );
}

#[test]
fn criterion_2_metrics_equal_brute_force() {
    let t = Instant::now();
    let mut rng = seeded_rng(202);
    let (mut checked, mut worst, mut case) = (0usize, 0.0f64, 0usize);
    while checked < 50 && case < 200 {
        let inst = oracle::random_instance(&mut rng);
        match oracle::compare(&inst, 10) {
            Ok(Some(dev)) => {
                worst = worst.max(dev);
                checked += 1;
            }
            Ok(None) => {}
            Err(e) => panic!("instance {case}: {e}"),
        }
        case += 1;
    }
    report(
        2,
        checked == 50 && worst <= 1e-12,
        t.elapsed(),
        Duration::from_secs(10),
        &format!("{checked} instances, max deviation {worst:.1e}"),
    );
}

/// Minimum inertia over every labelling of `points` into `k` non-empty clusters.
fn exhaustive_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        if counts.iter().all(|&c| c > 0) {
            let inertia: f64 = points
                .iter()
                .zip(&labels)
                .map(|(p, &l)| {
                    p.iter()
                        .zip(&sums[l])
                        .map(|(v, s)| (v - s / counts[l] as f64).powi(2))
                        .sum::<f64>()
                })
                .sum();
            best = best.min(inertia);
        }
        // Labels are generated with label 0 fixed for the first point to
        // skip permuted duplicates.
        let mut i = n - 1;
        loop {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            if i == 1 {
                return best;
            }
            i -= 1;
        }
    }
}

/// `n` points in the plane: `k` centres uniform in [-3, 3]^2 with Gaussian
/// scatter `sigma` around them. `sigma = None` draws uniform points instead.
fn micro_instance(rng: &mut dldp_core::Rng, n: usize, k: usize, sigma: Option<f64>) -> Vec<Vec<f64>> {
    let centres: Vec<[f64; 2]> = (0..k).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
    (0..n)
        .map(|i| match sigma {
            Some(s) => {
                let c = centres[i % k];
                let normal = rand_distr::Normal::new(0.0, s).unwrap();
                vec![c[0] + rng.sample(normal), c[1] + rng.sample(normal)]
            }
            None => vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
        })
        .collect()
}

/// Largest relative excess of best-of-25 inertia over the exhaustive optimum,
/// and the number of instances where it is positive.
fn excess(rng: &mut dldp_core::Rng, cases: usize, sigma: Option<f64>) -> (f64, usize) {
    let (mut worst, mut misses) = (0.0f64, 0);
    for case in 0..cases {
        let n = rng.random_range(6..=12);
        let k = 2 + case % 2;
        let points = micro_instance(rng, n, k, sigma);
        let opt = exhaustive_inertia(&points, k);
        let got = kmeans(&points, k, 25, rng).unwrap().inertia;
        let e = (got - opt) / opt.max(1e-12);
        worst = worst.max(e);
        misses += usize::from(e > 1e-9);
    }
    (worst, misses)
}

#[test]
fn criterion_3_kmeans_reaches_exhaustive_optimum() {
    let t = Instant::now();
    let (worst, _) = excess(&mut seeded_rng(303), 20, Some(1.0));
    let (_, uniform_misses) = excess(&mut seeded_rng(304), 100, None);
    report(
        3,
        worst <= 1e-9,
        t.elapsed(),
        Duration::from_secs(30),
        &format!("20 clustered instances, max relative excess inertia {worst:.1e} (informational: misses on {uniform_misses}/100 structure-less uniform instances)"),
    );
}

fn planted_spec() -> SynthSpec {
    SynthSpec {
        num_modes: 4,
        persons_per_mode: 10,
        images_per_person: 10,
        person_spread: 0.3,
        ..SynthSpec::default()
    }
}

fn discovery_config() -> DiscoveryConfig {
    DiscoveryConfig {
        k: 4,
        inner_iters: 500,
        ..DiscoveryConfig::default()
    }
}

struct Planted {
    ari: Vec<f64>,
    histories: Vec<Vec<OuterRecord>>,
    elapsed: Duration,
}

fn planted_runs() -> &'static Planted {
    static RUNS: OnceLock<Planted> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t = Instant::now();
        let spec = planted_spec();
        let input = InputPipeline::default();
        let (mut ari, mut histories) = (Vec::new(), Vec::new());
        for seed in 0..SEEDS {
            let synth = generate_synthetic(&spec, &mut seeded_rng(seed)).unwrap();
            let train = synth.pool.training_pool();
            let modes = planted_modes(&synth.pool, &synth.modes, &train);
            let mut rng = seeded_rng(seed);
            let cfg = net_config(spec.feature_dim(), true);
            let (base, _) = train_id_baseline(&train, &cfg, &baseline_schedule(), &input, &mut rng).unwrap();
            let model = discover(&train, &base, &discovery_config(), &input, &mut rng).unwrap();
            ari.push(adjusted_rand_index(&labels_of(&train, &model.assignments), &modes).unwrap());
            histories.push(model.history);
        }
        Planted {
            ari,
            histories,
            elapsed: t.elapsed(),
        }
    })
}

#[test]
fn criterion_4_discovery_recovers_planted_modes() {
    let runs = planted_runs();
    let m = median(&runs.ari);
    let per: Vec<String> = runs.ari.iter().map(|a| format!("{a:.3}")).collect();
    report(
        4,
        m >= 0.8,
        runs.elapsed,
        Duration::from_secs(300),
        &format!("median ARI {m:.3} (per seed {})", per.join(", ")),
    );
}

struct Biased {
    sup_gap: Vec<f64>,
    ae_gap: Vec<f64>,
    histories: Vec<Vec<OuterRecord>>,
    elapsed: Duration,
}

fn biased_runs() -> &'static Biased {
    static RUNS: OnceLock<Biased> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t = Instant::now();
        let spec = SynthSpec {
            sources: 4,
            source_assignment: SourceAssignment::PerImage,
            source_bias: 20.0,
            ..planted_spec()
        };
        let input = InputPipeline::default();
        let ae_sched = TrainSchedule {
            total_iters: 3000,
            lr0: 0.01,
            lr_drop_every: 0,
            ..TrainSchedule::baseline()
        };
        let (mut sup_gap, mut ae_gap, mut histories) = (Vec::new(), Vec::new(), Vec::new());
        for seed in 0..SEEDS {
            let synth = generate_synthetic(&spec, &mut seeded_rng(seed)).unwrap();
            let train = synth.pool.training_pool();
            let modes = planted_modes(&synth.pool, &synth.modes, &train);
            let sources: Vec<usize> = train
                .samples()
                .iter()
                .map(|s| s.source_id.trim_start_matches("src").parse().unwrap())
                .collect();
            let gap = |labels: &[usize]| {
                adjusted_rand_index(labels, &modes).unwrap() - adjusted_rand_index(labels, &sources).unwrap()
            };
            let mut rng = seeded_rng(seed);
            let cfg = net_config(spec.feature_dim(), true);
            let (base, _) = train_id_baseline(&train, &cfg, &baseline_schedule(), &input, &mut rng).unwrap();
            let sup = discover(&train, &base, &discovery_config(), &input, &mut rng).unwrap();
            sup_gap.push(gap(&labels_of(&train, &sup.assignments)));
            let (ae, _) = train_autoencoder(&train, &cfg, &ae_sched, &input, &mut rng).unwrap();
            let unsup = discover(&train, &ae.into_encoder(), &discovery_config(), &input, &mut rng).unwrap();
            ae_gap.push(gap(&labels_of(&train, &unsup.assignments)));
            histories.push(sup.history);
            histories.push(unsup.history);
        }
        Biased {
            sup_gap,
            ae_gap,
            histories,
            elapsed: t.elapsed(),
        }
    })
}

#[test]
fn criterion_5_supervised_init_resists_source_bias() {
    let runs = biased_runs();
    let (s, a) = (median(&runs.sup_gap), median(&runs.ae_gap));
    report(
        5,
        s > 0.0 && a < s,
        runs.elapsed,
        Duration::from_secs(600),
        &format!("median ARI(modes) - ARI(sources): supervised {s:.3}, autoencoder {a:.3}"),
    );
}

struct Retrieval {
    bank: DomainBank,
    index: GalleryIndex,
    probes: Vec<Sample>,
}

/// Baseline, discovery and per-domain fine-tuning on a pool with held-out
/// probe and gallery identities.
fn retrieval_setup(seed: u64) -> Retrieval {
    let spec = SynthSpec {
        images_per_person: 20,
        test_persons_per_mode: 50,
        ..SynthSpec::default()
    };
    let input = InputPipeline::default();
    let synth = generate_synthetic(&spec, &mut seeded_rng(seed)).unwrap();
    let train = synth.pool.training_pool();
    let mut rng = seeded_rng(seed);
    let (base, _) =
        train_id_baseline(&train, &net_config(spec.feature_dim(), true), &baseline_schedule(), &input, &mut rng)
            .unwrap();
    let dcfg = discovery_config();
    let model = discover(&train, &base, &dcfg, &input, &mut rng).unwrap();
    let domain_sched = TrainSchedule {
        total_iters: 2000,
        ..TrainSchedule::domain()
    };
    let hard_sched = TrainSchedule {
        total_iters: 500,
        ..TrainSchedule::hard_negative()
    };
    let nets = (0..dcfg.k)
        .map(|d| {
            let pool = domain_pool(&train, &model.assignments, d, dcfg.k).unwrap();
            let mut r = seeded_rng(seed + d as u64);
            match fine_tune_domain(&base, &pool, &domain_sched, &input, &mut r) {
                Ok((net, _)) => {
                    let hard = mine_hard_negatives(&net, &pool, &input).unwrap();
                    fine_tune_hard(&net, &pool, &hard, &hard_sched, &input, &mut r).unwrap()
                }
                Err(Error::TooFewIdentities(_) | Error::EmptyPool) => base.clone(),
                Err(e) => panic!("domain {d}: {e}"),
            }
        })
        .collect();
    let bank = DomainBank::new(base, nets, model).unwrap();
    let gallery = synth.pool.split(Split::Gallery);
    let index = build_gallery_index(&bank, &gallery, &input).unwrap();
    let probes = synth.pool.samples().iter().filter(|s| s.split == Split::Probe).cloned().collect();
    Retrieval { bank, index, probes }
}

#[test]
fn criterion_6_domain_embeddings_beat_baseline() {
    let t = Instant::now();
    let input = InputPipeline::default();
    let (mut not_worse, mut strict, mut lines) = (0, 0, Vec::new());
    for seed in 0..SEEDS {
        let r = retrieval_setup(seed);
        let probes: Vec<&Sample> = r.probes.iter().collect();
        let dldp = evaluate_index(&r.bank, &r.index, &probes, &EvalConfig::default(), &input).unwrap();
        let base_cfg = EvalConfig {
            method: RankMethod::Baseline,
            ..EvalConfig::default()
        };
        let base = evaluate_index(&r.bank, &r.index, &probes, &base_cfg, &input).unwrap();
        not_worse += usize::from(dldp.rank1 >= base.rank1);
        strict += usize::from(dldp.rank1 > base.rank1);
        lines.push(format!("{:.3}/{:.3}", dldp.rank1, base.rank1));
    }
    report(
        6,
        not_worse == SEEDS as usize && strict >= 3,
        t.elapsed(),
        Duration::from_secs(600),
        &format!("Rank-1 DLDP/baseline per seed {}; strict wins {strict}", lines.join(", ")),
    );
}

#[test]
fn criterion_7_map_falls_with_gallery_size() {
    let t = Instant::now();
    let input = InputPipeline::default();
    let sizes = [50, 100, 200, 400];
    let mut per_size = vec![Vec::new(); sizes.len()];
    for seed in 0..SEEDS {
        let r = retrieval_setup(seed + 100);
        let probes: Vec<&Sample> = r.probes.iter().collect();
        let rows = gallery_sweep(
            &r.bank,
            &r.index,
            &probes,
            &sizes,
            &EvalConfig::default(),
            &input,
            &mut seeded_rng(seed),
        )
        .unwrap();
        for (i, row) in rows.iter().enumerate() {
            per_size[i].push(row.map);
        }
    }
    let medians: Vec<f64> = per_size.iter().map(|v| median(v)).collect();
    let ok = medians.windows(2).all(|w| w[1] <= w[0]);
    let shown: Vec<String> = sizes.iter().zip(&medians).map(|(s, m)| format!("{s}:{m:.3}")).collect();
    report(
        7,
        ok,
        t.elapsed(),
        Duration::from_secs(300),
        &format!("median mAP by gallery size {}", shown.join(" ")),
    );
}

#[test]
fn criterion_8_pipeline_is_byte_deterministic() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = support::write_config(dir.path(), support::SMALL_CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    support::run_all(&a, &cfg, &[]);
    support::run_all(&b, &cfg, &["--jobs", "1"]);
    let (sa, sb) = (support::snapshot(&a), support::snapshot(&b));
    let names_a: BTreeSet<_> = sa.iter().map(|(p, _)| p.clone()).collect();
    let names_b: BTreeSet<_> = sb.iter().map(|(p, _)| p.clone()).collect();
    let differing: Vec<String> = sa
        .iter()
        .zip(&sb)
        .filter(|((pa, da), (pb, db))| pa != pb || da != db)
        .map(|((p, _), _)| p.display().to_string())
        .collect();
    let has_reports = ["results/report.json", "results/sweep.tsv", "results/summary.json"]
        .iter()
        .all(|f| a.join(f).exists());
    report(
        8,
        names_a == names_b && differing.is_empty() && has_reports,
        t.elapsed(),
        Duration::from_secs(600),
        &format!("{} artifacts compared, {} differ {:?}", sa.len(), differing.len(), differing),
    );
}

#[test]
fn criterion_9_discovery_terminates_as_logged() {
    let t = Instant::now();
    let cfg = discovery_config();
    let dir = tempfile::tempdir().unwrap();
    let histories = planted_runs().histories.iter().chain(&biased_runs().histories);
    let (mut converged, mut capped, mut bad) = (0, 0, Vec::new());
    for (run, h) in histories.enumerate() {
        let path = dir.path().join(format!("discovery_{run}.tsv"));
        write_discovery_log(&path, h, "acceptance").unwrap();
        let cf: Vec<f64> = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .skip(2)
            .map(|l| l.split('\t').nth(2).unwrap().parse().unwrap())
            .collect();
        let last = *cf.last().unwrap();
        let early_ok = cf[..cf.len() - 1].iter().all(|&c| c >= cfg.convergence_frac);
        if early_ok && last < cfg.convergence_frac {
            converged += 1;
        } else if early_ok && cf.len() == cfg.max_outer {
            capped += 1;
        } else {
            bad.push(run);
        }
    }
    report(
        9,
        bad.is_empty(),
        t.elapsed(),
        Duration::from_secs(900),
        &format!("{converged} runs converged, {capped} hit max_outer, inconsistent runs {bad:?}"),
    );
}
