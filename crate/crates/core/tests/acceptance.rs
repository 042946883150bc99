//! End-to-end acceptance gates for the prediction–routing–evaluation
//! workbench.
//!
//! Each test here is one gate over the full pipeline on seeded synthetic
//! worlds, and prints a single `acceptance: <label>: pass|FAIL` line
//! (run with `--nocapture` to see them). The gates are properties, not
//! golden numbers: exact recovery in the noiseless limit, qualitative
//! regret hierarchy and ablations under noise, agreement of the routing
//! oracles with exhaustive search, estimator reliability, numerical
//! invariants, and bit-level determinism.
//!
//! The noisy replication world is expensive to build, so its three
//! seeded runs are shared between the hierarchy and ablation gates
//! through a lazily initialised static.

use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::sync::LazyLock;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use roadcast::evaluation::{
    build_test_set, detect_communities, evaluate_suite, label_inner_outer, upper_quantile,
    SuiteConfig, SuiteReport, TestSetSpec,
};
use roadcast::lowrank::{mdl_order, truncated_svd, welch_psd, SpatialBasis, WelchConfig};
use roadcast::predictors::{
    fit_cyclo, update_running_mean, CycleConfig, CycleModel, PredictorHandle, Variant, DAY_SECONDS,
    WEEK_SECONDS,
};
use roadcast::preprocess::{preprocess_pipeline, series_from_matrix, PreprocessConfig};
use roadcast::routing::{dijkstra, realtime_benchmark, static_oracle};
use roadcast::synthgen::{
    generate_network, generate_truth, inject_missingness, ModeTemplate, SynthSpec,
};
use roadcast::testing::{all_simple_paths, brute_force_upper_quantile, clairvoyant_optimum};
use roadcast::{ODQuery, RoadNetwork, Segment, TimeGrid, TrafficMatrix};

const RESOLUTION: u32 = 600;
const INTERVALS_PER_DAY: usize = 144;

/// Run one gate body and print its verdict as a single line. Panics are
/// re-raised so cargo still reports the test as failed.
fn gate(label: &str, body: impl FnOnce()) {
    let started = Instant::now();
    let outcome = std::panic::catch_unwind(AssertUnwindSafe(body));
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(()) => println!("acceptance: {label}: pass ({secs:.1}s)"),
        Err(payload) => {
            println!("acceptance: {label}: FAIL ({secs:.1}s)");
            std::panic::resume_unwind(payload);
        }
    }
}

// ---------------------------------------------------------------------------
// Gate 1: exact recovery in the noiseless limit
// ---------------------------------------------------------------------------

/// A planted world with no noise, no transients, and no missingness:
/// the observed matrix is exactly base + five periodic modes, so one
/// training cycle determines the future bit for bit.
fn noiseless_spec() -> SynthSpec {
    let mut spec = SynthSpec::default_world(100, 14, 5);
    spec.templates = vec![
        ModeTemplate::daily(60.0),
        ModeTemplate { period_seconds: DAY_SECONDS, harmonics: vec![0.0, 40.0] },
        ModeTemplate::weekly(30.0),
        ModeTemplate::weekly(25.0),
        ModeTemplate { period_seconds: WEEK_SECONDS, harmonics: vec![0.0, 20.0] },
    ];
    spec.k_true = spec.templates.len();
    // Keep bases comfortably above the mode amplitudes so the positivity
    // clamp in truth generation never fires — a clamped cell would break
    // the exact low-rank structure this gate depends on.
    spec.base_log_mean = (1200.0f64).ln();
    spec.base_log_std = 0.3;
    spec.noise_std = 0.0;
    spec.transient_rate_per_day = 0.0;
    spec.missing_rate = 0.0;
    spec.blackout_rate = 0.0;
    spec
}

#[test]
fn exact_recovery_on_a_noiseless_planted_world() {
    gate("exact recovery on a noiseless planted world", || {
        let started = Instant::now();
        let spec = noiseless_spec();
        let network = generate_network(&spec).unwrap();
        assert_eq!(network.n_segments(), 300, "world should have 300 edges");
        let truth = generate_truth(&spec, &network).unwrap();
        assert!(
            truth.values.iter().all(|&w| w > 1.0),
            "positivity clamp fired; the planted signal is no longer exactly low-rank"
        );

        // Train on exactly one weekly cycle; the base vector adds one
        // rank on top of the planted modes.
        let week = 7 * INTERVALS_PER_DAY;
        let training = truth.prefix(week).unwrap();
        let (basis, _) = truncated_svd(&training, spec.k_true + 1).unwrap();
        let model = fit_cyclo(
            &training,
            basis,
            CycleConfig::weekly(RESOLUTION, truth.grid.start_epoch).unwrap(),
        )
        .unwrap();
        assert!(
            model.cycles_seen.iter().all(|&p| p == 1),
            "one training cycle should feed every phase exactly once"
        );

        // Held-out second week: predictions must match the truth to 1e-9.
        let mut worst = 0.0f64;
        for j in week..truth.n() {
            let pred = model.predict(truth.grid.interval_start(j)).unwrap();
            for (r, &p) in pred.iter().enumerate() {
                worst = worst.max((p - truth.values[[r, j]]).abs());
            }
        }
        assert!(worst <= 1e-9, "max weight error {worst:.3e} exceeds 1e-9");

        // Routing with those predictions incurs exactly zero regret.
        let handle = PredictorHandle::named_after_variant(Variant::CycloLowrank(model));
        let frozen = vec![handle.freeze()];
        let communities = detect_communities(&network, 5);
        let inner = label_inner_outer(&network, &communities, 5, 64);
        let days: Vec<u32> = (7..=12).collect();
        let test_set =
            build_test_set(&network, &communities, &inner, &TestSetSpec::new(days, 5), &truth)
                .unwrap();
        let report =
            evaluate_suite(&network, &truth, &frozen, &test_set, &SuiteConfig::default()).unwrap();
        assert!(report.benchmark_errors.is_empty());
        let pr = &report.per_predictor[0];
        assert!(pr.errors.is_empty(), "{} routing failures", pr.errors.len());
        assert_eq!(pr.stats.mean, 0.0, "mean regret must be exactly zero");
        assert!(
            started.elapsed().as_secs() < 60,
            "noiseless gate took {:?}, target is under a minute",
            started.elapsed()
        );
    });
}

// ---------------------------------------------------------------------------
// Gates 2 and 3: hierarchy and ablations on the noisy replication world
// ---------------------------------------------------------------------------

const PRESET_SEEDS: [u64; 3] = [11, 29, 47];
const PRESET_RANK: usize = 300;
const PRESET_TRAINING_DAYS: usize = 42;

/// The noisy replication preset: ~500 edges, eight weeks, daily and
/// weekly structure, 10% relative noise, localized congestion
/// transients, fully observed.
fn noisy_spec(seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::default_world(170, 56, seed);
    spec.templates = vec![
        ModeTemplate::daily(150.0),
        ModeTemplate { period_seconds: DAY_SECONDS, harmonics: vec![0.0, 60.0] },
        ModeTemplate::weekly(90.0),
    ];
    spec.k_true = spec.templates.len();
    spec.noise_std = 0.10;
    spec.missing_rate = 0.0;
    spec.blackout_rate = 0.0;
    spec
}

/// Per-seed replication outcome: query volume and (mean, q^up(0.10))
/// regret per predictor, in seconds.
struct PresetRun {
    seed: u64,
    n_queries: usize,
    elapsed_seconds: f64,
    stats: BTreeMap<String, (f64, f64)>,
}

impl PresetRun {
    fn mean(&self, name: &str) -> f64 {
        self.stats.get(name).unwrap_or_else(|| panic!("no stats for {name}")).0
    }

    fn q10(&self, name: &str) -> f64 {
        self.stats.get(name).unwrap_or_else(|| panic!("no stats for {name}")).1
    }
}

fn run_noisy_preset(seed: u64) -> PresetRun {
    let started = Instant::now();
    let spec = noisy_spec(seed);
    let network = generate_network(&spec).unwrap();
    let truth = generate_truth(&spec, &network).unwrap();
    let training = truth.prefix(PRESET_TRAINING_DAYS * INTERVALS_PER_DAY).unwrap();
    let (basis, _) = truncated_svd(&training, PRESET_RANK).unwrap();

    let anchor = truth.grid.start_epoch;
    let weekly = CycleConfig::weekly(RESOLUTION, anchor).unwrap();
    let daily = CycleConfig::daily(RESOLUTION, anchor).unwrap();
    let identity = SpatialBasis::identity(truth.m(), basis.trained_on.clone());

    let handles = [
        PredictorHandle::named_after_variant(Variant::Realtime),
        PredictorHandle::named_after_variant(Variant::CycloLowrank(
            fit_cyclo(&training, basis.clone(), weekly).unwrap(),
        )),
        PredictorHandle::named_after_variant(Variant::CycloLowrank(
            fit_cyclo(&training, basis.clone(), daily).unwrap(),
        )),
        PredictorHandle::named_after_variant(Variant::CycloFullrank(
            fit_cyclo(&training, identity, weekly).unwrap(),
        )),
        PredictorHandle::named_after_variant(Variant::LowrankStatic(
            fit_cyclo(&training, basis, CycleConfig::static_single(RESOLUTION, anchor)).unwrap(),
        )),
        PredictorHandle::named_after_variant(Variant::Lag { delta_seconds: DAY_SECONDS as f64 }),
        PredictorHandle::named_after_variant(Variant::Lag { delta_seconds: WEEK_SECONDS as f64 }),
    ];
    let frozen: Vec<_> = handles.iter().map(PredictorHandle::freeze).collect();

    let communities = detect_communities(&network, seed);
    let inner = label_inner_outer(&network, &communities, seed, 64);
    let eval_days: Vec<u32> = (PRESET_TRAINING_DAYS as u32..=54).collect();
    let test_set =
        build_test_set(&network, &communities, &inner, &TestSetSpec::new(eval_days, seed), &truth)
            .unwrap();
    let report =
        evaluate_suite(&network, &truth, &frozen, &test_set, &SuiteConfig::default()).unwrap();
    assert!(
        report.benchmark_errors.is_empty(),
        "seed {seed}: {} benchmark failures",
        report.benchmark_errors.len()
    );

    let mut stats = BTreeMap::new();
    for pr in &report.per_predictor {
        assert!(
            pr.errors.is_empty(),
            "seed {seed}: {} failed on {} queries: {:?}",
            pr.name,
            pr.errors.len(),
            pr.errors.first()
        );
        let q10 = pr.stats.quantile(0.10).expect("0.10 is a default alpha");
        stats.insert(pr.name.clone(), (pr.stats.mean, q10));
    }
    let run = PresetRun {
        seed,
        n_queries: report.n_queries,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        stats,
    };
    // One diagnostic block per seed so `--nocapture` shows the measured
    // regret landscape alongside the pass/fail verdicts.
    println!(
        "acceptance: noisy world seed {seed}: {} queries in {:.1}s",
        run.n_queries, run.elapsed_seconds
    );
    for (name, (mean, q10)) in &run.stats {
        println!("  {name:<22} mean {:>8.2}s   q10 {:>8.2}s", mean, q10);
    }
    run
}

static PRESET_RUNS: LazyLock<Vec<PresetRun>> =
    LazyLock::new(|| PRESET_SEEDS.iter().map(|&s| run_noisy_preset(s)).collect());

#[test]
fn regret_hierarchy_replicates_on_noisy_traffic() {
    gate("regret hierarchy: realtime <= cyclo_weekly <= cyclo_daily <= lags", || {
        for run in PRESET_RUNS.iter() {
            let seed = run.seed;
            assert!(
                run.n_queries >= 2000,
                "seed {seed}: only {} queries, need at least 2000",
                run.n_queries
            );
            for (metric, of) in
                [("mean", PresetRun::mean as fn(&PresetRun, &str) -> f64), ("q10", PresetRun::q10)]
            {
                let ordered = [
                    ("realtime", "cyclo_weekly"),
                    ("cyclo_weekly", "cyclo_daily"),
                    ("cyclo_daily", "lag_day"),
                    ("cyclo_daily", "lag_week"),
                ];
                for (lo, hi) in ordered {
                    assert!(
                        of(run, lo) <= of(run, hi),
                        "seed {seed}: {metric} ordering violated: {lo} {:.3}s > {hi} {:.3}s",
                        of(run, lo),
                        of(run, hi)
                    );
                }
            }
            assert!(
                run.elapsed_seconds < 900.0,
                "seed {seed}: replication took {:.0}s, target is under 15 minutes",
                run.elapsed_seconds
            );
        }
    });
}

#[test]
fn ablations_bracket_the_cyclic_model() {
    gate("ablations: static penalty >= 25%, fullrank within 15% of lowrank", || {
        for run in PRESET_RUNS.iter() {
            let seed = run.seed;
            let lowrank = run.mean("cyclo_weekly");
            let without_cycles = run.mean("lowrank_static");
            let fullrank = run.mean("cyclo_fullrank_weekly");
            assert!(
                without_cycles >= 1.25 * lowrank,
                "seed {seed}: dropping cyclostationarity should cost >= 25%: \
                 static {without_cycles:.3}s vs cyclic {lowrank:.3}s"
            );
            assert!(
                (fullrank - lowrank).abs() <= 0.15 * lowrank,
                "seed {seed}: fullrank {fullrank:.3}s is not within 15% of \
                 lowrank {lowrank:.3}s"
            );
        }
    });
}

// ---------------------------------------------------------------------------
// Gate 4: routing oracles versus exhaustive search
// ---------------------------------------------------------------------------

/// One small random strongly connected instance: 4–8 vertices, a
/// spanning cycle plus extra edges (parallels allowed), and per-edge
/// step weights over two days. FIFO instances use non-decreasing steps
/// (entering later never arrives earlier); the rest draw each interval
/// independently.
fn small_instance(rng: &mut ChaCha8Rng) -> (RoadNetwork, TrafficMatrix, bool) {
    let n = rng.random_range(4..=8usize);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|v| (v, (v + 1) % n)).collect();
    let target = n + rng.random_range(n..=2 * n);
    while edges.len() < target {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((a, b));
        }
    }
    let segments = edges
        .into_iter()
        .enumerate()
        .map(|(id, (from, to))| Segment { edge_id: id, from, to, segment_row: id })
        .collect();
    let network = RoadNetwork::new(segments).unwrap();

    let n_intervals = 2 * INTERVALS_PER_DAY;
    let fifo = rng.random_bool(0.5);
    let mut values = Array2::zeros((network.n_segments(), n_intervals));
    for r in 0..network.n_segments() {
        let base: f64 = rng.random_range(60.0..600.0);
        if fifo {
            let mut w = base;
            for j in 0..n_intervals {
                values[[r, j]] = w;
                w += rng.random_range(0.0..20.0);
            }
        } else {
            for j in 0..n_intervals {
                values[[r, j]] = base * (1.0 + rng.random_range(-0.5..0.5));
            }
        }
    }
    let grid = TimeGrid::new(0, RESOLUTION, n_intervals);
    (network, TrafficMatrix::fully_observed(values, grid).unwrap(), fifo)
}

/// Left-to-right cost of an edge-id path under static weights — the same
/// accumulation order Dijkstra uses, so equal paths give equal bits.
fn static_path_cost(network: &RoadNetwork, weights: &Array1<f64>, path: &[usize]) -> f64 {
    let mut total = 0.0;
    for &edge_id in path {
        let idx = network.index_of_edge(edge_id).unwrap();
        total += weights[network.segment(idx).segment_row];
    }
    total
}

/// Whether a walk visits any vertex twice. A simple walk is a path the
/// clairvoyant enumeration also considered; only a revisiting walk can
/// legitimately undercut the fixed-path optimum (by effectively waiting
/// out a weight drop, which FIFO forbids).
fn walk_revisits_vertex(network: &RoadNetwork, origin: usize, edges: &[usize]) -> bool {
    let mut seen = vec![origin];
    for &edge_id in edges {
        let u = network.segment(network.index_of_edge(edge_id).unwrap()).to;
        if seen.contains(&u) {
            return true;
        }
        seen.push(u);
    }
    false
}

#[test]
fn routing_oracles_match_exhaustive_search() {
    gate("routing oracles match exhaustive search on 200 small instances", || {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let mut fifo_instances = 0usize;
        for _ in 0..200 {
            let (network, truth, fifo) = small_instance(&mut rng);
            fifo_instances += fifo as usize;
            let w0: Array1<f64> = truth.values.column(0).to_owned();
            for origin in 0..network.n_vertices() {
                for destination in 0..network.n_vertices() {
                    if origin == destination {
                        continue;
                    }
                    // Static shortest path equals exhaustive enumeration.
                    let (_, cost) = dijkstra(&network, w0.view(), origin, destination).unwrap();
                    let brute = all_simple_paths(&network, origin, destination)
                        .iter()
                        .map(|p| static_path_cost(&network, &w0, p))
                        .fold(f64::INFINITY, f64::min);
                    assert_eq!(cost, brute, "dijkstra vs enumeration, {origin}->{destination}");

                    // Causal routers never beat the clairvoyant optimum.
                    let departure = rng.random_range(0.0..86_400.0);
                    let query = ODQuery { origin, destination, departure };
                    let (clair, _) = clairvoyant_optimum(&network, &truth, query).unwrap();
                    let oracle = static_oracle(&network, &truth, query).unwrap();
                    let live = realtime_benchmark(&network, &truth, query).unwrap();
                    assert!(
                        oracle.realized_total >= clair,
                        "static oracle {:.6} beat clairvoyant {clair:.6}",
                        oracle.realized_total
                    );
                    if live.realized_total < clair {
                        // Beating every fixed path is only possible for a
                        // revisiting walk on a FIFO-violating instance.
                        assert!(
                            !fifo,
                            "realtime {:.6} beat clairvoyant {clair:.6} under FIFO",
                            live.realized_total
                        );
                        assert!(
                            walk_revisits_vertex(&network, origin, &live.edges),
                            "realtime {:.6} beat clairvoyant {clair:.6} on a simple route",
                            live.realized_total
                        );
                    }
                    // Under FIFO, label-setting is exact: bit-equal costs.
                    if fifo {
                        assert_eq!(
                            oracle.realized_total, clair,
                            "static oracle must equal the fixed-path optimum under FIFO"
                        );
                    }
                }
            }
        }
        assert!(
            (40..=160).contains(&fifo_instances),
            "want a healthy mix of FIFO and non-FIFO instances, got {fifo_instances}/200 FIFO"
        );
    });
}

// ---------------------------------------------------------------------------
// Gate 5: estimator reliability
// ---------------------------------------------------------------------------

/// One spiked-covariance trial: five orthonormal planted directions with
/// population eigenvalue 10 on a unit noise floor (eigen-SNR 10).
fn mdl_trial_recovers(seed: u64, m: usize, n: usize, k_true: usize) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();

    // Modified Gram–Schmidt on a Gaussian matrix for the planted basis.
    let mut u = Array2::from_shape_fn((m, k_true), |_| normal.sample(&mut rng));
    for j in 0..k_true {
        for i in 0..j {
            let proj = u.column(i).dot(&u.column(j));
            let ui = u.column(i).to_owned();
            u.column_mut(j).scaled_add(-proj, &ui);
        }
        let norm: f64 = u.column(j).dot(&u.column(j));
        let norm = norm.sqrt();
        u.column_mut(j).mapv_inplace(|x| x / norm);
    }

    // Unit noise plus rank-one spikes of strength 3: population
    // eigenvalues 3² + 1 = 10 against a noise floor of 1.
    let mut x = Array2::from_shape_fn((m, n), |_| normal.sample(&mut rng));
    for i in 0..k_true {
        let g: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        for (r, &ur) in u.column(i).iter().enumerate() {
            let scale = 3.0 * ur;
            for (c, &gc) in g.iter().enumerate() {
                x[[r, c]] += scale * gc;
            }
        }
    }

    let matrix = TrafficMatrix::fully_observed(x, TimeGrid::new(0, RESOLUTION, n)).unwrap();
    let (basis, _) = truncated_svd(&matrix, 1).unwrap();
    let curve = mdl_order(basis.singular_values.as_slice().unwrap(), m, n).unwrap();
    curve.k_star == k_true
}

/// Frequency of the strongest PSD bin inside `[lo, hi]` cycles/day.
fn band_peak(frequencies: &[f64], psd: &[f64], lo: f64, hi: f64) -> f64 {
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for (&f, &p) in frequencies.iter().zip(psd) {
        if f >= lo && f <= hi && p > best.1 {
            best = (f, p);
        }
    }
    assert!(best.1.is_finite(), "no PSD bins inside [{lo}, {hi}]");
    best.0
}

#[test]
fn order_selection_and_tone_localization_are_reliable() {
    gate("MDL rank recovery and Welch tone localization", || {
        // Rank recovery across 100 seeded spiked-covariance trials.
        let (m, n, k_true) = (200, 2000, 5);
        let recovered =
            (0..100u64).filter(|&trial| mdl_trial_recovers(9_000 + trial, m, n, k_true)).count();
        assert!(recovered >= 95, "MDL recovered the planted rank in {recovered}/100 trials");

        // Daily and weekly tones land within one frequency bin.
        let config = WelchConfig::default();
        assert_eq!(config.fs, 144.0);
        assert_eq!(config.nfft, 144 * 28);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let len = config.segment_len + 2 * config.overlap;
        let series: Vec<f64> = (0..len)
            .map(|t| {
                let day = t as f64 / 144.0;
                3.0 * (std::f64::consts::TAU * day).sin()
                    + 2.0 * (std::f64::consts::TAU * day / 7.0).sin()
                    + noise.sample(&mut rng)
            })
            .collect();
        let report = welch_psd(&series, &config).unwrap();
        let bin = report.bin_width();
        let daily_peak = band_peak(&report.frequencies, &report.psd, 0.6, 1.5);
        assert!(
            (daily_peak - 1.0).abs() <= bin + 1e-12,
            "daily tone found at {daily_peak:.4} cycles/day, off by more than one bin"
        );
        let weekly_peak = band_peak(&report.frequencies, &report.psd, 0.05, 0.5);
        assert!(
            (weekly_peak - 1.0 / 7.0).abs() <= bin + 1e-12,
            "weekly tone found at {weekly_peak:.4} cycles/day, off by more than one bin"
        );
    });
}

// ---------------------------------------------------------------------------
// Gate 6: numerical invariants
// ---------------------------------------------------------------------------

#[test]
fn numerical_invariants_hold() {
    gate("numerical invariants", || {
        let mut rng = ChaCha8Rng::seed_from_u64(606);

        // Basis orthonormality from a noisy rectangular factorization.
        let lognormal = LogNormal::new(6.0, 0.5).unwrap();
        let w = Array2::from_shape_fn((120, 900), |_| lognormal.sample(&mut rng));
        let matrix =
            TrafficMatrix::fully_observed(w.clone(), TimeGrid::new(0, RESOLUTION, 900)).unwrap();
        let (basis, xi) = truncated_svd(&matrix, 15).unwrap();
        let defect = basis.orthonormality_defect();
        assert!(defect <= 1e-10, "orthonormality defect {defect:.3e}");

        // Eckart–Young: the residual energy of the rank-k reconstruction
        // equals the discarded tail energy (relative to total energy).
        let k = basis.k;
        let mut reconstruction = Array2::<f64>::zeros(w.dim());
        for i in 0..k {
            let sigma = basis.singular_values[i];
            let u_i = basis.u_bar.column(i);
            let xi_i = xi.column(i);
            for (r, &ur) in u_i.iter().enumerate() {
                let scale = sigma * ur;
                for (c, &xc) in xi_i.iter().enumerate() {
                    reconstruction[[r, c]] += scale * xc;
                }
            }
        }
        let residual: f64 = (&w - &reconstruction).mapv(|v| v * v).sum();
        let tail: f64 = basis.singular_values.iter().skip(k).map(|s| s * s).sum();
        let total: f64 = basis.singular_values.iter().map(|s| s * s).sum();
        assert!(
            (residual - tail).abs() <= 1e-8 * total,
            "Eckart–Young identity violated: residual {residual:.6e} vs tail {tail:.6e}"
        );

        // The running mean matches the batch mean to 1e-12.
        let k = 8;
        let draws = 257;
        let identity = SpatialBasis::identity(k, basis.trained_on.clone());
        let mut model =
            CycleModel::new(identity, CycleConfig::static_single(RESOLUTION, 0)).unwrap();
        let spread = Normal::new(0.0, 10.0).unwrap();
        let mut batch = Array1::<f64>::zeros(k);
        for _ in 0..draws {
            let v = Array1::from_shape_fn(k, |_| spread.sample(&mut rng));
            update_running_mean(&mut model, 0, v.view());
            batch += &v;
        }
        batch /= draws as f64;
        let worst = model
            .alphas
            .row(0)
            .iter()
            .zip(batch.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst <= 1e-12, "running vs batch mean differ by {worst:.3e}");

        // The upper quantile matches the brute-force definitional scan.
        let heavy = LogNormal::new(3.0, 1.0).unwrap();
        let mut samples: Vec<f64> = (0..10_000).map(|_| heavy.sample(&mut rng)).collect();
        for i in 0..500 {
            samples[i * 20] = samples[i * 7 % 10_000]; // inject ties
        }
        for i in 0..1_000 {
            samples[i * 10 + 3] = -samples[i * 10 + 3]; // negative regrets are legal
        }
        for alpha in [0.5, 0.25, 0.10, 0.05, 0.01, 0.001] {
            let fast = upper_quantile(&samples, alpha);
            let brute = brute_force_upper_quantile(&samples, alpha);
            assert_eq!(fast, brute, "upper quantile diverges from its definition at α={alpha}");
        }
    });
}

// ---------------------------------------------------------------------------
// Gate 7: determinism across reruns and worker counts
// ---------------------------------------------------------------------------

/// Run a closure on a dedicated rayon pool of the given width.
fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn assert_bits_eq(a: &TrafficMatrix, b: &TrafficMatrix, what: &str) {
    assert_eq!(a.grid, b.grid, "{what}: grids differ");
    assert_eq!(a.mask, b.mask, "{what}: masks differ");
    let same = a.values.iter().zip(b.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    assert!(same, "{what}: values are not bit-identical");
}

#[test]
fn every_stage_is_deterministic_and_worker_invariant() {
    gate("determinism across reruns and worker counts", || {
        let spec = SynthSpec::default_world(60, 21, 99);

        // Generation: bit-identical on rerun.
        let network = generate_network(&spec).unwrap();
        assert_eq!(network.segments(), generate_network(&spec).unwrap().segments());
        let truth = generate_truth(&spec, &network).unwrap();
        assert_bits_eq(&truth, &generate_truth(&spec, &network).unwrap(), "truth");
        let observed = inject_missingness(&truth, &spec).unwrap();
        assert_bits_eq(&observed, &inject_missingness(&truth, &spec).unwrap(), "observed");

        // Preprocessing: bit-identical on rerun and across pool widths.
        let series = series_from_matrix(&observed).unwrap();
        let cfg = PreprocessConfig::new(observed.grid);
        let (net1, clean1, report1) =
            in_pool(1, || preprocess_pipeline(&series, &network, &cfg).unwrap());
        let (net3, clean3, report3) =
            in_pool(3, || preprocess_pipeline(&series, &network, &cfg).unwrap());
        assert_eq!(net1.segments(), net3.segments(), "cleaned networks differ");
        assert_bits_eq(&clean1, &clean3, "cleaned matrix");
        assert_eq!(report1, report3, "preprocessing reports differ");

        // Factorization and fitting: bit-identical on rerun.
        let training = clean1.prefix(14 * INTERVALS_PER_DAY).unwrap();
        let (basis_a, xi_a) = truncated_svd(&training, 10).unwrap();
        let (basis_b, xi_b) = truncated_svd(&training, 10).unwrap();
        assert_eq!(basis_a, basis_b, "bases differ across reruns");
        assert_eq!(xi_a, xi_b, "right factors differ across reruns");
        let daily = CycleConfig::daily(RESOLUTION, training.grid.start_epoch).unwrap();
        let model_a = fit_cyclo(&training, basis_a.clone(), daily).unwrap();
        let model_b = fit_cyclo(&training, basis_b, daily).unwrap();
        assert_eq!(model_a, model_b, "fitted models differ across reruns");

        // Test-set construction and evaluation: bit-identical across
        // reruns and pool widths.
        let handles = [
            PredictorHandle::named_after_variant(Variant::Realtime),
            PredictorHandle::named_after_variant(Variant::CycloLowrank(model_a)),
            PredictorHandle::named_after_variant(Variant::Lag {
                delta_seconds: DAY_SECONDS as f64,
            }),
        ];
        let frozen: Vec<_> = handles.iter().map(PredictorHandle::freeze).collect();
        let communities = detect_communities(&net1, 99);
        assert_eq!(communities, detect_communities(&net1, 99), "communities differ");
        let inner = label_inner_outer(&net1, &communities, 99, 64);
        assert_eq!(inner, label_inner_outer(&net1, &communities, 99, 64));
        let days: Vec<u32> = (14..=19).collect();
        let tss = TestSetSpec::new(days, 99);
        let set1 =
            in_pool(1, || build_test_set(&net1, &communities, &inner, &tss, &clean1).unwrap());
        let set3 =
            in_pool(3, || build_test_set(&net1, &communities, &inner, &tss, &clean1).unwrap());
        assert_eq!(set1, set3, "test sets differ across pool widths");

        let suite = SuiteConfig::default();
        let eval = |threads: usize| -> SuiteReport {
            in_pool(threads, || evaluate_suite(&net1, &clean1, &frozen, &set1, &suite).unwrap())
        };
        let r1 = eval(1);
        let r3 = eval(3);
        let r3_again = eval(3);
        assert_eq!(r1, r3, "suite reports differ across pool widths");
        assert_eq!(r3, r3_again, "suite reports differ across reruns");
    });
}
