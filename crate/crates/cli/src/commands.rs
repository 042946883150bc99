//! The subcommand implementations. Each takes the loaded [`RunConfig`],
//! reads its inputs, calls the library, writes its artifacts, and prints
//! a short account of what it did.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use roadcast::evaluation::{
    build_test_set, detect_communities, evaluate_suite, label_inner_outer, SuiteConfig,
    SuiteReport, TestSetSpec,
};
use roadcast::io;
use roadcast::lowrank::{mdl_order, psd_of_modes, truncated_svd, SpatialBasis, WelchConfig};
use roadcast::predictors::{
    fit_cyclo, CycleConfig, CycleModel, PredictorHandle, Variant, DAY_SECONDS, WEEK_SECONDS,
};
use roadcast::preprocess::{preprocess_pipeline, select_rows, series_from_matrix};
use roadcast::synthgen::{generate_network, generate_truth, inject_missingness};
use roadcast::{RoadNetwork, TimeGrid, TrafficMatrix};

use crate::config::{cycle_period_seconds, require_file, RunConfig, DEFAULT_LABEL_SAMPLE};
use crate::CliError;

/// Map a library error onto the exit-code contract: bad user-supplied
/// values are usage errors (exit 2), everything else is a runtime
/// failure (exit 1).
fn classify(err: roadcast::Error) -> CliError {
    match &err {
        roadcast::Error::InvalidInput(_) | roadcast::Error::OutOfRange(_) => {
            CliError::Usage(err.to_string())
        }
        _ => CliError::Runtime(err.to_string()),
    }
}

fn io_err(context: &str, err: std::io::Error) -> CliError {
    CliError::Runtime(format!("{context}: {err}"))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| io_err(&format!("creating {}", dir.display()), e))?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    ensure_parent(path)?;
    let file =
        File::create(path).map_err(|e| io_err(&format!("creating {}", path.display()), e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(config: &RunConfig) -> Result<(), CliError> {
    let spec = config.synth.build_spec(config.seed);
    std::fs::create_dir_all(config.output_dir())
        .map_err(|e| io_err("creating output directory", e))?;

    let network = generate_network(&spec).map_err(classify)?;
    let truth = generate_truth(&spec, &network).map_err(classify)?;
    let observed = inject_missingness(&truth, &spec).map_err(classify)?;

    let graph = config.graph_path();
    let truth_path = config.truth_path();
    let observed_path = config.observed_path();
    for p in [&graph, &truth_path, &observed_path] {
        ensure_parent(p)?;
    }
    io::write_graph(&graph, &network).map_err(classify)?;
    io::write_matrix(&truth_path, &truth).map_err(classify)?;
    io::write_matrix(&observed_path, &observed).map_err(classify)?;
    // Provenance record: the exact spec (seed included) that produced
    // the files above.
    write_json(&config.output_dir().join("spec.json"), &spec)?;

    println!(
        "world: {} vertices, {} edges, {} intervals of {} s ({} days)",
        network.n_vertices(),
        network.n_segments(),
        truth.n(),
        spec.resolution,
        spec.duration_days,
    );
    println!("graph    -> {}", graph.display());
    println!("truth    -> {}", truth_path.display());
    println!("observed -> {} ({:.1}% cells missing)", observed_path.display(), {
        let total = (observed.m() * observed.n()) as f64;
        let missing = observed.mask.iter().filter(|&&b| !b).count() as f64;
        100.0 * missing / total
    });
    println!("spec     -> {}", config.output_dir().join("spec.json").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

pub fn cmd_preprocess(config: &RunConfig) -> Result<(), CliError> {
    let graph_path = require_file(&config.graph_path(), "paths.graph")?;
    let network = io::read_graph(&graph_path).map_err(classify)?;

    let (series, grid) = match &config.preprocess.raw_series {
        Some(p) => {
            let g = config.preprocess.raw_grid.as_ref().expect("validated at load");
            let series = io::read_raw_series_csv(&require_file(
                &config.resolve(p),
                "preprocess.raw_series",
            )?)
            .map_err(classify)?;
            (series, TimeGrid::new(g.start_epoch, g.resolution, g.n_intervals))
        }
        None => {
            let observed_path = require_file(&config.observed_path(), "paths.observed")?;
            let observed = io::read_matrix(&observed_path).map_err(classify)?;
            let grid = observed.grid;
            (series_from_matrix(&observed).map_err(classify)?, grid)
        }
    };

    let cfg = config.preprocess.build_config(grid);
    let (cleaned_net, cleaned, report) =
        preprocess_pipeline(&series, &network, &cfg).map_err(classify)?;

    let cleaned_path = config.cleaned_path();
    let cleaned_graph = config.cleaned_graph_path();
    let report_path = config.output_dir().join("preprocess_report.json");
    ensure_parent(&cleaned_path)?;
    ensure_parent(&cleaned_graph)?;
    io::write_matrix(&cleaned_path, &cleaned).map_err(classify)?;
    io::write_graph(&cleaned_graph, &cleaned_net).map_err(classify)?;
    write_json(&report_path, &report)?;

    println!(
        "conditioned {} rows: {} aligned cells, {} outliers masked, {} gap cells filled",
        report.rows_in, report.cells_aligned, report.outlier_cells_masked, report.gap_cells_filled
    );
    println!(
        "dropped {} blackout rows and {} connectivity rows; imputed {} cells",
        report.blackout_rows_dropped.len(),
        report.scc_rows_dropped.len(),
        report.cells_imputed
    );
    println!("matrix -> {}", cleaned_path.display());
    println!("graph  -> {}", cleaned_graph.display());
    println!("report -> {}", report_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// fit / mdl
// ---------------------------------------------------------------------------

/// The training window: the configured number of leading days, or the
/// whole input when unset.
fn training_slice(config: &RunConfig, matrix: &TrafficMatrix) -> Result<TrafficMatrix, CliError> {
    match config.fit.training_days {
        None => Ok(matrix.clone()),
        Some(days) => {
            let cols = (days as u64 * DAY_SECONDS / matrix.grid.resolution as u64) as usize;
            if cols == 0 || cols > matrix.n() {
                return Err(CliError::Usage(format!(
                    "fit.training_days = {days} spans {cols} intervals, but the input has {}",
                    matrix.n()
                )));
            }
            matrix.prefix(cols).map_err(classify)
        }
    }
}

fn load_fit_input(config: &RunConfig) -> Result<(PathBuf, TrafficMatrix), CliError> {
    let input = config.fit_input()?;
    let matrix = io::read_matrix(&input).map_err(classify)?;
    Ok((input, matrix))
}

/// Conventional model name for a cycle period ("cyclo_daily",
/// "cyclo_fullrank_weekly", "cyclo_3600s", ...).
fn cycle_model_name(prefix: &str, period: u64) -> String {
    match period {
        DAY_SECONDS => format!("{prefix}_daily"),
        WEEK_SECONDS => format!("{prefix}_weekly"),
        p => format!("{prefix}_{p}s"),
    }
}

fn print_mdl_curve(singular_values: &[f64], m: usize, n: usize) -> Result<(), CliError> {
    let curve = mdl_order(singular_values, m, n).map_err(classify)?;
    println!("k\tMDL(k)");
    for (k, v) in curve.curve.iter().enumerate() {
        let marker = if k == curve.k_star { "  <- k*" } else { "" };
        println!("{k}\t{v:.3}{marker}");
    }
    println!("selected order k* = {}", curve.k_star);
    Ok(())
}

pub fn cmd_fit(config: &RunConfig, mdl: bool, rank: Option<usize>) -> Result<(), CliError> {
    let (input, matrix) = load_fit_input(config)?;
    let training = training_slice(config, &matrix)?;
    let k = rank.unwrap_or_else(|| config.fit.rank());
    println!(
        "fitting on {} ({} x {} training window, rank {k})",
        input.display(),
        training.m(),
        training.n()
    );

    let (basis, _) = truncated_svd(&training, k).map_err(classify)?;
    if mdl {
        print_mdl_curve(
            basis.singular_values.as_slice().expect("contiguous"),
            training.m(),
            training.n(),
        )?;
    }

    let models_dir = config.models_dir();
    std::fs::create_dir_all(&models_dir).map_err(|e| io_err("creating models directory", e))?;
    let basis_path = models_dir.join("basis.bin");
    io::write_basis(&basis_path, &basis).map_err(classify)?;
    println!("basis ({} x {k}) -> {}", basis.u_bar.nrows(), basis_path.display());

    let anchor = training.grid.start_epoch;
    let resolution = training.grid.resolution;
    let save = |name: String, model: &CycleModel| -> Result<(), CliError> {
        let path = models_dir.join(format!("{name}.model"));
        io::write_model(&path, model).map_err(classify)?;
        println!(
            "{name} (L = {}, k = {}) -> {}",
            model.cfg.intervals_per_cycle(),
            model.basis.k,
            path.display()
        );
        Ok(())
    };

    // A model trained on less than one full cycle would cold-start on
    // every phase it never saw; require the full period up front.
    let span_seconds = training.n() as u64 * resolution as u64;
    let check_span = |cycle: &str, period: u64| -> Result<(), CliError> {
        if span_seconds < period {
            return Err(CliError::Runtime(format!(
                "insufficient data: the training window ({span_seconds} s) is shorter than one \
                 {cycle} cycle ({period} s)"
            )));
        }
        Ok(())
    };

    for cycle in config.fit.cycles() {
        let period = cycle_period_seconds(&cycle)?;
        check_span(&cycle, period)?;
        let cfg = CycleConfig::new(period, resolution, anchor).map_err(classify)?;
        let model = fit_cyclo(&training, basis.clone(), cfg).map_err(classify)?;
        save(cycle_model_name("cyclo", period), &model)?;
    }
    for cycle in config.fit.fullrank_cycles() {
        let period = cycle_period_seconds(&cycle)?;
        check_span(&cycle, period)?;
        let cfg = CycleConfig::new(period, resolution, anchor).map_err(classify)?;
        let identity = SpatialBasis::identity(training.m(), basis.trained_on.clone());
        let model = fit_cyclo(&training, identity, cfg).map_err(classify)?;
        save(cycle_model_name("cyclo_fullrank", period), &model)?;
    }
    if config.fit.static_model() {
        let cfg = CycleConfig::static_single(resolution, anchor);
        let model = fit_cyclo(&training, basis.clone(), cfg).map_err(classify)?;
        save("lowrank_static".into(), &model)?;
    }
    Ok(())
}

pub fn cmd_mdl(config: &RunConfig) -> Result<(), CliError> {
    let (input, matrix) = load_fit_input(config)?;
    let training = training_slice(config, &matrix)?;
    println!("MDL order selection on {} ({} x {})", input.display(), training.m(), training.n());
    // Rank-1 request still returns the complete singular spectrum.
    let (basis, _) = truncated_svd(&training, 1).map_err(classify)?;
    print_mdl_curve(
        basis.singular_values.as_slice().expect("contiguous"),
        training.m(),
        training.n(),
    )
}

// ---------------------------------------------------------------------------
// spectra
// ---------------------------------------------------------------------------

pub fn cmd_spectra(config: &RunConfig, modes: Option<usize>) -> Result<(), CliError> {
    let (input, matrix) = load_fit_input(config)?;
    let n_modes = modes.or(config.spectra.modes).unwrap_or(3);
    if n_modes == 0 {
        return Err(CliError::Usage("spectra.modes must be at least 1".into()));
    }

    let (_, right) = truncated_svd(&matrix, n_modes).map_err(classify)?;
    let n = matrix.n();
    let segment_len =
        config.spectra.segment_len.unwrap_or_else(|| WelchConfig::default().segment_len.min(n));
    let welch = WelchConfig {
        fs: DAY_SECONDS as f64 / matrix.grid.resolution as f64,
        segment_len,
        nfft: config.spectra.nfft.unwrap_or(segment_len),
        overlap: config.spectra.overlap.unwrap_or(segment_len / 2),
    };

    let mode_list: Vec<usize> = (0..n_modes).collect();
    let reports = psd_of_modes(right.view(), &mode_list, &welch).map_err(classify)?;

    std::fs::create_dir_all(config.output_dir())
        .map_err(|e| io_err("creating output directory", e))?;
    println!("spectra of {} leading modes of {}", n_modes, input.display());
    for report in &reports {
        let path = config.output_dir().join(format!("spectrum_mode_{}.csv", report.mode));
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
        w.write_record(["frequency_per_day", "power"])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        for (f, p) in report.frequencies.iter().zip(&report.psd) {
            w.write_record([f.to_string(), p.to_string()])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!(
            "mode {}: peak at {:.4} cycles/day (bin width {:.4}) -> {}",
            report.mode,
            report.peak_frequency(),
            report.bin_width(),
            path.display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate / report
// ---------------------------------------------------------------------------

/// Build a predictor handle from its conventional name, loading fitted
/// models from the models directory where the variant needs one.
fn predictor_from_name(name: &str, models_dir: &Path) -> Result<PredictorHandle, CliError> {
    let load = |file: &str| -> Result<CycleModel, CliError> {
        let path = models_dir.join(format!("{file}.model"));
        let path = require_file(&path, "evaluation.predictors").map_err(|_| {
            CliError::Usage(format!(
                "predictor {name:?} needs {} — run `fit` first",
                models_dir.join(format!("{file}.model")).display()
            ))
        })?;
        io::read_model(&path).map_err(classify)
    };
    let variant = match name {
        "realtime" => Variant::Realtime,
        "static_oracle" => Variant::StaticOracle,
        "lag_day" => Variant::Lag { delta_seconds: DAY_SECONDS as f64 },
        "lag_week" => Variant::Lag { delta_seconds: WEEK_SECONDS as f64 },
        "lowrank_static" => Variant::LowrankStatic(load("lowrank_static")?),
        other => {
            if let Some(lag) = other.strip_prefix("lag_").and_then(|s| s.strip_suffix('s')) {
                let delta: f64 = lag
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad lag in predictor name {other:?}")))?;
                Variant::Lag { delta_seconds: delta }
            } else if other.starts_with("cyclo_fullrank_") {
                Variant::CycloFullrank(load(other)?)
            } else if other.starts_with("cyclo_") {
                Variant::CycloLowrank(load(other)?)
            } else {
                return Err(CliError::Usage(format!("unknown predictor {other:?}")));
            }
        }
    };
    Ok(PredictorHandle::new(name, variant))
}

/// The network and the truth matrix restricted to its rows. When the
/// cleaned graph exists it defines the world, and truth rows are mapped
/// through persistent edge ids; otherwise the synth graph is used as-is.
fn load_world(config: &RunConfig) -> Result<(RoadNetwork, TrafficMatrix), CliError> {
    let cleaned_graph = config.cleaned_graph_path();
    let network = if cleaned_graph.is_file() {
        io::read_graph(&cleaned_graph).map_err(classify)?
    } else {
        io::read_graph(&require_file(&config.graph_path(), "paths.graph")?).map_err(classify)?
    };
    let truth =
        io::read_matrix(&require_file(&config.truth_path(), "paths.truth")?).map_err(classify)?;

    let truth = if truth.m() == network.n_segments() {
        truth
    } else {
        let original = io::read_graph(&require_file(&config.graph_path(), "paths.graph")?)
            .map_err(classify)?;
        let mut rows = vec![0usize; network.n_segments()];
        for s in network.segments() {
            let idx = original.index_of_edge(s.edge_id).ok_or_else(|| {
                CliError::Runtime(format!(
                    "edge {} of {} is not in {} — graphs do not describe the same world",
                    s.edge_id,
                    cleaned_graph.display(),
                    config.graph_path().display()
                ))
            })?;
            rows[s.segment_row] = original.segment(idx).segment_row;
        }
        select_rows(&truth, &rows).map_err(classify)?
    };
    if !truth.is_complete() {
        return Err(CliError::Runtime(format!(
            "truth matrix {} has missing cells; the evaluation world must be fully observed",
            config.truth_path().display()
        )));
    }
    Ok((network, truth))
}

/// Query departure days: configured explicitly, or every full day after
/// the training window except the last (kept as routing horizon).
fn default_days(config: &RunConfig, truth: &TrafficMatrix) -> Result<Vec<u32>, CliError> {
    if let Some(days) = &config.test_set.days {
        return Ok(days.clone());
    }
    let total_days = (truth.n() as u64 * truth.grid.resolution as u64 / DAY_SECONDS) as u32;
    let first = config.fit.training_days.unwrap_or(0);
    let last = total_days.saturating_sub(1).max(first);
    let days: Vec<u32> = (first..last).collect();
    if days.is_empty() {
        return Err(CliError::Usage(format!(
            "no evaluation days left after a {first}-day training window in a \
             {total_days}-day world; set test_set.days explicitly"
        )));
    }
    Ok(days)
}

struct SummaryRow {
    name: String,
    count: usize,
    errors: usize,
    mean_seconds: f64,
    /// (alpha, quantile seconds), in reporting order.
    quantiles: Vec<(f64, Option<f64>)>,
}

fn render_summary(rows: &[SummaryRow], alphas: &[f64], n_queries: usize, benchmark_errors: usize) {
    print!("{:<24}{:>10}", "predictor", "mean");
    for a in alphas {
        print!("{:>10}", format!("q({a})"));
    }
    println!("{:>8}{:>8}", "n", "errors");
    for row in rows {
        print!("{:<24}{:>10.3}", row.name, row.mean_seconds / 60.0);
        for &(_, q) in &row.quantiles {
            match q {
                Some(q) => print!("{:>10.3}", q / 60.0),
                None => print!("{:>10}", "-"),
            }
        }
        println!("{:>8}{:>8}", row.count, row.errors);
    }
    println!("regret in minutes over {n_queries} queries; {benchmark_errors} benchmark failures");
}

fn summary_from_report(report: &SuiteReport, alphas: &[f64]) -> Vec<SummaryRow> {
    report
        .per_predictor
        .iter()
        .map(|pr| SummaryRow {
            name: pr.name.clone(),
            count: pr.stats.count,
            errors: pr.errors.len(),
            mean_seconds: pr.stats.mean,
            quantiles: alphas.iter().map(|&a| (a, pr.stats.quantile(a))).collect(),
        })
        .collect()
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<(), CliError> {
    let (network, truth) = load_world(config)?;
    let models_dir = config.models_dir();

    let mut frozen = Vec::new();
    for name in &config.evaluation.predictors {
        let handle = predictor_from_name(name, &models_dir)?;
        // Dimension guard: a model fitted before preprocessing changed
        // the row set would fail on every query — fail once, clearly.
        if let Variant::CycloLowrank(m) | Variant::CycloFullrank(m) | Variant::LowrankStatic(m) =
            &handle.variant
        {
            if m.basis.u_bar.nrows() != network.n_segments() {
                return Err(CliError::Runtime(format!(
                    "model {name} predicts {} segments but the network has {}; refit on the \
                     current matrix",
                    m.basis.u_bar.nrows(),
                    network.n_segments()
                )));
            }
        }
        frozen.push(handle.freeze());
    }

    let seed = config.seed;
    let communities = detect_communities(&network, seed);
    let sample = config.test_set.label_sample_size.unwrap_or(DEFAULT_LABEL_SAMPLE);
    let inner = label_inner_outer(&network, &communities, seed, sample);

    let mut spec = TestSetSpec::new(default_days(config, &truth)?, seed);
    if let Some(hours) = &config.test_set.departure_hours {
        spec.departure_hours = hours.clone();
    }
    if let Some(min) = config.test_set.min_travel_seconds {
        spec.min_travel_seconds = min;
    }
    if let Some(rest) = &config.test_set.rest_days {
        spec.rest_days = rest.clone();
    }

    let queries =
        build_test_set(&network, &communities, &inner, &spec, &truth).map_err(classify)?;
    println!(
        "{} queries over {} communities ({} inner); {} predictors",
        queries.len(),
        communities.n_communities,
        inner.iter().filter(|&&b| b).count(),
        frozen.len()
    );

    let suite_cfg = SuiteConfig {
        alphas: config.evaluation.alphas.clone(),
        hop_bin_min_samples: config.evaluation.hop_bin_min_samples,
    };
    let report =
        evaluate_suite(&network, &truth, &frozen, &queries, &suite_cfg).map_err(classify)?;

    let out = config.output_dir();
    io::write_evaluation_outputs(&out, &report).map_err(classify)?;
    println!("results -> {}", out.display());
    render_summary(
        &summary_from_report(&report, &config.evaluation.alphas),
        &config.evaluation.alphas,
        report.n_queries,
        report.benchmark_errors.len(),
    );
    Ok(())
}

pub fn cmd_report(config: &RunConfig) -> Result<(), CliError> {
    let path = config.output_dir().join("stats.json");
    let path = require_file(&path, "report input (run `evaluate` first)")?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| io_err(&format!("reading {}", path.display()), e))?;
    let stats: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("parsing {}: {e}", path.display())))?;

    let predictors = stats["predictors"]
        .as_array()
        .ok_or_else(|| CliError::Runtime(format!("{}: no predictors array", path.display())))?;
    let mut alphas: Vec<f64> = Vec::new();
    let mut rows = Vec::new();
    for p in predictors {
        let overall = &p["overall"];
        let quantiles: Vec<(f64, Option<f64>)> = overall["upper_quantiles"]
            .as_array()
            .map(|qs| {
                qs.iter()
                    .map(|q| {
                        (q["alpha"].as_f64().unwrap_or(f64::NAN), q["regret_seconds"].as_f64())
                    })
                    .collect()
            })
            .unwrap_or_default();
        if alphas.is_empty() {
            alphas = quantiles.iter().map(|&(a, _)| a).collect();
        }
        rows.push(SummaryRow {
            name: p["name"].as_str().unwrap_or("?").to_string(),
            count: overall["count"].as_u64().unwrap_or(0) as usize,
            errors: p["errors"].as_u64().unwrap_or(0) as usize,
            mean_seconds: overall["mean_regret_seconds"].as_f64().unwrap_or(f64::NAN),
            quantiles,
        });
    }
    render_summary(
        &rows,
        &alphas,
        stats["n_queries"].as_u64().unwrap_or(0) as usize,
        stats["benchmark_errors"].as_u64().unwrap_or(0) as usize,
    );
    Ok(())
}
