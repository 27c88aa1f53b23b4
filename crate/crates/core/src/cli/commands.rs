use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ConfigFile, RunConfig};
use super::io::{ensemble_csv, json_bytes, matrix_csv, parse_ensemble, sha256_hex, FileRecord, OutputDir};
use super::{AnalyzeArgs, CliError, Command, CompareArgs, CommonArgs, InputArgs, SimulateArgs, SparseArgs, SpectralArgs, ValidateArgs};
use crate::aln::{
    generate_polytree_aln, run_recovery, simulate, RecoveryReport, DEFAULT_LINK_ORDER, DEFAULT_NOISE_RANGE,
};
use crate::metric::{
    causal_distance_matrix, correlation_distance_matrix, distance_matrix, spearman_index, triangle_violations,
    windowed_average_distance, DistanceMatrix, ESTIMATE_TRIANGLE_TOLERANCE,
};
use crate::signal::{
    coherence_function, detrend_seasonal, spectral_matrix, Ensemble, FrequencyGrid, SpectralMatrix, WelchConfig,
};
use crate::sparse::{matching_pursuit, orthogonal_least_squares, sparse_exhaustive, Solver};
use crate::topology::{
    build_polytree, export_dot, export_edge_list, minimum_spanning_tree, miso_blanket_topology, GraphExport,
    DEFAULT_BLANKET_THRESHOLD,
};

const COMMON_KEYS: [&str; 2] = ["out", "seed"];
const SPECTRAL_KEYS: [&str; 3] = ["grid-size", "segments", "overlap"];
const INPUT_KEYS: [&str; 2] = ["input", "detrend-window"];
/// Distances below this are reported as indistinguishable pairs.
const DEGENERATE_DISTANCE: f64 = 1e-6;
const LISTED_VIOLATIONS: usize = 10;

pub(super) fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Validate(a) => validate(a),
        Command::Sparse(a) => sparse(a),
        Command::Compare(a) => compare(a),
    }
}

fn keys(groups: &[&[&'static str]]) -> Vec<&'static str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

fn load_config(common: &CommonArgs, allowed: &[&str]) -> Result<ConfigFile, CliError> {
    let file = ConfigFile::load(common.config.as_deref())?;
    file.check_keys(allowed)?;
    Ok(file)
}

fn apply_common(cfg: &mut RunConfig, file: &ConfigFile, a: &CommonArgs) -> Result<(), CliError> {
    cfg.out = file.pick(a.out.clone(), "out", cfg.out.clone())?;
    cfg.seed = file.pick(a.seed, "seed", cfg.seed)?;
    Ok(())
}

fn apply_spectral(cfg: &mut RunConfig, file: &ConfigFile, a: &SpectralArgs) -> Result<(), CliError> {
    cfg.grid_size = file.pick(a.grid_size, "grid-size", cfg.grid_size)?;
    cfg.segments = file.pick(a.segments, "segments", cfg.segments)?;
    cfg.overlap = file.pick(a.overlap, "overlap", cfg.overlap)?;
    cfg.validate_spectral()
}

fn apply_input(cfg: &mut RunConfig, file: &ConfigFile, a: &InputArgs) -> Result<(), CliError> {
    cfg.input = file.pick_opt(a.input.clone(), "input")?;
    cfg.detrend_window = file.pick(a.detrend_window, "detrend-window", cfg.detrend_window)?;
    if cfg.input.is_none() {
        return Err(CliError::input("--input is required"));
    }
    Ok(())
}

fn welch_config(cfg: &RunConfig) -> Result<WelchConfig, CliError> {
    Ok(WelchConfig::new(FrequencyGrid::new(cfg.grid_size)?, cfg.segments, cfg.overlap)?)
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_file: Option<InputRecord>,
    inputs: Vec<InputRecord>,
    outputs: Vec<FileRecord>,
    /// Files whose content changes between identical runs.
    volatile_outputs: Vec<&'static str>,
    warnings: Vec<String>,
    summary: Value,
}

/// Bookkeeping shared by every subcommand.
struct Run {
    cfg: RunConfig,
    config_file: Option<InputRecord>,
    out: OutputDir,
    inputs: Vec<InputRecord>,
    warnings: Vec<String>,
    timings: Vec<(String, f64)>,
}

impl Run {
    fn new(cfg: RunConfig, file: &ConfigFile) -> Result<Self, CliError> {
        let config_file = match file.path() {
            Some(p) => Some(InputRecord {
                path: p.display().to_string(),
                sha256: sha256_hex(&read(p)?),
            }),
            None => None,
        };
        let out = OutputDir::create(&cfg.out)?;
        Ok(Self {
            cfg,
            config_file,
            out,
            inputs: Vec::new(),
            warnings: Vec::new(),
            timings: Vec::new(),
        })
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
        let start = Instant::now();
        let r = f();
        self.timings.push((name.to_string(), start.elapsed().as_secs_f64() * 1e3));
        r
    }

    fn read_ensemble(&mut self) -> Result<Ensemble, CliError> {
        let path = self.cfg.input.clone().expect("input checked");
        let bytes = read(&path)?;
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        let ens = parse_ensemble(&bytes, &path.display().to_string())?;
        if self.cfg.detrend_window >= 2 {
            let series = ens
                .series()
                .iter()
                .map(|s| detrend_seasonal(s, self.cfg.detrend_window))
                .collect::<crate::Result<Vec<_>>>()?;
            return Ok(Ensemble::new(series)?);
        }
        Ok(ens)
    }

    fn spectra(&mut self, ens: &Ensemble) -> Result<SpectralMatrix, CliError> {
        let welch = welch_config(&self.cfg)?;
        let s = self.stage("spectra", || Ok(spectral_matrix(ens, &welch)?))?;
        for (label, &count) in s.labels().iter().zip(s.floor_events()) {
            if count > 0 {
                self.warnings.push(format!(
                    "spectral floor applied to '{label}' at {count} of {} grid points",
                    s.grid().len()
                ));
            }
        }
        Ok(s)
    }

    fn check_estimated_distances(&mut self, d: &DistanceMatrix) {
        let labels = d.labels();
        for i in 0..d.n() {
            for j in i + 1..d.n() {
                if d.get(i, j) < DEGENERATE_DISTANCE {
                    self.warnings.push(format!(
                        "series '{}' and '{}' are indistinguishable ({} distance {:e})",
                        labels[i],
                        labels[j],
                        d.kind().as_str(),
                        d.get(i, j)
                    ));
                }
            }
        }
        let v = triangle_violations(d, ESTIMATE_TRIANGLE_TOLERANCE);
        if !v.is_empty() {
            self.warnings.push(format!(
                "{} triangle-inequality breaches beyond {ESTIMATE_TRIANGLE_TOLERANCE} in the {} matrix",
                v.len(),
                d.kind().as_str()
            ));
            for t in v.iter().take(LISTED_VIOLATIONS) {
                self.warnings.push(format!(
                    "triangle breach: d({}, {}) exceeds d({}, {}) + d({}, {}) by {:.4}",
                    labels[t.i], labels[t.k], labels[t.i], labels[t.j], labels[t.j], labels[t.k], t.excess
                ));
            }
        }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.out.write(name, bytes)
    }

    fn write_matrix(&mut self, name: &str, d: &DistanceMatrix) -> Result<(), CliError> {
        let bytes = matrix_csv(d.labels(), d.rows())?;
        self.write(name, &bytes)
    }

    fn write_graph<G: GraphExport>(&mut self, stem: &str, g: &G) -> Result<(), CliError> {
        let mut dot = Vec::new();
        export_dot(g, &mut dot)?;
        self.write(&format!("{stem}.dot"), &dot)?;
        let mut csv = Vec::new();
        export_edge_list(g, &mut csv)?;
        self.write(&format!("{stem}_edges.csv"), &csv)
    }

    fn finish(self, summary: Value) -> Result<(), CliError> {
        let timings: Vec<Value> = self
            .timings
            .iter()
            .map(|(stage, ms)| json!({"stage": stage, "milliseconds": ms}))
            .collect();
        self.out.write_volatile("timings.json", &json_bytes(&json!({ "stages": timings }))?)?;
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config: &self.cfg,
            config_file: self.config_file,
            inputs: self.inputs,
            outputs: self.out.records(),
            volatile_outputs: vec!["timings.json"],
            warnings: self.warnings,
            summary,
        };
        self.out.write_volatile("manifest.json", &json_bytes(&manifest)?)
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::input(format!("cannot read '{}': {e}", path.display())))
}

fn edge_labels<G: GraphExport>(g: &G) -> Vec<[String; 2]> {
    let labels = g.labels();
    g.export_edges()
        .into_iter()
        .map(|(a, b, _, _)| [labels[a].clone(), labels[b].clone()])
        .collect()
}

fn ingest(run: &mut Run) -> Result<Ensemble, CliError> {
    let start = Instant::now();
    let ens = run.read_ensemble()?;
    run.timings.push(("ingest".into(), start.elapsed().as_secs_f64() * 1e3));
    Ok(ens)
}

fn mean_coherence(s: &SpectralMatrix) -> Result<Vec<Vec<f64>>, CliError> {
    let n = s.n();
    (0..n)
        .map(|i| (0..n).map(|j| Ok(coherence_function(s, i, j)?.mean())).collect())
        .collect()
}

fn noncausal_distances(run: &mut Run, ens: &Ensemble, s: &SpectralMatrix) -> Result<DistanceMatrix, CliError> {
    let window = run.cfg.window_length;
    let welch = welch_config(&run.cfg)?;
    run.stage("distances", || {
        Ok(if window > 0 {
            windowed_average_distance(ens, window, &welch)?
        } else {
            distance_matrix(s)
        })
    })
}

fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let allowed = keys(&[&COMMON_KEYS, &SPECTRAL_KEYS, &INPUT_KEYS, &["window-length", "pipeline"]]);
    let file = load_config(&a.common, &allowed)?;
    let mut cfg = RunConfig::defaults("analyze");
    apply_common(&mut cfg, &file, &a.common)?;
    apply_spectral(&mut cfg, &file, &a.spectral)?;
    apply_input(&mut cfg, &file, &a.input)?;
    cfg.window_length = file.pick(a.window_length, "window-length", cfg.window_length)?;
    cfg.pipeline = file.pick(a.pipeline, "pipeline", cfg.pipeline)?;

    let mut run = Run::new(cfg, &file)?;
    let ens = ingest(&mut run)?;
    let s = run.spectra(&ens)?;
    let d = noncausal_distances(&mut run, &ens, &s)?;
    run.check_estimated_distances(&d);
    run.write_matrix("distance_noncausal.csv", &d)?;
    let heat = mean_coherence(&s)?;
    run.write("coherence_heatmap.csv", &matrix_csv(s.labels(), &heat)?)?;

    let edges = match run.cfg.pipeline.pipeline() {
        crate::aln::Pipeline::MstCoherence => {
            let tree = run.stage("tree", || Ok(minimum_spanning_tree(&d)?))?;
            run.write_graph("tree", &tree)?;
            edge_labels(&tree)
        }
        crate::aln::Pipeline::PolytreeCausal => {
            let dc = run.stage("causal distances", || Ok(causal_distance_matrix(&s)?))?;
            run.write_matrix("distance_causal.csv", &dc)?;
            let p = run.stage("polytree", || Ok(build_polytree(&dc)?))?;
            let labels = p.labels().to_vec();
            for e in p.edges().iter().filter(|e| e.tie) {
                run.warnings.push(format!(
                    "tie between '{}' and '{}' oriented by index order",
                    labels[e.parent], labels[e.child]
                ));
            }
            run.write_graph("polytree", &p)?;
            edge_labels(&p)
        }
        crate::aln::Pipeline::MisoBlanket => {
            let full = distance_matrix(&s);
            let g = run.stage("blankets", || Ok(miso_blanket_topology(&s, &full, DEFAULT_BLANKET_THRESHOLD)?))?;
            run.write_graph("blanket", &g)?;
            edge_labels(&g)
        }
    };
    let summary = json!({
        "series": ens.n_series(),
        "samples": ens.len(),
        "edges": edges,
    });
    run.finish(summary)
}

fn simulate_cmd(a: SimulateArgs) -> Result<(), CliError> {
    let allowed = keys(&[&COMMON_KEYS, &["nodes", "length"]]);
    let file = load_config(&a.common, &allowed)?;
    let mut cfg = RunConfig::defaults("simulate");
    apply_common(&mut cfg, &file, &a.common)?;
    let n: usize = file.pick(a.nodes, "nodes", 8)?;
    if n < 2 {
        return Err(CliError::input(format!("nodes must be >= 2, got {n}")));
    }
    cfg.nodes = super::config::NodeRange { lo: n, hi: n };
    cfg.length = file.pick(a.length, "length", cfg.length)?;

    let mut run = Run::new(cfg, &file)?;
    let (seed, length) = (run.cfg.seed, run.cfg.length);
    let spec = run.stage("generate", || {
        Ok(generate_polytree_aln(n, seed, DEFAULT_LINK_ORDER, DEFAULT_NOISE_RANGE)?)
    })?;
    let sim = run.stage("simulate", || Ok(simulate(&spec, length, seed)?))?;
    run.write("spec.json", &json_bytes(&spec)?)?;
    run.write("ensemble.csv", &ensemble_csv(&sim.series)?)?;
    run.write("truth.dot", crate::topology::to_dot(&spec.polytree()?).as_bytes())?;
    let summary = json!({
        "nodes": n,
        "samples": length,
        "burn_in": sim.burn_in,
        "edges": spec.edges.len(),
    });
    run.finish(summary)
}

#[derive(Serialize)]
struct ValidationSummary {
    trials: usize,
    identifiable: usize,
    exact: usize,
    /// Identifiable trials that were not recovered exactly.
    exact_failures: usize,
    mean_precision: f64,
    mean_recall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_direction_accuracy: Option<f64>,
    ties: usize,
}

fn summarize(reports: &[RecoveryReport]) -> ValidationSummary {
    let exact = |r: &RecoveryReport| r.precision == 1.0 && r.recall == 1.0;
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    ValidationSummary {
        trials: reports.len(),
        identifiable: reports.iter().filter(|r| r.identifiable).count(),
        exact: reports.iter().filter(|r| exact(r)).count(),
        exact_failures: reports.iter().filter(|r| r.identifiable && !exact(r)).count(),
        mean_precision: mean(reports.iter().map(|r| r.precision).collect()).unwrap_or(0.0),
        mean_recall: mean(reports.iter().map(|r| r.recall).collect()).unwrap_or(0.0),
        mean_direction_accuracy: mean(reports.iter().filter_map(|r| r.direction_accuracy).collect()),
        ties: reports.iter().map(|r| r.ties).sum(),
    }
}

fn validate(a: ValidateArgs) -> Result<(), CliError> {
    let allowed = keys(&[&COMMON_KEYS, &SPECTRAL_KEYS, &["trials", "nodes", "length", "pipeline", "mode"]]);
    let file = load_config(&a.common, &allowed)?;
    let mut cfg = RunConfig::defaults("validate");
    apply_common(&mut cfg, &file, &a.common)?;
    apply_spectral(&mut cfg, &file, &a.spectral)?;
    cfg.trials = file.pick(a.trials, "trials", cfg.trials)?;
    cfg.nodes = file.pick(a.nodes, "nodes", cfg.nodes)?;
    cfg.length = file.pick(a.length, "length", cfg.length)?;
    cfg.pipeline = file.pick(a.pipeline, "pipeline", cfg.pipeline)?;
    cfg.mode = file.pick(a.mode, "mode", cfg.mode)?;
    if cfg.trials == 0 {
        return Err(CliError::input("trials must be >= 1"));
    }

    let mut run = Run::new(cfg, &file)?;
    let welch = welch_config(&run.cfg)?;
    let c = run.cfg.clone();
    let span = c.nodes.hi - c.nodes.lo + 1;
    let reports = run.stage("trials", || {
        (0..c.trials)
            .into_par_iter()
            .map(|i| {
                let seed = c.seed.wrapping_add(i as u64);
                let n = c.nodes.lo + i % span;
                let spec = generate_polytree_aln(n, seed, DEFAULT_LINK_ORDER, DEFAULT_NOISE_RANGE)?;
                run_recovery(&spec, c.mode.mode(), c.pipeline.pipeline(), c.length, seed, &welch)
            })
            .collect::<crate::Result<Vec<_>>>()
            .map_err(CliError::from)
    })?;
    let summary = summarize(&reports);
    let floors: usize = reports.iter().map(|r| r.floor_events).sum();
    if floors > 0 {
        run.warnings.push(format!("spectral floor applied at {floors} grid points across all trials"));
    }
    if summary.ties > 0 {
        run.warnings.push(format!("{} causal ties oriented by index order", summary.ties));
    }
    run.write("validation.json", &json_bytes(&json!({ "summary": &summary, "trials": &reports }))?)?;
    let failed = c.mode == super::config::ModeArg::Analytic && summary.exact_failures > 0;
    let summary_value = serde_json::to_value(&summary).map_err(|e| CliError::io(e.to_string()))?;
    run.finish(summary_value)?;
    if failed {
        return Err(CliError::validation(format!(
            "{} of {} identifiable trials were not recovered exactly from exact spectra",
            summary.exact_failures, summary.identifiable
        )));
    }
    Ok(())
}

fn sparse(a: SparseArgs) -> Result<(), CliError> {
    let allowed = keys(&[&COMMON_KEYS, &SPECTRAL_KEYS, &INPUT_KEYS, &["budget", "min-gain", "solver", "target"]]);
    let file = load_config(&a.common, &allowed)?;
    let mut cfg = RunConfig::defaults("sparse");
    apply_common(&mut cfg, &file, &a.common)?;
    apply_spectral(&mut cfg, &file, &a.spectral)?;
    apply_input(&mut cfg, &file, &a.input)?;
    cfg.budget = file.pick(a.budget, "budget", cfg.budget)?;
    cfg.min_gain = file.pick(a.min_gain, "min-gain", cfg.min_gain)?;
    cfg.solver = file.pick(a.solver, "solver", cfg.solver)?;
    cfg.target = file.pick_opt(a.target, "target")?;

    let mut run = Run::new(cfg, &file)?;
    let ens = ingest(&mut run)?;
    let s = run.spectra(&ens)?;
    let targets: Vec<usize> = match &run.cfg.target {
        Some(label) => vec![s
            .index_of(label)
            .ok_or_else(|| CliError::input(format!("unknown target '{label}'")))?],
        None => (0..s.n()).collect(),
    };
    let (budget, min_gain, solver) = (run.cfg.budget, run.cfg.min_gain, run.cfg.solver.solver());
    let models = run.stage("models", || {
        targets
            .par_iter()
            .map(|&t| match solver {
                Solver::Exhaustive => sparse_exhaustive(&s, t, budget),
                Solver::MatchingPursuit => matching_pursuit(&s, t, budget, min_gain),
                Solver::OrthogonalLeastSquares => orthogonal_least_squares(&s, t, budget, min_gain),
            })
            .collect::<crate::Result<Vec<_>>>()
            .map_err(CliError::from)
    })?;
    let records: Vec<_> = models.iter().map(|m| m.record(s.labels())).collect();
    run.write("sparse_models.json", &json_bytes(&records)?)?;
    let summary = json!({
        "series": ens.n_series(),
        "samples": ens.len(),
        "models": records.iter().map(|r| json!({"target": r.target, "support": r.support, "cost": r.cost})).collect::<Vec<_>>(),
    });
    run.finish(summary)
}

fn compare(a: CompareArgs) -> Result<(), CliError> {
    let allowed = keys(&[&COMMON_KEYS, &SPECTRAL_KEYS, &INPUT_KEYS, &["window-length"]]);
    let file = load_config(&a.common, &allowed)?;
    let mut cfg = RunConfig::defaults("compare");
    apply_common(&mut cfg, &file, &a.common)?;
    apply_spectral(&mut cfg, &file, &a.spectral)?;
    apply_input(&mut cfg, &file, &a.input)?;
    cfg.window_length = file.pick(a.window_length, "window-length", cfg.window_length)?;

    let mut run = Run::new(cfg, &file)?;
    let ens = ingest(&mut run)?;
    let s = run.spectra(&ens)?;
    let dn = noncausal_distances(&mut run, &ens, &s)?;
    let dr = run.stage("correlation", || Ok(correlation_distance_matrix(&ens)?))?;
    run.check_estimated_distances(&dn);
    run.write_matrix("distance_noncausal.csv", &dn)?;
    run.write_matrix("distance_correlation.csv", &dr)?;
    let tn = minimum_spanning_tree(&dn)?;
    let tr = minimum_spanning_tree(&dr)?;
    run.write_graph("mst_coherence", &tn)?;
    run.write_graph("mst_correlation", &tr)?;

    let spearman = spearman_index(&dn, &dr)?;
    if spearman.is_none() {
        run.warnings.push("rank correlation is not applicable to these matrices".into());
    }
    let mut pairs = 0usize;
    let mut dominated = 0usize;
    for i in 0..dn.n() {
        for j in i + 1..dn.n() {
            let rho = 1.0 - dr.get(i, j).powi(2) / 2.0;
            let corr_analogue = (1.0 - rho * rho).max(0.0).sqrt();
            pairs += 1;
            if dn.get(i, j) < corr_analogue {
                dominated += 1;
            }
        }
    }
    let shared = tn.edge_set().intersection(&tr.edge_set()).count();
    let result = json!({
        "spearman": spearman,
        "spearman_status": if spearman.is_some() { "ok" } else { "not-applicable" },
        "pairs": pairs,
        "coherence_below_correlation": dominated,
        "shared_tree_edges": shared,
        "tree_edges": tn.edges().len(),
    });
    run.write("compare.json", &json_bytes(&result)?)?;
    run.finish(result)
}
