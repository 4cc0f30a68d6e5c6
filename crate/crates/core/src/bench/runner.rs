//! Experiment execution.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::bench::config::{Cell, ExperimentConfig, ExperimentKind, Method, Reference};
use crate::bench::output::{summary_table, write_json, write_table, Manifest, Table, Value};
use crate::error::{Error, Result};
use crate::exec::{with_threads, Execution};
use crate::filter::{run, run_bootstrap, EstimateRow, FilterTrace};
use crate::graph::{
    local_exchange_matrix, mixing_constant, random_regular_matrix, random_rows_matrix, Connectivity,
    ConnectivityMatrix, MixingOptions,
};
use crate::metrics::{mse, relative_mse, summarize, GroupKey, SummaryRow, WeightedSample};
use crate::model::HmmModel;
use crate::oracle::{kalman_reference, Connections, FiniteModel, OracleTrace};
use crate::phi::TestFunction;
use crate::rng::{hash_words, Purpose, StreamKey};

/// Replicate index reserved for reference runs.
const REFERENCE_REPLICATE: u64 = u64::MAX;

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    /// One record per replicate (and time, for full traces).
    pub raw: Table,
    pub summary: Vec<SummaryRow>,
    /// Experiment-specific comparison table, if any.
    pub derived: Option<Table>,
}

/// Streams of replicate `r` for `n` particles. Methods share them, so
/// comparisons at equal `(N, r)` use common random numbers.
pub fn replicate_key(seed: u64, n: usize, replicate: usize) -> StreamKey {
    StreamKey::new(seed, hash_words(&[n as u64, replicate as u64]))
}

/// `2 sqrt(C - 1) / C`, the mixing constant of a Ramanujan `C`-regular graph.
pub fn ramanujan_bound(c: usize) -> f64 {
    2.0 * ((c as f64) - 1.0).sqrt() / c as f64
}

/// The `g`-th connectivity matrix of a mixing sweep.
pub fn sample_matrix(method: Method, n: usize, c: usize, seed: u64, g: usize) -> Result<ConnectivityMatrix> {
    let mut rng = StreamKey::new(seed, hash_words(&[n as u64, c as u64])).rng(g, 0, Purpose::Graph);
    match method {
        Method::FixedRegular => random_regular_matrix(n, c, &mut rng),
        Method::LocalExchange => local_exchange_matrix(n, c),
        Method::PerStepRandomRows => random_rows_matrix(n, c, &mut rng),
        Method::Bootstrap => Ok(crate::graph::complete_matrix(n)),
    }
}

/// Mixing constants of `graphs` independent draws.
pub fn mixing_constants(method: Method, n: usize, c: usize, graphs: usize, seed: u64) -> Result<Vec<f64>> {
    method.spec(Some(c), seed).check_feasible(n)?;
    Execution::Parallel.try_map(graphs, |g| {
        let m = sample_matrix(method, n, c, seed, g)?;
        mixing_constant(
            &m,
            &MixingOptions {
                seed: g as u64,
                ..MixingOptions::default()
            },
        )
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::MixingSweep => mixing_sweep(cfg),
        ExperimentKind::DensityCompare => density_compare(cfg),
        ExperimentKind::WassersteinVsC => wasserstein_study(cfg),
        _ => filter_study(cfg),
    }
}

fn mixing_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut raw = Table::new(["method", "C", "N", "graph", "lambda", "ramanujan"]);
    let mut records = Vec::new();
    for cell in cfg.cells() {
        let c = cell.c.expect("mixing cells have connections");
        let lambdas = mixing_constants(cell.method, cell.n, c, cfg.graphs, cfg.graph_seed())?;
        for (g, lam) in lambdas.into_iter().enumerate() {
            raw.push(vec![
                cell.method.name().into(),
                c.into(),
                cell.n.into(),
                g.into(),
                lam.into(),
                (cell.method == Method::FixedRegular).then(|| ramanujan_bound(c)).into(),
            ]);
            records.push((group("lambda", &cell, 0), lam));
        }
    }
    Ok(ExperimentOutput {
        kind: cfg.experiment,
        raw,
        summary: summarize(records),
        derived: None,
    })
}

fn group(target: &str, cell: &Cell, t: usize) -> GroupKey {
    GroupKey {
        target: target.to_string(),
        method: cell.method.name().to_string(),
        c: cell.c,
        n: cell.n,
        t,
    }
}

struct Prepared {
    model: HmmModel,
    cells: Vec<Cell>,
    connectivity: Vec<Connectivity>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let model = cfg.build_model()?;
    let cells = cfg.cells();
    let connectivity = cells
        .iter()
        .map(|cell| cell.spec(cfg.graph_seed()).resolve(cell.n))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        model,
        cells,
        connectivity,
    })
}

/// Runs every `(cell, replicate)` job, returning traces in job order.
fn run_jobs<T: Send>(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    phis: &[TestFunction],
    keep: impl Fn(FilterTrace) -> T + Sync + Send,
) -> Result<Vec<T>> {
    let reps = cfg.replicates;
    Execution::Parallel.try_map(prep.cells.len() * reps, |k| {
        let (ci, r) = (k / reps, k % reps);
        let cell = &prep.cells[ci];
        let key = replicate_key(cfg.seed, cell.n, r);
        let trace = run(&prep.model, cell.n, &prep.connectivity[ci], &key, phis, Execution::Sequential)?;
        Ok(keep(trace))
    })
}

fn trace_header(phis: &[TestFunction]) -> Vec<String> {
    let mut h: Vec<String> = ["method", "C", "N", "replicate", "t", "log_Z_hat", "ess_ratio", "pred_mean"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for kind in ["pi_hat", "gamma_hat", "mu_hat"] {
        for phi in phis {
            h.push(format!("{kind}_{phi}"));
        }
    }
    h
}

fn trace_record(cell: &Cell, replicate: usize, row: &EstimateRow) -> Vec<Value> {
    let mut v = vec![
        cell.method.name().into(),
        cell.c.into(),
        cell.n.into(),
        replicate.into(),
        row.t.into(),
        row.log_z_hat.into(),
        row.ess_ratio.into(),
        row.pred_mean.into(),
    ];
    v.extend(row.pi_hat.iter().map(|&x| Value::from(x)));
    v.extend(row.gamma_hat.iter().map(|&x| Value::from(x)));
    v.extend(row.mu_hat.iter().map(|&x| Value::from(x)));
    v
}

/// Per-time truth for error metrics.
struct Truth {
    log_z: Vec<f64>,
    pred_mean: Vec<Option<f64>>,
}

fn truth(cfg: &ExperimentConfig, model: &HmmModel) -> Result<Truth> {
    match cfg.resolved_reference(model) {
        Reference::Kalman => {
            let k = kalman_reference(model)?;
            Ok(Truth {
                log_z: k.iter().map(|s| s.log_z).collect(),
                pred_mean: k.iter().map(|s| (s.t > 0).then_some(s.pred_mean)).collect(),
            })
        }
        Reference::Oracle => {
            let fm = FiniteModel::from_model(model)?;
            let tr = OracleTrace::compute(&fm, model.horizon(), Connections::Bootstrap)?;
            let log_z = (0..=model.horizon())
                .map(|t| tr.z(t).map(f64::ln))
                .collect::<Result<Vec<_>>>()?;
            Ok(Truth {
                pred_mean: vec![None; log_z.len()],
                log_z,
            })
        }
        Reference::Bootstrap { n } => {
            let trace = reference_run(cfg, model, n)?;
            Ok(Truth {
                log_z: trace.rows.iter().map(|r| r.log_z_hat).collect(),
                pred_mean: trace.rows.iter().map(|r| r.pred_mean).collect(),
            })
        }
        Reference::Auto => Err(Error::Internal("reference left unresolved".into())),
    }
}

fn reference_run(cfg: &ExperimentConfig, model: &HmmModel, n: usize) -> Result<FilterTrace> {
    let key = StreamKey::new(cfg.seed, REFERENCE_REPLICATE);
    run_bootstrap(model, n, &key, &[], Execution::Parallel)
}

fn filter_study(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let prep = prepare(cfg)?;
    let phis = cfg.phis();
    let horizon = prep.model.horizon();
    let full = cfg.full_trace;
    let truth = match cfg.experiment {
        ExperimentKind::MseVsC | ExperimentKind::MseVsN => Some(truth(cfg, &prep.model)?),
        _ => None,
    };
    let traces = run_jobs(cfg, &prep, &phis, |tr| {
        if full {
            tr.rows
        } else {
            vec![tr.rows[horizon].clone()]
        }
    })?;

    let mut raw = Table::new(trace_header(&phis));
    let mut records = Vec::new();
    for (k, rows) in traces.iter().enumerate() {
        let cell = &prep.cells[k / cfg.replicates];
        for row in rows {
            raw.push(trace_record(cell, k % cfg.replicates, row));
            records.push((group("log_Z_hat", cell, row.t), row.log_z_hat));
            records.push((group("ess_ratio", cell, row.t), row.ess_ratio));
            if let Some(p) = row.pred_mean {
                records.push((group("pred_mean", cell, row.t), p));
            }
            for (phi, &p) in phis.iter().zip(&row.pi_hat) {
                records.push((group(&format!("pi_hat_{phi}"), cell, row.t), p));
            }
        }
    }

    let derived = match cfg.experiment {
        ExperimentKind::MseVsC | ExperimentKind::MseVsN => {
            Some(mse_table(cfg, &prep, &traces, truth.as_ref().expect("truth computed")))
        }
        ExperimentKind::CltCheck => Some(clt_table(cfg, &prep, &phis, &traces)?),
        _ => None,
    };
    Ok(ExperimentOutput {
        kind: cfg.experiment,
        raw,
        summary: summarize(records),
        derived,
    })
}

/// Values of `f` over the replicates of cell `ci`, at the `slot`-th recorded time.
fn column(
    cfg: &ExperimentConfig,
    traces: &[Vec<EstimateRow>],
    ci: usize,
    slot: usize,
    f: impl Fn(&EstimateRow) -> Option<f64>,
) -> Option<Vec<f64>> {
    let r = cfg.replicates;
    traces[ci * r..(ci + 1) * r].iter().map(|rows| f(&rows[slot])).collect()
}

fn mse_table(cfg: &ExperimentConfig, prep: &Prepared, traces: &[Vec<EstimateRow>], truth: &Truth) -> Table {
    let mut table = Table::new(["target", "method", "C", "N", "t", "truth", "mse", "baseline_mse", "relative_mse"]);
    let slots = traces.first().map_or(0, Vec::len);
    let baseline_of = |n: usize| {
        prep.cells
            .iter()
            .position(|c| c.method == Method::Bootstrap && c.n == n)
            .expect("bootstrap baseline is part of every grid")
    };
    type Getter = fn(&EstimateRow) -> Option<f64>;
    let targets: [(&str, Getter); 2] = [("log_Z_hat", |r| Some(r.log_z_hat)), ("pred_mean", |r| r.pred_mean)];
    for (ci, cell) in prep.cells.iter().enumerate() {
        let bi = baseline_of(cell.n);
        for slot in 0..slots {
            let t = traces[ci * cfg.replicates][slot].t;
            for (name, get) in targets {
                let truth_t = if name == "log_Z_hat" {
                    Some(truth.log_z[t])
                } else {
                    truth.pred_mean[t]
                };
                let (Some(tv), Some(xs), Some(bs)) =
                    (truth_t, column(cfg, traces, ci, slot, get), column(cfg, traces, bi, slot, get))
                else {
                    continue;
                };
                let m = mse(&xs, tv).expect("replicates are nonempty");
                let b = mse(&bs, tv).expect("replicates are nonempty");
                let rel = relative_mse(&xs, &bs, tv).expect("equal replicate counts");
                table.push(vec![
                    name.into(),
                    cell.method.name().into(),
                    cell.c.into(),
                    cell.n.into(),
                    t.into(),
                    tv.into(),
                    m.into(),
                    b.into(),
                    rel.into(),
                ]);
            }
        }
    }
    table
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

fn clt_table(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    phis: &[TestFunction],
    traces: &[Vec<EstimateRow>],
) -> Result<Table> {
    let mut table = Table::new([
        "phi",
        "method",
        "C",
        "N",
        "t",
        "oracle_gamma",
        "mean_gamma_hat",
        "oracle_v_gamma",
        "n_var_gamma_hat",
        "rel_err_v_gamma",
        "oracle_pi",
        "mean_pi_hat",
        "oracle_v_pi",
        "n_var_pi_hat",
        "rel_err_v_pi",
    ]);
    let fm = FiniteModel::from_model(&prep.model)?;
    let slots = traces.first().map_or(0, Vec::len);
    for (ci, cell) in prep.cells.iter().enumerate() {
        let oracle = OracleTrace::compute(&fm, prep.model.horizon(), Connections::from_c(cell.c))?;
        for slot in 0..slots {
            let t = traces[ci * cfg.replicates][slot].t;
            for (k, phi) in phis.iter().enumerate() {
                let f = fm.eval(*phi);
                let gam = column(cfg, traces, ci, slot, |r| Some(r.gamma_hat[k])).expect("present");
                let pis = column(cfg, traces, ci, slot, |r| Some(r.pi_hat[k])).expect("present");
                let (mg, vg) = mean_and_var(&gam);
                let (mp, vp) = mean_and_var(&pis);
                let n = cell.n as f64;
                let ovg = oracle.v_gamma(t, &f)?;
                let ovp = oracle.v_pi(t, &f)?;
                let rel = |emp: f64, exact: f64| if exact == 0.0 { f64::NAN } else { (emp - exact) / exact };
                table.push(vec![
                    phi.name().into(),
                    cell.method.name().into(),
                    cell.c.into(),
                    cell.n.into(),
                    t.into(),
                    oracle.gamma_of(t, &f)?.into(),
                    mg.into(),
                    ovg.into(),
                    (n * vg).into(),
                    rel(n * vg, ovg).into(),
                    oracle.pi_of(t, &f)?.into(),
                    mp.into(),
                    ovp.into(),
                    (n * vp).into(),
                    rel(n * vp, ovp).into(),
                ]);
            }
        }
    }
    Ok(table)
}

fn final_sample(trace: &FilterTrace) -> Result<WeightedSample> {
    WeightedSample::new(trace.last.states.clone(), trace.last.normalized_weights())
}

fn wasserstein_study(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let prep = prepare(cfg)?;
    let n_ref = match cfg.resolved_reference(&prep.model) {
        Reference::Bootstrap { n } => n,
        _ => return Err(Error::invalid("wasserstein-vs-C needs a bootstrap reference sample")),
    };
    let reference = final_sample(&reference_run(cfg, &prep.model, n_ref)?)?;
    let horizon = prep.model.horizon();
    let results = run_jobs(cfg, &prep, &[], |tr| {
        let w1 = final_sample(&tr).map(|s| crate::metrics::wasserstein1(&s, &reference));
        (w1, tr.rows[horizon].clone())
    })?;
    let mut raw = Table::new(["method", "C", "N", "replicate", "t", "w1", "log_Z_hat", "ess_ratio"]);
    let mut records = Vec::new();
    for (k, (w1, row)) in results.into_iter().enumerate() {
        let w1 = w1?;
        let cell = &prep.cells[k / cfg.replicates];
        raw.push(vec![
            cell.method.name().into(),
            cell.c.into(),
            cell.n.into(),
            (k % cfg.replicates).into(),
            row.t.into(),
            w1.into(),
            row.log_z_hat.into(),
            row.ess_ratio.into(),
        ]);
        records.push((group("w1", cell, row.t), w1));
    }
    Ok(ExperimentOutput {
        kind: cfg.experiment,
        raw,
        summary: summarize(records),
        derived: None,
    })
}

fn density_compare(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let prep = prepare(cfg)?;
    let finals = run_jobs(cfg, &prep, &[], |tr| tr.last)?;
    let mut raw = Table::new(["method", "C", "N", "replicate", "particle", "state", "log_weight"]);
    let mut records = Vec::new();
    for (k, sys) in finals.iter().enumerate() {
        let cell = &prep.cells[k / cfg.replicates];
        for (i, (&x, &lw)) in sys.states.iter().zip(&sys.log_weights).enumerate() {
            raw.push(vec![
                cell.method.name().into(),
                cell.c.into(),
                cell.n.into(),
                (k % cfg.replicates).into(),
                i.into(),
                x.into(),
                lw.into(),
            ]);
            records.push((group("state", cell, sys.t), x));
        }
    }
    Ok(ExperimentOutput {
        kind: cfg.experiment,
        raw,
        summary: summarize(records),
        derived: None,
    })
}

/// Writes `raw.csv`, `summary.csv`, `derived.csv` (when present) and
/// `manifest.json` into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, output: &ExperimentOutput, dir: &Path, wall: f64) -> Result<Manifest> {
    let mut files = vec![PathBuf::from("raw.csv"), PathBuf::from("summary.csv")];
    write_table(&dir.join("raw.csv"), &output.raw)?;
    write_table(&dir.join("summary.csv"), &summary_table(&output.summary))?;
    if let Some(d) = &output.derived {
        write_table(&dir.join("derived.csv"), d)?;
        files.push(PathBuf::from("derived.csv"));
    }
    files.push(PathBuf::from("manifest.json"));
    let manifest = Manifest {
        experiment: cfg.experiment.name().to_string(),
        config_hash: cfg.hash(),
        config: serde_json::from_str(&cfg.canonical_json())?,
        root_seed: cfg.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: wall,
        replicates: cfg.replicates,
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Validates, runs on `threads` workers and writes everything to `out_dir`
/// (the config's `out` when `None`).
pub fn run_to_disk(cfg: &ExperimentConfig, out_dir: Option<&Path>, threads: Option<usize>) -> Result<Manifest> {
    cfg.validate()?;
    let start = Instant::now();
    let output = with_threads(threads, || run_experiment(cfg))?;
    let dir = out_dir.unwrap_or(&cfg.out);
    write_outputs(cfg, &output, dir, start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    #[test]
    fn k4_mixing_constant() {
        let l = mixing_constants(Method::FixedRegular, 4, 3, 1, 0).unwrap();
        assert!((l[0] - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn mse_study_shapes() {
        let cfg = config(
            r#"{"experiment":"mse-vs-C","model":{"tag":"tracking","T":10,"observation_seed":1},
                "N":[50],"C":[4],"methods":["fixed-regular","per-step-random-rows"],"replicates":6,"seed":3,
                "full_trace":true}"#,
        );
        let out = run_experiment(&cfg).unwrap();
        // 3 cells x 6 replicates x 11 times.
        assert_eq!(out.raw.rows.len(), 3 * 6 * 11);
        let d = out.derived.unwrap();
        let boot: Vec<_> = d
            .rows_where("method", "bootstrap")
            .filter(|r| r[0].as_str() == Some("log_Z_hat"))
            .collect();
        assert_eq!(boot.len(), 11);
        let rel = d.column("relative_mse").unwrap();
        // At t = 10 the bootstrap is compared with itself.
        assert_eq!(boot[10][rel].as_f64(), Some(1.0));
        assert!(out.summary.iter().all(|r| r.q05 <= r.median && r.median <= r.q95));
    }

    #[test]
    fn clt_study_against_oracle() {
        let cfg = config(
            r#"{"experiment":"clt-check","model":{"tag":"two-state","T":2},"N":[200],"C":[2],
                "replicates":400,"seed":5,"phi":["one","state1"]}"#,
        );
        let out = run_experiment(&cfg).unwrap();
        let d = out.derived.unwrap();
        assert_eq!(d.rows.len(), 2 * 2);
        let k = d.column("rel_err_v_gamma").unwrap();
        for row in &d.rows {
            assert!(row[k].as_f64().unwrap().abs() < 0.3, "{row:?}");
        }
    }

    #[test]
    fn wasserstein_and_density_run() {
        let w = config(
            r#"{"experiment":"wasserstein-vs-C","model":{"tag":"ar1-indicator","T":2},"N":[100],"C":[5],
                "methods":["fixed-regular"],"replicates":2,"seed":1,"reference":{"kind":"bootstrap","N":2000}}"#,
        );
        let out = run_experiment(&w).unwrap();
        assert_eq!(out.raw.rows.len(), 4);
        assert!(out.summary.iter().all(|r| r.median > 0.0));
        let d = config(
            r#"{"experiment":"density-compare","model":{"tag":"ar1-indicator","T":2},"N":[30],"C":[5],
                "methods":["fixed-regular"],"replicates":1,"seed":1}"#,
        );
        assert_eq!(run_experiment(&d).unwrap().raw.rows.len(), 60);
    }

    #[test]
    fn results_do_not_depend_on_threads() {
        let cfg = config(
            r#"{"experiment":"estimate-vs-C","model":{"tag":"ar1-indicator","T":3},"N":[60],"C":[5],
                "replicates":4,"seed":9}"#,
        );
        let a = with_threads(Some(1), || run_experiment(&cfg)).unwrap();
        let b = with_threads(Some(4), || run_experiment(&cfg)).unwrap();
        assert_eq!(a.raw, b.raw);
    }
}
