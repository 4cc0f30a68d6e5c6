//! Connectivity matrices and their mixing constant.
//!
//! A connectivity matrix is a sparse row-stochastic `N x N` matrix. Row `i`
//! lists the particles whose weights particle `i` may draw from. Generators are
//! provided for the complete matrix, random-walk matrices of uniform random
//! `C`-regular graphs, local-exchange rings and per-step random rows.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{hash_words, Purpose, StreamKey};

const ROW_SUM_TOL: f64 = 1e-12;
const COL_SUM_TOL: f64 = 1e-10;

/// Restarts of the pairing model before switching to edge-switch repair.
pub const PAIRING_RESTARTS: usize = 500;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixFlags {
    pub bi_stochastic: bool,
    pub symmetric: bool,
}

/// Row-stochastic matrix in compressed sparse row form, columns sorted per row.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivityMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    flags: MatrixFlags,
}

impl ConnectivityMatrix {
    /// Builds a matrix from per-row `(column, weight)` lists. Duplicate columns
    /// are merged; structural flags are detected, not trusted.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::invalid(format!("expected {n} rows, got {}", rows.len())));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let mut sum = 0.0;
            let start = cols.len();
            for (j, w) in row {
                if j >= n {
                    return Err(Error::invalid(format!("column {j} out of range in row {i}")));
                }
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::invalid(format!("non-positive weight in row {i}")));
                }
                sum += w;
                if cols.len() > start && *cols.last().unwrap() == j {
                    *weights.last_mut().unwrap() += w;
                } else {
                    cols.push(j);
                    weights.push(w);
                }
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("row {i} sums to {sum}, not 1")));
            }
            row_ptr.push(cols.len());
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        let mut m = ConnectivityMatrix {
            n,
            row_ptr,
            cols,
            weights,
            log_weights,
            flags: MatrixFlags::default(),
        };
        m.flags = m.detect_flags();
        Ok(m)
    }

    fn detect_flags(&self) -> MatrixFlags {
        let mut col_sums = vec![0.0; self.n];
        for (&j, &w) in self.cols.iter().zip(&self.weights) {
            col_sums[j] += w;
        }
        let bi_stochastic = col_sums.iter().all(|s| (s - 1.0).abs() <= COL_SUM_TOL);
        let symmetric = (0..self.n).all(|i| {
            self.row(i)
                .all(|(j, w)| self.get(j, i).is_some_and(|wt| (wt - w).abs() <= 1e-15))
        });
        MatrixFlags {
            bi_stochastic,
            symmetric,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn flags(&self) -> MatrixFlags {
        self.flags
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Entries `(j, alpha_ij)` of row `i` in increasing column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    /// Row `i` as parallel slices of columns and log-weights.
    pub fn row_log(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.log_weights[r])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| self.weights[r.start + k])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, w)| w).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for (&j, &w) in self.cols.iter().zip(&self.weights) {
            s[j] += w;
        }
        s
    }

    /// `out = alpha v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, w)| w * v[j]).sum();
        }
    }

    /// `out = alpha^T v`.
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            for (j, w) in self.row(i) {
                out[j] += w * vi;
            }
        }
    }

    /// The same matrix with rows and columns relabelled by `perm` (`i -> perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut rows = vec![Vec::new(); self.n];
        for i in 0..self.n {
            rows[perm[i]] = self.row(i).map(|(j, w)| (perm[j], w)).collect();
        }
        ConnectivityMatrix::from_rows(self.n, rows)
    }

    /// Writes the nonzero pattern as `i j` lines (0-indexed). Symmetric
    /// matrices list each undirected edge once with `i < j`; self-loops as `i i`.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                if !self.flags.symmetric || i <= j {
                    writeln!(w, "{i} {j}")?;
                }
            }
        }
        Ok(())
    }

    /// Random-walk matrix of the graph given as an edge list. With `undirected`
    /// every line `i j` also adds `j i`.
    pub fn read_edge_list<R: BufRead>(n: usize, reader: R, undirected: bool) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<edge list>", e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            let (Some(Ok(i)), Some(Ok(j)), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::invalid(format!("malformed edge on line {}", lineno + 1)));
            };
            if i >= n || j >= n {
                return Err(Error::invalid(format!("vertex out of range on line {}", lineno + 1)));
            }
            adj[i].push(j);
            if undirected && i != j {
                adj[j].push(i);
            }
        }
        random_walk_matrix(n, &adj)
    }
}

/// Random-walk transition matrix of an adjacency list (`alpha_ij = 1/deg(i)`).
pub fn random_walk_matrix(n: usize, adj: &[Vec<usize>]) -> Result<ConnectivityMatrix> {
    let rows = adj
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            if nb.is_empty() {
                return Err(Error::invalid(format!("vertex {i} has no neighbours")));
            }
            let w = 1.0 / nb.len() as f64;
            Ok(nb.iter().map(|&j| (j, w)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    ConnectivityMatrix::from_rows(n, rows)
}

/// `alpha_ij = 1/n` for all `i, j`.
pub fn complete_matrix(n: usize) -> ConnectivityMatrix {
    let w = 1.0 / n as f64;
    let rows = (0..n).map(|_| (0..n).map(|j| (j, w)).collect()).collect();
    ConnectivityMatrix::from_rows(n, rows).expect("uniform rows are stochastic")
}

pub fn identity_matrix(n: usize) -> ConnectivityMatrix {
    let rows = (0..n).map(|i| vec![(i, 1.0)]).collect();
    ConnectivityMatrix::from_rows(n, rows).expect("identity rows are stochastic")
}

/// Number of neighbours (self included) in a local-exchange window for `C`.
pub fn local_exchange_width(c: usize) -> usize {
    2 * (c / 2) + 1
}

/// Ring matrix: row `i` puts equal mass on `(i + k) mod n` for
/// `k in -floor(C/2)..=floor(C/2)`. For even `C` the window holds `C + 1` entries.
pub fn local_exchange_matrix(n: usize, c: usize) -> Result<ConnectivityMatrix> {
    let width = local_exchange_width(c);
    if c == 0 || width > n {
        return Err(Error::Infeasible {
            n,
            c,
            kind: "local-exchange".into(),
            reason: format!("window of {width} particles does not fit in a ring of {n}"),
        });
    }
    let half = (c / 2) as isize;
    let w = 1.0 / width as f64;
    let rows = (0..n)
        .map(|i| {
            (-half..=half)
                .map(|k| ((i as isize + k).rem_euclid(n as isize) as usize, w))
                .collect()
        })
        .collect();
    ConnectivityMatrix::from_rows(n, rows)
}

/// `C` distinct columns drawn uniformly without replacement, sorted.
pub fn sample_row<R: Rng + ?Sized>(n: usize, c: usize, rng: &mut R) -> Vec<usize> {
    let mut cols = rand::seq::index::sample(rng, n, c).into_vec();
    cols.sort_unstable();
    cols
}

/// Each row holds `C` entries `1/C` at distinct uniformly chosen columns
/// (the row's own index may be among them).
pub fn random_rows_matrix<R: Rng + ?Sized>(n: usize, c: usize, rng: &mut R) -> Result<ConnectivityMatrix> {
    if c == 0 || c > n {
        return Err(Error::Infeasible {
            n,
            c,
            kind: "per-step-random-rows".into(),
            reason: "need 1 <= C <= N".into(),
        });
    }
    let w = 1.0 / c as f64;
    let rows = (0..n)
        .map(|_| sample_row(n, c, rng).into_iter().map(|j| (j, w)).collect())
        .collect();
    ConnectivityMatrix::from_rows(n, rows)
}

fn regular_feasibility(n: usize, c: usize) -> Result<()> {
    let reason = if c < 3 {
        Some("random regular graphs need C >= 3")
    } else if c >= n {
        Some("need C < N")
    } else if (n * c) % 2 == 1 {
        Some("N * C must be even")
    } else {
        None
    };
    match reason {
        Some(r) => Err(Error::Infeasible {
            n,
            c,
            kind: "fixed-regular".into(),
            reason: r.into(),
        }),
        None => Ok(()),
    }
}

fn edge_key(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

fn pairing_attempt<R: Rng + ?Sized>(n: usize, c: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut points: Vec<usize> = (0..n * c).map(|p| p / c).collect();
    points.shuffle(rng);
    points.chunks_exact(2).map(|p| (p[0], p[1])).collect()
}

fn is_simple(edges: &[(usize, usize)]) -> bool {
    let mut seen = HashSet::with_capacity(edges.len());
    edges
        .iter()
        .all(|&(u, v)| u != v && seen.insert(edge_key(u, v)))
}

/// Removes self-loops and repeated edges by degree-preserving switches
/// `{u,v},{x,y} -> {u,x},{v,y}`.
fn repair_by_switching<R: Rng + ?Sized>(
    n: usize,
    c: usize,
    mut edges: Vec<(usize, usize)>,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let mut count: HashMap<(usize, usize), usize> = HashMap::with_capacity(edges.len());
    for &(u, v) in &edges {
        *count.entry(edge_key(u, v)).or_default() += 1;
    }
    let is_bad = |count: &HashMap<(usize, usize), usize>, (u, v): (usize, usize)| {
        u == v || count.get(&edge_key(u, v)).copied().unwrap_or(0) > 1
    };
    let mut pending: Vec<usize> = (0..edges.len()).filter(|&k| is_bad(&count, edges[k])).collect();
    let budget = 1000 * n * c;
    let mut attempts = 0;
    while let Some(&b) = pending.last() {
        if !is_bad(&count, edges[b]) {
            pending.pop();
            continue;
        }
        attempts += 1;
        if attempts > budget {
            return Err(Error::GenerationFailed { n, c, attempts });
        }
        let e = rng.random_range(0..edges.len());
        if e == b {
            continue;
        }
        let (u, v) = edges[b];
        let (mut x, mut y) = edges[e];
        if rng.random::<bool>() {
            std::mem::swap(&mut x, &mut y);
        }
        if u == x || v == y {
            continue;
        }
        let (a1, a2) = (edge_key(u, x), edge_key(v, y));
        if a1 == a2 || count.contains_key(&a1) || count.contains_key(&a2) {
            continue;
        }
        for old in [edge_key(u, v), edge_key(x, y)] {
            let slot = count.get_mut(&old).expect("edge is counted");
            *slot -= 1;
            if *slot == 0 {
                count.remove(&old);
            }
        }
        count.insert(a1, 1);
        count.insert(a2, 1);
        edges[b] = (u, x);
        edges[e] = (v, y);
    }
    Ok(edges)
}

/// Edge list of a simple `C`-regular graph on `n` vertices.
///
/// Uses the pairing model with up to [`PAIRING_RESTARTS`] restarts; if every
/// attempt collides, the last pairing is repaired by edge switching.
pub fn random_regular_edges<R: Rng + ?Sized>(n: usize, c: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    regular_feasibility(n, c)?;
    let mut edges = pairing_attempt(n, c, rng);
    for _ in 0..PAIRING_RESTARTS {
        if is_simple(&edges) {
            return Ok(edges);
        }
        edges = pairing_attempt(n, c, rng);
    }
    if is_simple(&edges) {
        return Ok(edges);
    }
    repair_by_switching(n, c, edges, rng)
}

/// Random-walk matrix of a uniform random simple `C`-regular graph.
pub fn random_regular_matrix<R: Rng + ?Sized>(n: usize, c: usize, rng: &mut R) -> Result<ConnectivityMatrix> {
    let edges = random_regular_edges(n, c, rng)?;
    let mut adj = vec![Vec::with_capacity(c); n];
    for (u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    random_walk_matrix(n, &adj)
}

/// Declarative connectivity choice, as it appears in configs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConnectivitySpec {
    /// Every particle sees every other one (the bootstrap filter).
    Complete,
    /// One uniform random `C`-regular graph, drawn from `graph_seed` and kept for all steps.
    FixedRegular {
        #[serde(rename = "C")]
        c: usize,
        #[serde(default)]
        graph_seed: u64,
    },
    /// Ring of width `2 floor(C/2) + 1`.
    LocalExchange {
        #[serde(rename = "C")]
        c: usize,
    },
    /// Fresh rows of `C` uniform columns at every step.
    PerStepRandomRows {
        #[serde(rename = "C")]
        c: usize,
    },
}

impl ConnectivitySpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ConnectivitySpec::Complete => "complete",
            ConnectivitySpec::FixedRegular { .. } => "fixed-regular",
            ConnectivitySpec::LocalExchange { .. } => "local-exchange",
            ConnectivitySpec::PerStepRandomRows { .. } => "per-step-random-rows",
        }
    }

    pub fn connections(&self) -> Option<usize> {
        match *self {
            ConnectivitySpec::Complete => None,
            ConnectivitySpec::FixedRegular { c, .. }
            | ConnectivitySpec::LocalExchange { c }
            | ConnectivitySpec::PerStepRandomRows { c } => Some(c),
        }
    }

    /// Checks the `(N, C)` preconditions without building anything.
    pub fn check_feasible(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::invalid("need at least one particle"));
        }
        match *self {
            ConnectivitySpec::Complete => Ok(()),
            ConnectivitySpec::FixedRegular { c, .. } => regular_feasibility(n, c),
            ConnectivitySpec::LocalExchange { c } => {
                let width = local_exchange_width(c);
                if c == 0 || width > n {
                    Err(Error::Infeasible {
                        n,
                        c,
                        kind: "local-exchange".into(),
                        reason: format!("window of {width} particles does not fit in a ring of {n}"),
                    })
                } else {
                    Ok(())
                }
            }
            ConnectivitySpec::PerStepRandomRows { c } => {
                if c == 0 || c > n {
                    Err(Error::Infeasible {
                        n,
                        c,
                        kind: "per-step-random-rows".into(),
                        reason: "need 1 <= C <= N".into(),
                    })
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Materialises whatever is fixed for a run with `n` particles.
    pub fn resolve(&self, n: usize) -> Result<Connectivity> {
        self.check_feasible(n)?;
        Ok(match *self {
            ConnectivitySpec::Complete => Connectivity::Complete,
            ConnectivitySpec::FixedRegular { c, graph_seed } => {
                let key = StreamKey::new(graph_seed, hash_words(&[n as u64, c as u64]));
                let mut rng = key.rng(0, 0, Purpose::Graph);
                Connectivity::Fixed(Arc::new(random_regular_matrix(n, c, &mut rng)?))
            }
            ConnectivitySpec::LocalExchange { c } => {
                Connectivity::Fixed(Arc::new(local_exchange_matrix(n, c)?))
            }
            ConnectivitySpec::PerStepRandomRows { c } => Connectivity::RandomRows { c },
        })
    }
}

impl fmt::Display for ConnectivitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.connections() {
            Some(c) => write!(f, "{}(C={c})", self.kind_name()),
            None => f.write_str(self.kind_name()),
        }
    }
}

/// Connectivity ready for filtering.
#[derive(Clone, Debug)]
pub enum Connectivity {
    /// Short-circuited complete matrix; never materialised.
    Complete,
    /// The same matrix at every step.
    Fixed(Arc<ConnectivityMatrix>),
    /// Rows redrawn at every step from the replicate's graph streams.
    RandomRows { c: usize },
}

impl Connectivity {
    pub fn matrix(&self) -> Option<&ConnectivityMatrix> {
        match self {
            Connectivity::Fixed(m) => Some(m),
            _ => None,
        }
    }
}

/// Settings for [`mixing_constant`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixingOptions {
    /// Relative tolerance on the residual of the top eigenpair.
    pub tol: f64,
    /// Total operator applications allowed.
    pub max_iter: usize,
    /// Seed of the start vector.
    pub seed: u64,
}

impl Default for MixingOptions {
    fn default() -> Self {
        MixingOptions {
            tol: 1e-10,
            max_iter: 100_000,
            seed: 0,
        }
    }
}

fn project_out_ones(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn start_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = StreamKey::new(seed, 0).rng(0, 0, Purpose::Aux);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    project_out_ones(&mut v);
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// `out = P alpha^T alpha P v` with `P` the projector onto the complement of `1`.
struct GramOperator<'a> {
    alpha: &'a ConnectivityMatrix,
    tmp_in: Vec<f64>,
    tmp_mid: Vec<f64>,
}

impl<'a> GramOperator<'a> {
    fn new(alpha: &'a ConnectivityMatrix) -> Self {
        let n = alpha.n();
        GramOperator {
            alpha,
            tmp_in: vec![0.0; n],
            tmp_mid: vec![0.0; n],
        }
    }

    fn apply(&mut self, v: &[f64], out: &mut [f64]) {
        self.tmp_in.copy_from_slice(v);
        project_out_ones(&mut self.tmp_in);
        self.alpha.apply(&self.tmp_in, &mut self.tmp_mid);
        self.alpha.apply_transpose(&self.tmp_mid, out);
        project_out_ones(out);
    }
}

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal `a`
/// and off-diagonal `b`, bracketed by bisection on Sturm counts.
/// Returns `(lower, upper)` ends of the final bracket.
fn tridiagonal_top_eigenvalue(a: &[f64], b: &[f64]) -> (f64, f64) {
    let k = a.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..k {
        let r = if i > 0 { b[i - 1].abs() } else { 0.0 } + if i + 1 < k { b[i].abs() } else { 0.0 };
        lo = lo.min(a[i] - r);
        hi = hi.max(a[i] + r);
    }
    // Number of eigenvalues strictly greater than x.
    let count_above = |x: f64| {
        let mut count = 0;
        let mut d = 1.0f64;
        for i in 0..k {
            let off = if i > 0 { b[i - 1] * b[i - 1] } else { 0.0 };
            d = (a[i] - x) - if i > 0 { off / d } else { 0.0 };
            if d == 0.0 {
                d = -f64::EPSILON * (x.abs() + f64::MIN_POSITIVE);
            }
            if d > 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_above(mid) >= 1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Unit eigenvector of the tridiagonal matrix for its top eigenvalue, by
/// inverse iteration with a shift just above the spectrum (negative definite
/// system, so elimination without pivoting is stable).
fn tridiagonal_top_eigenvector(a: &[f64], b: &[f64], upper: f64) -> Vec<f64> {
    let k = a.len();
    let shift = upper + 1e-13 * upper.abs().max(1e-3);
    let mut x = vec![1.0 / (k as f64).sqrt(); k];
    let mut diag = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for _ in 0..3 {
        // Thomas algorithm on (T - shift I) y = x.
        diag[0] = a[0] - shift;
        rhs[0] = x[0];
        for i in 1..k {
            let m = b[i - 1] / diag[i - 1];
            diag[i] = (a[i] - shift) - m * b[i - 1];
            rhs[i] = x[i] - m * rhs[i - 1];
        }
        let mut y = vec![0.0; k];
        y[k - 1] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            y[i] = (rhs[i] - b[i] * y[i + 1]) / diag[i];
        }
        let s = norm(&y);
        x = y.into_iter().map(|v| v / s).collect();
    }
    x
}

/// Mixing constant `sup { |alpha v| : |v| = 1, <v, 1> = 0 }`.
///
/// Computed as the square root of the top eigenvalue of `P alpha^T alpha P`
/// by Lanczos iteration with full reorthogonalisation. For symmetric `alpha`
/// this is the second-largest absolute eigenvalue.
pub fn mixing_constant(alpha: &ConnectivityMatrix, opts: &MixingOptions) -> Result<f64> {
    let n = alpha.n();
    if n <= 1 {
        return Ok(0.0);
    }
    let dim = n - 1;
    let krylov_cap = dim.min(3000);
    let mut op = GramOperator::new(alpha);
    let mut start = start_vector(n, opts.seed);
    let mut applications = 0usize;

    loop {
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut diag: Vec<f64> = Vec::new();
        let mut off: Vec<f64> = Vec::new();
        let mut w = vec![0.0; n];
        loop {
            let k = basis.len() - 1;
            op.apply(&basis[k], &mut w);
            applications += 1;
            let a_k = dot(&basis[k], &w);
            diag.push(a_k);
            for (coef, q) in [(a_k, k)].into_iter().chain((k > 0).then(|| (off[k - 1], k - 1))) {
                let q = &basis[q];
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= coef * qi);
            }
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &w);
                    w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
                }
                project_out_ones(&mut w);
            }
            let b_k = norm(&w);
            let (_, upper) = tridiagonal_top_eigenvalue(&diag, &off);
            let theta = upper.max(0.0);
            let s = tridiagonal_top_eigenvector(&diag, &off, upper);
            let residual = b_k * s[k].abs();
            let scale = op_scale(&diag);
            let converged = residual <= opts.tol * theta.max(1e-300)
                || b_k <= 1e-14 * scale
                || basis.len() == dim;
            if converged {
                return Ok(theta.sqrt().min(1.0));
            }
            if applications >= opts.max_iter {
                let ritz = ritz_vector(&basis, &s);
                return Err(Error::NonConvergence {
                    iterations: applications,
                    estimate: theta.sqrt(),
                    residual,
                    last_iterate: ritz,
                });
            }
            if basis.len() == krylov_cap {
                start = ritz_vector(&basis, &s);
                break;
            }
            off.push(b_k);
            basis.push(w.iter().map(|x| x / b_k).collect());
        }
    }
}

fn op_scale(diag: &[f64]) -> f64 {
    diag.iter().fold(1e-300f64, |m, d| m.max(d.abs()))
}

fn ritz_vector(basis: &[Vec<f64>], s: &[f64]) -> Vec<f64> {
    let n = basis[0].len();
    let mut y = vec![0.0; n];
    for (q, &c) in basis.iter().zip(s) {
        y.iter_mut().zip(q).for_each(|(yi, qi)| *yi += c * qi);
    }
    project_out_ones(&mut y);
    let s = norm(&y);
    if s > 0.0 {
        y.iter_mut().for_each(|x| *x /= s);
    }
    y
}

/// Plain power iteration on `P alpha^T alpha P`, stopping when successive
/// eigenvalue estimates agree to `tol` relative. Slow for clustered spectra;
/// kept as an independent check on [`mixing_constant`].
pub fn mixing_constant_power(alpha: &ConnectivityMatrix, opts: &MixingOptions) -> Result<f64> {
    let n = alpha.n();
    if n <= 1 {
        return Ok(0.0);
    }
    let mut op = GramOperator::new(alpha);
    let mut v = start_vector(n, opts.seed);
    let mut w = vec![0.0; n];
    let mut prev = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        op.apply(&v, &mut w);
        let theta = dot(&v, &w);
        residual = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - theta * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        let len = norm(&w);
        if len == 0.0 {
            return Ok(0.0);
        }
        if (theta - prev).abs() <= opts.tol * theta.abs() && it > 1 {
            return Ok(theta.max(0.0).sqrt().min(1.0));
        }
        prev = theta;
        v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / len);
        project_out_ones(&mut v);
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        estimate: prev.max(0.0).sqrt(),
        residual,
        last_iterate: v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn circulant_lambda(n: usize, c: usize) -> f64 {
        let half = (c / 2) as i64;
        let width = local_exchange_width(c) as f64;
        (1..n)
            .map(|k| {
                let s: f64 = (-half..=half)
                    .map(|m| (2.0 * std::f64::consts::PI * k as f64 * m as f64 / n as f64).cos())
                    .sum();
                (s / width).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn complete_matrix_shapes() {
        let m = complete_matrix(2);
        assert_eq!(m.get(0, 1), Some(0.5));
        assert_eq!(m.get(1, 1), Some(0.5));
        assert!(m.flags().bi_stochastic && m.flags().symmetric);
        let one = complete_matrix(1);
        assert_eq!(one.get(0, 0), Some(1.0));
        assert_eq!(mixing_constant(&one, &MixingOptions::default()).unwrap(), 0.0);
    }

    #[test]
    fn complete_matrix_has_zero_mixing_constant() {
        for n in [2, 7, 100] {
            let lam = mixing_constant(&complete_matrix(n), &MixingOptions::default()).unwrap();
            assert!(lam <= 1e-8, "n={n}: {lam}");
        }
    }

    #[test]
    fn identity_has_unit_mixing_constant() {
        let lam = mixing_constant(&identity_matrix(10), &MixingOptions::default()).unwrap();
        assert_abs_diff_eq!(lam, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_by_two_closed_form() {
        let p = 0.3;
        let m = ConnectivityMatrix::from_rows(2, vec![vec![(0, 1.0 - p), (1, p)], vec![(0, p), (1, 1.0 - p)]])
            .unwrap();
        for lam in [
            mixing_constant(&m, &MixingOptions::default()).unwrap(),
            mixing_constant_power(&m, &MixingOptions::default()).unwrap(),
        ] {
            assert_abs_diff_eq!(lam, (1.0f64 - 2.0 * p).abs(), epsilon = 1e-12);
        }
    }

    #[test]
    fn k4_is_the_only_cubic_graph_on_four_vertices() {
        let m = random_regular_matrix(4, 3, &mut rng(1)).unwrap();
        for i in 0..4 {
            let row: Vec<_> = m.row(i).collect();
            assert_eq!(row.len(), 3);
            assert!(row.iter().all(|&(j, w)| j != i && (w - 1.0 / 3.0).abs() < 1e-15));
        }
        let lam = mixing_constant(&m, &MixingOptions::default()).unwrap();
        assert_abs_diff_eq!(lam, 1.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn regular_graph_structure() {
        for (n, c, seed) in [(50, 3, 1), (200, 5, 2), (300, 20, 3), (21, 20, 4)] {
            let m = random_regular_matrix(n, c, &mut rng(seed)).unwrap();
            assert!(m.flags().symmetric && m.flags().bi_stochastic);
            for i in 0..n {
                let row: Vec<_> = m.row(i).collect();
                assert_eq!(row.len(), c, "degree of {i}");
                assert!(row.iter().all(|&(j, _)| j != i));
            }
        }
    }

    #[test]
    fn repair_pass_produces_simple_regular_graphs() {
        // Multigraph with a loop and a repeated edge; degrees need not be regular.
        let (n, c) = (10, 4);
        let mut r = rng(9);
        let mut edges = pairing_attempt(n, c, &mut r);
        edges[0] = (3, 3);
        edges[1] = (4, 5);
        edges[2] = (5, 4);
        let mut deg = vec![0usize; n];
        for &(u, v) in &edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        let fixed = repair_by_switching(n, c, edges, &mut r).unwrap();
        assert!(is_simple(&fixed));
        let mut after = vec![0usize; n];
        for &(u, v) in &fixed {
            after[u] += 1;
            after[v] += 1;
        }
        assert_eq!(deg, after);
    }

    #[test]
    fn regular_infeasible() {
        assert!(matches!(random_regular_matrix(5, 3, &mut rng(0)), Err(Error::Infeasible { .. })));
        assert!(random_regular_matrix(4, 4, &mut rng(0)).is_err());
        assert!(random_regular_matrix(10, 2, &mut rng(0)).is_err());
    }

    #[test]
    fn local_exchange_small_cases() {
        let m = local_exchange_matrix(5, 5).unwrap();
        assert_eq!(m, complete_matrix(5));
        let id = local_exchange_matrix(3, 1).unwrap();
        assert_eq!(id, identity_matrix(3));
        assert_abs_diff_eq!(mixing_constant(&id, &MixingOptions::default()).unwrap(), 1.0, epsilon = 1e-12);
        assert!(local_exchange_matrix(4, 5).is_err());
        // Even C uses the floor(C/2) window on each side.
        let even = local_exchange_matrix(12, 4).unwrap();
        assert_eq!(even.row(0).count(), 5);
        assert!(even.flags().symmetric && even.flags().bi_stochastic);
    }

    #[test]
    fn local_exchange_matches_circulant_spectrum() {
        for (n, c) in [(100, 5), (61, 3), (40, 10)] {
            let m = local_exchange_matrix(n, c).unwrap();
            let lam = mixing_constant(&m, &MixingOptions::default()).unwrap();
            assert_abs_diff_eq!(lam, circulant_lambda(n, c), epsilon = 1e-9);
        }
    }

    #[test]
    fn random_rows_full_width_is_uniform() {
        let m = random_rows_matrix(5, 5, &mut rng(3)).unwrap();
        assert_eq!(m, complete_matrix(5));
    }

    #[test]
    fn random_rows_moments() {
        // E(alpha_ij) = 1/n and E(alpha_ij^2) = 1/(C n), checked on one entry.
        let (n, c, draws) = (6usize, 2usize, 100_000usize);
        let mut r = rng(11);
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            let row = sample_row(n, c, &mut r);
            let a = if row.contains(&2) { 1.0 / c as f64 } else { 0.0 };
            s1 += a;
            s2 += a * a;
            s4 += a.powi(4);
        }
        let d = draws as f64;
        let (m1, m2) = (s1 / d, s2 / d);
        let se1 = ((m2 - m1 * m1) / d).sqrt();
        let se2 = ((s4 / d - m2 * m2) / d).sqrt();
        assert!((m1 - 1.0 / n as f64).abs() <= 3.0 * se1, "mean {m1}");
        assert!((m2 - 1.0 / (c * n) as f64).abs() <= 3.0 * se2, "second moment {m2}");
    }

    #[test]
    fn random_rows_are_not_bistochastic_in_general() {
        let m = random_rows_matrix(50, 3, &mut rng(5)).unwrap();
        assert!(m.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-12));
        assert!(!m.flags().bi_stochastic);
        assert!(m.row(0).count() == 3);
    }

    #[test]
    fn power_and_lanczos_agree_on_small_graphs() {
        for seed in 0..5 {
            let m = random_regular_matrix(30, 4, &mut rng(seed)).unwrap();
            let opts = MixingOptions {
                tol: 1e-13,
                max_iter: 200_000,
                seed,
            };
            let a = mixing_constant(&m, &opts).unwrap();
            let b = mixing_constant_power(&m, &opts).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-5);
        }
    }

    #[test]
    fn power_iteration_reports_non_convergence() {
        let m = random_regular_matrix(200, 3, &mut rng(2)).unwrap();
        let opts = MixingOptions {
            tol: 1e-15,
            max_iter: 5,
            seed: 0,
        };
        match mixing_constant_power(&m, &opts) {
            Err(Error::NonConvergence {
                iterations,
                last_iterate,
                ..
            }) => {
                assert_eq!(iterations, 5);
                assert_eq!(last_iterate.len(), 200);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn edge_list_round_trip() {
        let m = random_regular_matrix(40, 5, &mut rng(8)).unwrap();
        let mut buf = Vec::new();
        m.write_edge_list(&mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 40 * 5 / 2);
        let back = ConnectivityMatrix::read_edge_list(40, buf.as_slice(), true).unwrap();
        assert_eq!(back, m);
        assert!(ConnectivityMatrix::read_edge_list(3, "0 7\n".as_bytes(), true).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let s: ConnectivitySpec =
            serde_json::from_str(r#"{"kind": "fixed-regular", "C": 10, "graph_seed": 42}"#).unwrap();
        assert_eq!(s, ConnectivitySpec::FixedRegular { c: 10, graph_seed: 42 });
        let back: ConnectivitySpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(ConnectivitySpec::LocalExchange { c: 101 }.check_feasible(100).is_err());
        assert!(ConnectivitySpec::PerStepRandomRows { c: 101 }.check_feasible(100).is_err());
    }

    #[test]
    fn fixed_regular_resolution_is_deterministic() {
        let spec = ConnectivitySpec::FixedRegular { c: 5, graph_seed: 42 };
        let a = spec.resolve(100).unwrap();
        let b = spec.resolve(100).unwrap();
        assert_eq!(a.matrix().unwrap(), b.matrix().unwrap());
        let other = ConnectivitySpec::FixedRegular { c: 5, graph_seed: 43 }.resolve(100).unwrap();
        assert_ne!(a.matrix().unwrap(), other.matrix().unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fundamental_bound(seed in any::<u64>(), c in 3usize..8) {
            let n = 40;
            let m = random_regular_matrix(n, if (n * c) % 2 == 0 { c } else { c + 1 }, &mut rng(seed)).unwrap();
            let lam = mixing_constant(&m, &MixingOptions::default()).unwrap();
            let mut r = rng(seed ^ 0xabc);
            let mut out = vec![0.0; n];
            for _ in 0..40 {
                let mut w: Vec<f64> = (0..n).map(|_| r.random::<f64>().powi(3)).collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= s);
                m.apply(&w, &mut out);
                let lhs = dot(&out, &out);
                let rhs = (1.0 - lam * lam) / n as f64 + lam * lam * dot(&w, &w);
                prop_assert!(lhs <= rhs + 1e-9);
            }
        }

        #[test]
        fn permutation_invariance(seed in any::<u64>()) {
            let m = random_regular_matrix(30, 4, &mut rng(seed)).unwrap();
            let mut perm: Vec<usize> = (0..30).collect();
            perm.shuffle(&mut rng(seed.wrapping_add(1)));
            let p = m.permuted(&perm).unwrap();
            let a = mixing_constant(&m, &MixingOptions::default()).unwrap();
            let b = mixing_constant(&p, &MixingOptions::default()).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }

        #[test]
        fn generators_are_row_stochastic(seed in any::<u64>(), n in 8usize..60) {
            let mut r = rng(seed);
            let c = 3 + (seed % 4) as usize;
            let mut mats = vec![
                random_rows_matrix(n, c.min(n), &mut r).unwrap(),
                local_exchange_matrix(n, 5).unwrap(),
            ];
            if (n * c).is_multiple_of(2) && c < n {
                mats.push(random_regular_matrix(n, c, &mut r).unwrap());
            }
            for m in mats {
                for s in m.row_sums() {
                    prop_assert!((s - 1.0).abs() <= 1e-12);
                }
            }
        }
    }
}
