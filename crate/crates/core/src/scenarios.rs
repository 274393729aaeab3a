//! Seeded data-generating processes for the six Monte Carlo scenarios.
//!
//! Every replicate draws from its own ChaCha stream seeded with
//! [`rep_seed`]`(master_seed, rep)`, so output depends only on those two
//! numbers and never on scheduling.
//!
//! Bottom series are ARIMA paths. Stationary ARMA parts run for
//! [`BURN_IN`] discarded steps from zero; integrated series are the
//! cumulative sum of the kept ARMA path.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::Hierarchy;
use crate::metrics::EvalWindowSpec;
use crate::mintit::aggregate_upward;

pub const BURN_IN: usize = 100;
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("scenario {scenario} does not support T = {t} (allowed: {allowed:?})")]
    UnsupportedLength {
        scenario: Scenario,
        t: usize,
        allowed: Vec<usize>,
    },
    #[error("replicate count must be at least 1")]
    NoReplicates,
    #[error("could not draw admissible ARMA coefficients after {0} attempts")]
    CoefficientDraw(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    Correlated,
    Smoothing,
    Seasonal,
    DiffLen,
    Degenerate,
    Large,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Correlated,
        Scenario::Smoothing,
        Scenario::Seasonal,
        Scenario::DiffLen,
        Scenario::Degenerate,
        Scenario::Large,
    ];

    pub fn flag(self) -> &'static str {
        match self {
            Scenario::Correlated => "corr",
            Scenario::Smoothing => "smooth",
            Scenario::Seasonal => "seasonal",
            Scenario::DiffLen => "difflen",
            Scenario::Degenerate => "degen",
            Scenario::Large => "large",
        }
    }

    /// `(T, holdout)` pairs the scenario is defined for.
    pub fn lengths(self) -> &'static [(usize, usize)] {
        match self {
            Scenario::Large => &[(30, 4), (60, 6), (90, 8)],
            Scenario::DiffLen => &[(120, 4)],
            _ => &[(15, 4), (30, 4), (60, 8)],
        }
    }

    pub fn default_reps(self) -> usize {
        match self {
            Scenario::Large => 500,
            _ => 5000,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.flag().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Total series length including the holdout.
    pub t: usize,
    pub holdout: usize,
    pub reps: usize,
    pub master_seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, t: usize, reps: usize, master_seed: u64) -> Result<Self, ScenarioError> {
        let holdout = scenario
            .lengths()
            .iter()
            .find(|&&(len, _)| len == t)
            .map(|&(_, h)| h)
            .ok_or_else(|| ScenarioError::UnsupportedLength {
                scenario,
                t,
                allowed: scenario.lengths().iter().map(|&(l, _)| l).collect(),
            })?;
        if reps == 0 {
            return Err(ScenarioError::NoReplicates);
        }
        Ok(Self {
            scenario,
            t,
            holdout,
            reps,
            master_seed,
        })
    }

    /// Evaluation windows `{1}, {1..h/2}, {1..h}`.
    pub fn windows(&self) -> EvalWindowSpec {
        EvalWindowSpec::nested(&[1, self.holdout / 2, self.holdout]).expect("holdout is at least 4")
    }
}

/// A generated hierarchy: one column per node (canonical order), one row
/// per time step. Series `i` is observed from row `start[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel {
    pub hierarchy: Hierarchy,
    pub values: DMatrix<f64>,
    pub start: Vec<usize>,
}

impl SeriesPanel {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn observed(&self, series: usize) -> Vec<f64> {
        (self.start[series]..self.len()).map(|r| self.values[(r, series)]).collect()
    }

    /// Number of rows at which every series in `idx` is observed.
    pub fn complete_rows(&self, idx: &[usize]) -> usize {
        let first = idx.iter().map(|&i| self.start[i]).max().unwrap_or(0);
        self.len() - first
    }
}

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `rep`: `splitmix(master ^ splitmix(rep))`.
pub fn rep_seed(master_seed: u64, rep: u64) -> u64 {
    splitmix(master_seed ^ splitmix(rep))
}

pub fn rep_rng(master_seed: u64, rep: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(rep_seed(master_seed, rep))
}

/// An ARIMA(p, d, q) specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaDraw {
    pub d: usize,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Spectral radius of the companion matrix of `x_t = Σ c_i x_{t-i}`.
fn companion_radius(coef: &[f64]) -> f64 {
    match coef.len() {
        0 => 0.0,
        1 => coef[0].abs(),
        p => {
            let mut c = DMatrix::zeros(p, p);
            for (j, &v) in coef.iter().enumerate() {
                c[(0, j)] = v;
            }
            for i in 1..p {
                c[(i, i - 1)] = 1.0;
            }
            c.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
        }
    }
}

impl ArimaDraw {
    pub fn p(&self) -> usize {
        self.phi.len()
    }

    pub fn q(&self) -> usize {
        self.theta.len()
    }

    pub fn is_stationary(&self) -> bool {
        companion_radius(&self.phi) < 1.0
    }

    /// MA polynomial `1 + θ₁B + θ₂B²` has its roots outside the unit circle.
    pub fn is_invertible(&self) -> bool {
        let neg: Vec<f64> = self.theta.iter().map(|t| -t).collect();
        companion_radius(&neg) < 1.0
    }

    /// Coefficients lie in their sampling ranges.
    pub fn in_ranges(&self) -> bool {
        let base = |v: f64| (0.5..=0.7).contains(&v);
        let ar = match self.phi.as_slice() {
            [] => true,
            [a] => base(*a),
            [a, b] => base(*b) && (b - 0.9..=0.9 - b).contains(a),
            _ => false,
        };
        let ma = match self.theta.as_slice() {
            [] => true,
            [a] => base(*a),
            [a, b] => base(*b) && (-(0.9 + b) / 3.2..=(0.9 + b) / 3.2).contains(a),
            _ => false,
        };
        ar && ma && self.d <= 1
    }

    /// Draws orders uniformly from `0..=max_p`, `0..=max_d`, `0..=max_q`
    /// and coefficients from their ranges, redrawing until stationary and
    /// invertible.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, max_p: usize, max_d: usize, max_q: usize) -> Result<Self, ScenarioError> {
        let p = rng.random_range(0..=max_p);
        let d = rng.random_range(0..=max_d);
        let q = rng.random_range(0..=max_q);
        for _ in 0..MAX_REDRAWS {
            let phi = match p {
                0 => vec![],
                1 => vec![rng.random_range(0.5..=0.7)],
                _ => {
                    let b: f64 = rng.random_range(0.5..=0.7);
                    vec![rng.random_range(b - 0.9..=0.9 - b), b]
                }
            };
            let theta = match q {
                0 => vec![],
                1 => vec![rng.random_range(0.5..=0.7)],
                _ => {
                    let b: f64 = rng.random_range(0.5..=0.7);
                    let r = (0.9 + b) / 3.2;
                    vec![rng.random_range(-r..=r), b]
                }
            };
            let draw = ArimaDraw { d, phi, theta };
            if draw.is_stationary() && draw.is_invertible() {
                return Ok(draw);
            }
        }
        Err(ScenarioError::CoefficientDraw(MAX_REDRAWS))
    }

    /// Runs the process over `innovations`, dropping the first `burn_in`
    /// steps; the result has `innovations.len() - burn_in` values.
    pub fn simulate(&self, innovations: &[f64], burn_in: usize) -> Vec<f64> {
        let n = innovations.len();
        let mut y = vec![0.0; n];
        for t in 0..n {
            let mut v = innovations[t];
            for (i, &phi) in self.phi.iter().enumerate() {
                if t > i {
                    v += phi * y[t - 1 - i];
                }
            }
            for (j, &theta) in self.theta.iter().enumerate() {
                if t > j {
                    v += theta * innovations[t - 1 - j];
                }
            }
            y[t] = v;
        }
        let mut kept = y.split_off(burn_in.min(n));
        if self.d == 1 {
            let mut acc = 0.0;
            for v in &mut kept {
                acc += *v;
                *v = acc;
            }
        }
        kept
    }
}

/// Contemporaneous error covariance of the correlated scenario (8 bottoms).
#[rustfmt::skip]
pub fn correlated_sigma() -> SMatrix<f64, 8, 8> {
    SMatrix::<f64, 8, 8>::from_row_slice(&[
        5., 3., 2., 1., 1., 1., 1., 1.,
        3., 4., 2., 1., 1., 1., 1., 1.,
        2., 2., 5., 3., 2., 1., 1., 1.,
        1., 1., 3., 4., 3., 2., 1., 1.,
        1., 1., 2., 3., 5., 3., 2., 1.,
        1., 1., 1., 2., 3., 4., 2., 1.,
        1., 1., 1., 1., 2., 2., 5., 3.,
        1., 1., 1., 1., 1., 1., 3., 4.,
    ])
}

/// Added-error covariance of the smoothing scenario; every row sums to zero.
#[rustfmt::skip]
pub fn smoothing_covariance() -> SMatrix<f64, 8, 8> {
    SMatrix::<f64, 8, 8>::from_row_slice(&[
        11.75, -8.25, 8.75, -11.25, 11.25, -8.75, 8.25, -11.75,
        -8.25, 11.75, -11.25, 8.75, -8.75, 11.25, -11.75, 8.25,
        8.75, -11.25, 11.75, -8.25, 8.25, -11.75, 11.25, -8.75,
        -11.25, 8.75, -8.25, 11.75, -11.75, 8.25, -8.75, 11.25,
        11.25, -8.75, 8.25, -11.75, 11.75, -8.25, 8.75, -11.25,
        -8.75, 11.25, -11.75, 8.25, -8.25, 11.75, -11.25, 8.75,
        8.25, -11.75, 11.25, -8.75, 8.75, -11.25, 11.75, -8.25,
        -11.75, 8.25, -8.75, 11.25, -11.25, 8.75, -8.25, 11.75,
    ])
}

/// Variance of each cancelling component in the smoothing scenario, keyed
/// by the depth at which it cancels. Together they reproduce
/// [`smoothing_covariance`].
pub const SMOOTHING_COMPONENTS: [(usize, f64); 3] = [(2, 10.0), (1, 1.5), (0, 0.25)];

/// Cancelling components of the large scenario: variances 0.4, 1/40 and
/// 1/640 vanishing at depths 3, 2 and 1.
pub const LARGE_COMPONENTS: [(usize, f64); 3] = [(3, 0.4), (2, 1.0 / 40.0), (1, 1.0 / 640.0)];

/// Per-bottom signs of a component that cancels at `depth`.
///
/// A bottom series takes `(-1)^k`, where `k` is the position of its
/// ancestor at `depth + 1` among that ancestor's siblings. With an even
/// number of siblings the component sums to zero at every node of `depth`
/// and above, and to `±(leaves below)` times the draw below it.
pub fn cancel_signs(h: &Hierarchy, depth: usize) -> Vec<f64> {
    h.bottom_indices()
        .iter()
        .map(|&b| {
            let mut node = b;
            while h.depth(node) > depth + 1 {
                node = h.parent(node).expect("depth > 0 has a parent");
            }
            let parent = h.parent(node).expect("depth + 1 > 0 has a parent");
            let k = h.children(parent).iter().position(|&c| c == node).expect("child of its parent");
            if k % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

/// Covariance implied by a set of cancelling components.
pub fn component_covariance(h: &Hierarchy, components: &[(usize, f64)]) -> DMatrix<f64> {
    let n = h.n_bottom();
    let mut c = DMatrix::zeros(n, n);
    for &(depth, var) in components {
        let s = nalgebra::DVector::from_vec(cancel_signs(h, depth));
        c += &s * s.transpose() * var;
    }
    c
}

/// Draws `steps` rows of cancelling noise for the bottom series.
fn cancelling_noise<R: Rng + ?Sized>(rng: &mut R, h: &Hierarchy, components: &[(usize, f64)], steps: usize) -> DMatrix<f64> {
    let signs: Vec<(Vec<f64>, f64)> = components
        .iter()
        .map(|&(depth, var)| (cancel_signs(h, depth), var.sqrt()))
        .collect();
    let mut out = DMatrix::zeros(steps, h.n_bottom());
    for t in 0..steps {
        for (s, sd) in &signs {
            let z: f64 = StandardNormal.sample(rng);
            for (j, sign) in s.iter().enumerate() {
                out[(t, j)] += sign * sd * z;
            }
        }
    }
    out
}

fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `n` draws of the correlated-scenario innovations (rows × 8).
pub fn correlated_innovations<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let l = correlated_sigma().cholesky().expect("sigma is positive definite").l();
    let mut out = DMatrix::zeros(n, 8);
    for t in 0..n {
        let z = SMatrix::<f64, 8, 1>::from_iterator(standard_normals(rng, 8));
        let e = l * z;
        for j in 0..8 {
            out[(t, j)] = e[j];
        }
    }
    out
}

/// Places bottom values (rows × n_bottom) into a full panel and sums upward.
pub fn aggregate_panel(h: &Hierarchy, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut full = DMatrix::zeros(h.len(), bottom.nrows());
    for (j, &b) in h.bottom_indices().iter().enumerate() {
        for t in 0..bottom.nrows() {
            full[(b, t)] = bottom[(t, j)];
        }
    }
    aggregate_upward(&mut full, h);
    full.transpose()
}

fn complete_panel(h: Hierarchy, bottom: &DMatrix<f64>) -> SeriesPanel {
    let values = aggregate_panel(&h, bottom);
    let start = vec![0; h.len()];
    SeriesPanel { hierarchy: h, values, start }
}

/// The three-level binary tree with eight bottom series.
pub fn three_level() -> Hierarchy {
    Hierarchy::balanced(&[2, 2, 2]).expect("valid widths")
}

/// The 511-node tree with level widths 6, 4, 4, 4.
pub fn large_hierarchy() -> Hierarchy {
    Hierarchy::balanced(&[6, 4, 4, 4]).expect("valid widths")
}

fn arima_bottoms<R: Rng + ?Sized>(rng: &mut R, n: usize, t: usize, innovations: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>, ScenarioError> {
    let mut out = DMatrix::zeros(t, n);
    for j in 0..n {
        let draw = ArimaDraw::sample(rng, 2, 1, 2)?;
        let e = match innovations {
            Some(m) => m.column(j).iter().copied().collect(),
            None => standard_normals(rng, BURN_IN + t),
        };
        for (k, v) in draw.simulate(&e, BURN_IN).into_iter().enumerate() {
            out[(k, j)] = v;
        }
    }
    Ok(out)
}

pub fn gen_correlated(cfg: &ScenarioConfig, rep: u64) -> Result<SeriesPanel, ScenarioError> {
    let mut rng = rep_rng(cfg.master_seed, rep);
    let h = three_level();
    let innovations = correlated_innovations(&mut rng, BURN_IN + cfg.t);
    let bottom = arima_bottoms(&mut rng, 8, cfg.t, Some(&innovations))?;
    Ok(complete_panel(h, &bottom))
}

fn smoothing_bottoms<R: Rng + ?Sized>(rng: &mut R, h: &Hierarchy, components: &[(usize, f64)], t: usize) -> Result<DMatrix<f64>, ScenarioError> {
    let base = arima_bottoms(rng, h.n_bottom(), t, None)?;
    Ok(base + cancelling_noise(rng, h, components, t))
}

pub fn gen_smoothing(cfg: &ScenarioConfig, rep: u64) -> Result<SeriesPanel, ScenarioError> {
    let mut rng = rep_rng(cfg.master_seed, rep);
    let h = three_level();
    let bottom = smoothing_bottoms(&mut rng, &h, &SMOOTHING_COMPONENTS, cfg.t)?;
    Ok(complete_panel(h, &bottom))
}

/// `γ_t = -(γ_{t-1} + γ_{t-2} + γ_{t-3}) + ω_t`, started from
/// `initial = [γ_{-2}, γ_{-1}, γ_0]`.
pub fn seasonal_component(initial: [f64; 3], omega: &[f64]) -> Vec<f64> {
    let mut g = initial.to_vec();
    for &w in omega {
        let n = g.len();
        g.push(-(g[n - 1] + g[n - 2] + g[n - 3]) + w);
    }
    g.split_off(3)
}

pub const SEASONAL_LEVEL_VAR: f64 = 2.0;
pub const SEASONAL_SLOPE_VAR: f64 = 0.007;
pub const SEASONAL_SEASON_VAR: f64 = 7.0;

pub fn gen_seasonal(cfg: &ScenarioConfig, rep: u64) -> Result<SeriesPanel, ScenarioError> {
    let mut rng = rep_rng(cfg.master_seed, rep);
    let h = three_level();
    let t = cfg.t;
    let mut bottom = DMatrix::zeros(t, 8);
    let (sd_level, sd_slope, sd_season) = (SEASONAL_LEVEL_VAR.sqrt(), SEASONAL_SLOPE_VAR.sqrt(), SEASONAL_SEASON_VAR.sqrt());
    for j in 0..8 {
        let init = standard_normals(&mut rng, 5);
        let (mut level, mut slope) = (init[0], init[1]);
        let omega: Vec<f64> = standard_normals(&mut rng, t).into_iter().map(|z| sd_season * z).collect();
        let season = seasonal_component([init[2], init[3], init[4]], &omega);
        let draw = ArimaDraw::sample(&mut rng, 1, 0, 1)?;
        let eta = draw.simulate(&standard_normals(&mut rng, BURN_IN + t), BURN_IN);
        for k in 0..t {
            let z = standard_normals(&mut rng, 2);
            slope += sd_slope * z[0];
            level += slope + sd_level * z[1];
            bottom[(k, j)] = level + season[k] + eta[k];
        }
    }
    Ok(complete_panel(h, &bottom))
}

/// Observed lengths in the differing-lengths scenario (total length 120).
pub const DIFFLEN_LENGTHS: [(&str, usize); 15] = [
    ("T", 120),
    ("A", 120),
    ("B", 90),
    ("AA", 120),
    ("AB", 90),
    ("BA", 90),
    ("BB", 90),
    ("AAA", 60),
    ("AAB", 60),
    ("ABA", 60),
    ("ABB", 60),
    ("BAA", 45),
    ("BAB", 45),
    ("BBA", 15),
    ("BBB", 15),
];

pub fn gen_difflen(cfg: &ScenarioConfig, rep: u64) -> Result<SeriesPanel, ScenarioError> {
    let mut rng = rep_rng(cfg.master_seed, rep);
    let h = three_level();
    let bottom = smoothing_bottoms(&mut rng, &h, &SMOOTHING_COMPONENTS, cfg.t)?;
    let mut panel = complete_panel(h, &bottom);
    for (label, len) in DIFFLEN_LENGTHS {
        let i = panel.hierarchy.index_of(label).expect("label of the three-level tree");
        panel.start[i] = cfg.t - len.min(cfg.t);
        for r in 0..panel.start[i] {
            panel.values[(r, i)] = 0.0;
        }
    }
    Ok(panel)
}

pub fn gen_degenerate(cfg: &ScenarioConfig, rep: u64) -> Result<SeriesPanel, ScenarioError> {
    let full = gen_correlated(cfg, rep)?;
    let h = full.hierarchy.without(&["BBA", "BBB"]).expect("labels exist");
    let cols: Vec<usize> = h
        .labels()
        .iter()
        .map(|l| full.hierarchy.index_of(l).expect("kept label"))
        .collect();
    let values = DMatrix::from_fn(full.len(), h.len(), |r, c| full.values[(r, cols[c])]);
    let start = vec![0; h.len()];
    Ok(SeriesPanel { hierarchy: h, values, start })
}

pub fn gen_large(cfg: &ScenarioConfig, rep: u64) -> Result<SeriesPanel, ScenarioError> {
    let mut rng = rep_rng(cfg.master_seed, rep);
    let h = large_hierarchy();
    let bottom = smoothing_bottoms(&mut rng, &h, &LARGE_COMPONENTS, cfg.t)?;
    Ok(complete_panel(h, &bottom))
}

pub fn generate(cfg: &ScenarioConfig, rep: u64) -> Result<SeriesPanel, ScenarioError> {
    match cfg.scenario {
        Scenario::Correlated => gen_correlated(cfg, rep),
        Scenario::Smoothing => gen_smoothing(cfg, rep),
        Scenario::Seasonal => gen_seasonal(cfg, rep),
        Scenario::DiffLen => gen_difflen(cfg, rep),
        Scenario::Degenerate => gen_degenerate(cfg, rep),
        Scenario::Large => gen_large(cfg, rep),
    }
}

/// Empirical variance added at each node by the cancelling components of
/// `components`, from `draws` samples.
pub fn empirical_added_variance<R: Rng + ?Sized>(rng: &mut R, h: &Hierarchy, components: &[(usize, f64)], draws: usize) -> Vec<f64> {
    let m = h.len();
    let (mut sum, mut sq) = (vec![0.0; m], vec![0.0; m]);
    for _ in 0..draws {
        let noise = cancelling_noise(rng, h, components, 1);
        let full = aggregate_panel(h, &noise);
        for i in 0..m {
            let v = full[(0, i)];
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let n = draws as f64;
    sum.iter().zip(&sq).map(|(s, q)| q / n - (s / n).powi(2)).collect()
}

/// Season sums `γ_t + γ_{t-1} + γ_{t-2} + γ_{t-3}` equal the shocks `ω_t`.
pub fn season_sums(season: &[f64]) -> Vec<f64> {
    season.windows(4).map(|w| w.iter().sum()).collect()
}
