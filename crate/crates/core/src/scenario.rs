//! Factored seasonal ARMA models and simulated price/inflow scenario sets.
//!
//! A model is written with backshift factors,
//! `prod_i A_i(B) x_t = prod_k M_k(B) w_t`, each factor being
//! `1 + sum c_l B^l`. Simulation expands both products and runs
//! `x_t = -sum_{k>=1} A_k x_{t-k} + sum_{k>=0} M_k w_{t-k}` after a constant,
//! noise-free history of [`BURN_IN`] hours.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_contract, Error, Result};
use crate::model::{ReservoirSystem, SystemKind, TunnelDirection};

/// Hours of constant history preceding `t = 1`; three weekly seasons.
pub const BURN_IN: usize = 3 * 168;

/// Capacity of the upper cascade reservoir; network inflows are scaled
/// relative to it.
pub const REFERENCE_CAPACITY: f64 = 1130.0;

/// `1 + sum coeff * B^lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagPolynomial(pub Vec<(usize, f64)>);

impl LagPolynomial {
    /// `1 - coeff * B^lag`.
    pub fn one_minus(lag: usize, coeff: f64) -> Self {
        LagPolynomial(vec![(lag, -coeff)])
    }
}

/// Convolution of the factors, indexed by lag; entry 0 is 1.
pub fn expand_polynomial(factors: &[LagPolynomial]) -> Vec<f64> {
    let mut acc = vec![1.0];
    for f in factors {
        let deg = f.0.iter().map(|(l, _)| *l).max().unwrap_or(0);
        let mut dense = vec![0.0; deg + 1];
        dense[0] = 1.0;
        for &(lag, c) in &f.0 {
            dense[lag] += c;
        }
        let mut out = vec![0.0; acc.len() + deg];
        for (i, a) in acc.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (k, d) in dense.iter().enumerate() {
                out[i + k] += a * d;
            }
        }
        acc = out;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaSpec {
    pub ar_factors: Vec<LagPolynomial>,
    pub ma_factors: Vec<LagPolynomial>,
    pub noise_std: f64,
    pub initial_level: f64,
}

/// Nonzero lags of the expanded polynomials, excluding lag 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedArma {
    pub ar: Vec<(usize, f64)>,
    pub ma: Vec<(usize, f64)>,
    pub max_lag: usize,
}

impl ExpandedArma {
    /// Value at the end of `x` given history `x` (without the new point)
    /// and innovations `w` including the new one.
    fn next(&self, x: &[f64], w: &[f64]) -> f64 {
        let t = x.len();
        let mut v = w[t];
        for &(k, a) in &self.ar {
            v -= a * x[t - k];
        }
        for &(k, m) in &self.ma {
            v += m * w[t - k];
        }
        v
    }

    /// Innovation that reproduces `x_t` given the past.
    fn innovation(&self, x: &[f64], w: &[f64], t: usize) -> f64 {
        let mut v = x[t];
        for &(k, a) in &self.ar {
            v += a * x[t - k];
        }
        for &(k, m) in &self.ma {
            v -= m * w[t - k];
        }
        v
    }
}

fn sparse_tail(dense: &[f64]) -> Vec<(usize, f64)> {
    dense
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, v)| **v != 0.0)
        .map(|(k, v)| (k, *v))
        .collect()
}

impl ArmaSpec {
    pub fn validate(&self) -> Result<()> {
        for f in self.ar_factors.iter().chain(&self.ma_factors) {
            for &(lag, c) in &f.0 {
                if lag == 0 {
                    return Err(Error::Config("ARMA factor with a lag-0 term".into()));
                }
                if !c.is_finite() {
                    return Err(Error::Config("non-finite ARMA coefficient".into()));
                }
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("ARMA noise_std must be finite and >= 0".into()));
        }
        if !self.initial_level.is_finite() {
            return Err(Error::Config("ARMA initial_level must be finite".into()));
        }
        Ok(())
    }

    pub fn expanded(&self) -> ExpandedArma {
        let ar = expand_polynomial(&self.ar_factors);
        let ma = expand_polynomial(&self.ma_factors);
        ExpandedArma {
            max_lag: (ar.len() - 1).max(ma.len() - 1),
            ar: sparse_tail(&ar),
            ma: sparse_tail(&ma),
        }
    }

    /// The same model for the series multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        ArmaSpec {
            noise_std: self.noise_std * factor,
            initial_level: self.initial_level * factor,
            ..self.clone()
        }
    }

    /// Price model with `theta_1 = 0.6874`, differencing at lags 1, 24, 168 and
    /// seasonal MA terms at the same lags.
    pub fn shipped_price() -> Self {
        ArmaSpec {
            ar_factors: vec![
                LagPolynomial::one_minus(1, 0.6874),
                LagPolynomial::one_minus(1, 1.0),
                LagPolynomial::one_minus(24, 1.0),
                LagPolynomial::one_minus(168, 1.0),
            ],
            ma_factors: vec![
                LagPolynomial::one_minus(1, 0.9234),
                LagPolynomial::one_minus(24, 0.8502),
                LagPolynomial::one_minus(168, 0.9665),
            ],
            noise_std: 0.2369,
            initial_level: 20.0,
        }
    }

    fn shipped_inflow(psi: f64, phi1: f64, phi2: f64, phi41: f64, std: f64) -> Self {
        ArmaSpec {
            ar_factors: vec![LagPolynomial::one_minus(1, psi), LagPolynomial::one_minus(1, 1.0)],
            ma_factors: vec![
                LagPolynomial(vec![(1, -phi1), (2, -phi2)]),
                LagPolynomial::one_minus(41, phi41),
            ],
            noise_std: std,
            initial_level: 50.0,
        }
    }

    pub fn shipped_upper_inflow() -> Self {
        Self::shipped_inflow(0.9899, 1.3156, -0.3504, 0.8424, 0.6549)
    }

    pub fn shipped_lower_inflow() -> Self {
        Self::shipped_inflow(0.9775, 1.4442, -0.5509, 0.8304, 0.1646)
    }
}

/// Expected next value with the next innovation set to zero.
///
/// `history` and `recent_innovations` end at the current hour; missing older
/// entries are taken as `initial_level` and zero respectively.
pub fn forecast_one_step(spec: &ArmaSpec, history: &[f64], recent_innovations: &[f64]) -> f64 {
    let e = spec.expanded();
    let pad = e.max_lag;
    let mut x = vec![spec.initial_level; pad];
    x.extend_from_slice(history);
    let mut w = vec![0.0; pad + history.len() - recent_innovations.len().min(history.len())];
    w.extend_from_slice(&recent_innovations[recent_innovations.len().saturating_sub(history.len())..]);
    w.push(0.0);
    e.next(&x, &w)
}

/// Innovations that reproduce a simulated `path` (hours `1..=T`) from the
/// constant pre-sample history.
pub fn reconstruct_innovations(spec: &ArmaSpec, path: &[f64]) -> Vec<f64> {
    let e = spec.expanded();
    let pad = e.max_lag.max(BURN_IN);
    let mut x = vec![spec.initial_level; pad];
    x.extend_from_slice(path);
    let mut w = vec![0.0; pad + path.len()];
    for t in pad..x.len() {
        w[t] = e.innovation(&x, &w, t);
    }
    w.split_off(pad)
}

/// One-step forecast beyond the end of a simulated path.
pub fn terminal_forecast(spec: &ArmaSpec, path: &[f64]) -> f64 {
    let w = reconstruct_innovations(spec, path);
    let pad = spec.expanded().max_lag.max(BURN_IN);
    let mut hist = vec![spec.initial_level; pad];
    hist.extend_from_slice(path);
    let mut innov = vec![0.0; pad];
    innov.extend_from_slice(&w);
    forecast_one_step(spec, &hist, &innov)
}

/// Innovation scales and the correlation of the inflow innovations.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub price_std: f64,
    pub inflow_stds: Vec<f64>,
    pub inflow_corr: Vec<Vec<f64>>,
    /// `factor * factor^T = inflow_corr`.
    factor: Vec<Vec<f64>>,
}

impl NoiseModel {
    pub fn new(price_std: f64, inflow_stds: Vec<f64>, inflow_corr: Vec<Vec<f64>>) -> Result<Self> {
        let n = inflow_stds.len();
        if !(price_std >= 0.0 && price_std.is_finite()) || inflow_stds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("noise standard deviations must be finite and >= 0".into()));
        }
        if inflow_corr.len() != n || inflow_corr.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("inflow correlation must be {n}x{n}")));
        }
        for i in 0..n {
            if (inflow_corr[i][i] - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("inflow correlation diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                if (inflow_corr[i][j] - inflow_corr[j][i]).abs() > 1e-12 {
                    return Err(Error::Config("inflow correlation is not symmetric".into()));
                }
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| inflow_corr[i][j]);
        let eig = SymmetricEigen::new(m);
        if eig.eigenvalues.iter().any(|l| *l < -1e-10) {
            return Err(Error::Config("inflow correlation is not positive semidefinite".into()));
        }
        let factor = (0..n)
            .map(|i| {
                (0..n)
                    .map(|k| eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt())
                    .collect()
            })
            .collect();
        Ok(Self {
            price_std,
            inflow_stds,
            inflow_corr,
            factor,
        })
    }

    /// Equal pairwise correlation `rho` between all inflow innovations.
    pub fn uniform(price_std: f64, inflow_stds: Vec<f64>, rho: f64) -> Result<Self> {
        let n = inflow_stds.len();
        let corr = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { rho }).collect())
            .collect();
        Self::new(price_std, inflow_stds, corr)
    }
}

/// Everything needed to simulate scenarios for one system.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioModel {
    pub price: ArmaSpec,
    pub inflows: Vec<ArmaSpec>,
    pub noise: NoiseModel,
}

/// Correlation of the two shipped inflow innovations.
pub const SHIPPED_INFLOW_CORRELATION: f64 = 0.0417;

impl ScenarioModel {
    /// Shipped ARMA models for a system.
    ///
    /// A two-reservoir cascade gets the upper and lower inflow models as
    /// estimated. Otherwise reservoirs without an incoming release use the
    /// upper model, the rest the lower one, each scaled by
    /// `level_max / 1130`.
    pub fn shipped_for(system: &ReservoirSystem) -> Result<Self> {
        let n = system.n_reservoirs();
        let upper = ArmaSpec::shipped_upper_inflow();
        let lower = ArmaSpec::shipped_lower_inflow();
        let inflows: Vec<ArmaSpec> = match system.kind() {
            SystemKind::Cascade if n == 2 => vec![upper, lower],
            _ => {
                let fed: Vec<bool> = (0..n)
                    .map(|j| {
                        let id = system.reservoirs()[j].id;
                        match system.kind() {
                            SystemKind::Cascade => system.balance_matrix()[j]
                                .iter()
                                .enumerate()
                                .any(|(k, v)| k != j && *v > 0.0),
                            SystemKind::Network => system
                                .tunnels()
                                .iter()
                                .any(|t| t.to_reservoir == id && t.direction == TunnelDirection::Release),
                        }
                    })
                    .collect();
                system
                    .reservoirs()
                    .iter()
                    .zip(fed)
                    .map(|(r, fed)| {
                        let base = if fed { &lower } else { &upper };
                        base.scaled(r.level_max / REFERENCE_CAPACITY)
                    })
                    .collect()
            }
        };
        Self::from_specs(ArmaSpec::shipped_price(), inflows, SHIPPED_INFLOW_CORRELATION)
    }

    /// Noise scales taken from the specs, equal pairwise inflow correlation.
    pub fn from_specs(price: ArmaSpec, inflows: Vec<ArmaSpec>, rho: f64) -> Result<Self> {
        let noise = NoiseModel::uniform(price.noise_std, inflows.iter().map(|s| s.noise_std).collect(), rho)?;
        Ok(Self { price, inflows, noise })
    }

    pub fn n_reservoirs(&self) -> usize {
        self.inflows.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioRole {
    Training,
    Test,
}

impl ScenarioRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioRole::Training => "training",
            ScenarioRole::Test => "test",
        }
    }
}

/// `n_samples` price and inflow paths over hours `1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub horizon: usize,
    pub n_samples: usize,
    pub n_reservoirs: usize,
    /// Row-major `n_samples x horizon`, $/MWh.
    pub prices: Vec<f64>,
    /// Row-major `n_samples x horizon x n_reservoirs`, 10^3 m^3/h.
    pub inflows: Vec<f64>,
    pub seed: u64,
    pub role: ScenarioRole,
    /// One-step price forecast beyond the horizon, per sample.
    pub terminal_prices: Option<Vec<f64>>,
}

/// Borrowed view of one sample.
#[derive(Debug, Clone, Copy)]
pub struct SamplePath<'a> {
    pub prices: &'a [f64],
    /// Row-major `horizon x n_reservoirs`.
    pub inflows: &'a [f64],
    pub terminal_price: f64,
}

impl SamplePath<'_> {
    pub fn horizon(&self) -> usize {
        self.prices.len()
    }

    /// Inflow vector of hour `t` (1-based).
    pub fn inflow(&self, t: usize) -> &[f64] {
        let n = self.inflows.len() / self.prices.len();
        &self.inflows[(t - 1) * n..t * n]
    }
}

impl ScenarioSet {
    pub fn path(&self, s: usize) -> Result<SamplePath<'_>> {
        ensure_contract!(s < self.n_samples, "sample {s} out of range ({})", self.n_samples);
        let terminal = self
            .terminal_prices
            .as_ref()
            .ok_or_else(|| Error::Contract("scenario set has no terminal price forecasts".into()))?;
        let t = self.horizon;
        let j = self.n_reservoirs;
        Ok(SamplePath {
            prices: &self.prices[s * t..(s + 1) * t],
            inflows: &self.inflows[s * t * j..(s + 1) * t * j],
            terminal_price: terminal[s],
        })
    }

    pub fn attach_terminal_forecasts(&mut self, price_spec: &ArmaSpec) {
        let t = self.horizon;
        self.terminal_prices = Some(
            (0..self.n_samples)
                .map(|s| terminal_forecast(price_spec, &self.prices[s * t..(s + 1) * t]))
                .collect(),
        );
    }

    /// A set holding only sample `s`.
    pub fn single(&self, s: usize) -> Result<ScenarioSet> {
        let p = self.path(s)?;
        Ok(ScenarioSet {
            horizon: self.horizon,
            n_samples: 1,
            n_reservoirs: self.n_reservoirs,
            prices: p.prices.to_vec(),
            inflows: p.inflows.to_vec(),
            seed: self.seed,
            role: self.role,
            terminal_prices: Some(vec![p.terminal_price]),
        })
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Result<ScenarioSet> {
        ensure_contract!(n >= 1 && n <= self.n_samples, "cannot take {n} of {} samples", self.n_samples);
        let (t, j) = (self.horizon, self.n_reservoirs);
        Ok(ScenarioSet {
            n_samples: n,
            prices: self.prices[..n * t].to_vec(),
            inflows: self.inflows[..n * t * j].to_vec(),
            terminal_prices: self.terminal_prices.as_ref().map(|v| v[..n].to_vec()),
            ..self.clone()
        })
    }

    pub fn min_inflow(&self) -> f64 {
        self.inflows.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Independent seed for a named consumer of the top-level seed: the first
/// eight bytes of `SHA-256(seed || name)`.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn sample_rng(seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64);
    rng
}

/// Simulates `n_samples` independent paths; sample `s` draws from its own
/// stream `(seed, s)` so results do not depend on scheduling.
pub fn simulate(
    model: &ScenarioModel,
    horizon: usize,
    n_samples: usize,
    seed: u64,
    role: ScenarioRole,
) -> Result<ScenarioSet> {
    ensure_contract!(horizon >= 1, "horizon must be >= 1");
    model.price.validate()?;
    for s in &model.inflows {
        s.validate()?;
    }
    let nres = model.n_reservoirs();
    if model.noise.inflow_stds.len() != nres {
        return Err(Error::Config(format!(
            "noise model has {} inflow scales for {nres} reservoirs",
            model.noise.inflow_stds.len()
        )));
    }
    let price_e = model.price.expanded();
    let inflow_e: Vec<ExpandedArma> = model.inflows.iter().map(|s| s.expanded()).collect();
    let burn = inflow_e
        .iter()
        .map(|e| e.max_lag)
        .chain([price_e.max_lag, BURN_IN])
        .max()
        .unwrap_or(BURN_IN);

    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(seed, s);
            let len = burn + horizon;
            let mut px = vec![model.price.initial_level; burn];
            px.reserve(horizon);
            let mut pw = vec![0.0; len];
            let mut ix: Vec<Vec<f64>> = model
                .inflows
                .iter()
                .map(|spec| {
                    let mut v = vec![spec.initial_level; burn];
                    v.reserve(horizon);
                    v
                })
                .collect();
            let mut iw = vec![vec![0.0; len]; nres];
            let mut z = vec![0.0; nres];
            for t in burn..len {
                let e: f64 = StandardNormal.sample(&mut rng);
                pw[t] = model.noise.price_std * e;
                let v = price_e.next(&px, &pw);
                px.push(v);

                for zj in z.iter_mut() {
                    *zj = StandardNormal.sample(&mut rng);
                }
                for j in 0..nres {
                    let corr: f64 = model.noise.factor[j].iter().zip(&z).map(|(a, b)| a * b).sum();
                    iw[j][t] = model.noise.inflow_stds[j] * corr;
                    let v = inflow_e[j].next(&ix[j], &iw[j]);
                    ix[j].push(v);
                }
            }
            let prices = px.split_off(burn);
            let mut inflows = Vec::with_capacity(horizon * nres);
            for t in burn..len {
                for series in &ix {
                    inflows.push(series[t].max(0.0));
                }
            }
            (prices, inflows)
        })
        .collect();

    let mut set = ScenarioSet {
        horizon,
        n_samples,
        n_reservoirs: nres,
        prices: Vec::with_capacity(n_samples * horizon),
        inflows: Vec::with_capacity(n_samples * horizon * nres),
        seed,
        role,
        terminal_prices: None,
    };
    for (p, i) in per_sample {
        set.prices.extend(p);
        set.inflows.extend(i);
    }
    set.attach_terminal_forecasts(&model.price);
    Ok(set)
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the scenario CSV: a `#` metadata line, then
/// `sample,t,price,inflow_1,...,inflow_J` with one row per (sample, hour).
pub fn save_scenarios(set: &ScenarioSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(
        w,
        "# seed={} role={} horizon={} samples={} reservoirs={}",
        set.seed,
        set.role.as_str(),
        set.horizon,
        set.n_samples,
        set.n_reservoirs
    )
    .map_err(io)?;
    let mut header = String::from("sample,t,price");
    for j in 1..=set.n_reservoirs {
        header.push_str(&format!(",inflow_{j}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    let (t_len, nres) = (set.horizon, set.n_reservoirs);
    for s in 0..set.n_samples {
        for t in 0..t_len {
            let mut line = format!("{s},{},{}", t + 1, fmt17(set.prices[s * t_len + t]));
            for j in 0..nres {
                line.push(',');
                line.push_str(&fmt17(set.inflows[(s * t_len + t) * nres + j]));
            }
            writeln!(w, "{line}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[derive(Default)]
struct Meta {
    seed: Option<u64>,
    role: Option<ScenarioRole>,
    horizon: Option<usize>,
    samples: Option<usize>,
    reservoirs: Option<usize>,
}

fn parse_meta(line: &str) -> Meta {
    let mut m = Meta::default();
    for kv in line.trim_start_matches('#').split_whitespace() {
        let Some((k, v)) = kv.split_once('=') else { continue };
        match k {
            "seed" => m.seed = v.parse().ok(),
            "role" => {
                m.role = match v {
                    "training" => Some(ScenarioRole::Training),
                    "test" => Some(ScenarioRole::Test),
                    _ => None,
                }
            }
            "horizon" => m.horizon = v.parse().ok(),
            "samples" => m.samples = v.parse().ok(),
            "reservoirs" => m.reservoirs = v.parse().ok(),
            _ => {}
        }
    }
    m
}

/// Reads a file written by [`save_scenarios`]. Terminal forecasts are not
/// stored; call [`ScenarioSet::attach_terminal_forecasts`] afterwards.
pub fn load_scenarios(path: impl AsRef<Path>) -> Result<ScenarioSet> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let perr = |row: usize, column: &str, message: String| Error::Parse {
        path: pstr.clone(),
        row,
        column: column.to_string(),
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let mut meta = Meta::default();
    let (header_row, header) = loop {
        match lines.next() {
            None => return Err(perr(1, "sample", "empty file".into())),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.starts_with('#') {
                    meta = parse_meta(&line);
                    continue;
                }
                if line.trim().is_empty() {
                    return Err(perr(i + 1, "sample", "missing header".into()));
                }
                break (i + 1, line);
            }
        }
    };

    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    for (k, want) in ["sample", "t", "price"].iter().enumerate() {
        if cols.get(k) != Some(want) {
            return Err(perr(header_row, want, format!("expected column `{want}` at position {}", k + 1)));
        }
    }
    let nres = meta.reservoirs.unwrap_or(cols.len().saturating_sub(3));
    if nres == 0 {
        return Err(perr(header_row, "inflow_1", "missing column".into()));
    }
    for j in 1..=nres {
        let want = format!("inflow_{j}");
        if cols.get(2 + j).copied() != Some(want.as_str()) {
            return Err(perr(header_row, &want, "missing column".into()));
        }
    }
    if cols.len() != 3 + nres {
        return Err(perr(header_row, cols[3 + nres], "unexpected column".into()));
    }

    let mut prices = Vec::new();
    let mut inflows = Vec::new();
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(perr(
                row,
                cols.get(fields.len()).copied().unwrap_or("sample"),
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let s: usize = fields[0]
            .trim()
            .parse()
            .map_err(|e| perr(row, "sample", format!("{e}")))?;
        let t: usize = fields[1].trim().parse().map_err(|e| perr(row, "t", format!("{e}")))?;
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| perr(row, cols[k], format!("{e}")))
        };
        prices.push(num(2)?);
        for k in 0..nres {
            inflows.push(num(3 + k)?);
        }
        rows.push((s, t));
    }
    if rows.is_empty() {
        return Err(perr(header_row + 1, "sample", "no data rows".into()));
    }
    let horizon = rows.iter().map(|r| r.1).max().unwrap_or(0);
    let n_samples = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
    for (k, &(s, t)) in rows.iter().enumerate() {
        let want = (k / horizon, k % horizon + 1);
        if (s, t) != want {
            return Err(perr(
                header_row + 1 + k,
                if s != want.0 { "sample" } else { "t" },
                format!("expected sample {} hour {}, found sample {s} hour {t}", want.0, want.1),
            ));
        }
    }
    if rows.len() != n_samples * horizon {
        return Err(perr(header_row + rows.len(), "t", "incomplete final sample".into()));
    }
    if let Some(h) = meta.horizon.filter(|h| *h != horizon) {
        return Err(perr(1, "t", format!("metadata says horizon {h}, data has {horizon}")));
    }
    if let Some(n) = meta.samples.filter(|n| *n != n_samples) {
        return Err(perr(1, "sample", format!("metadata says {n} samples, data has {n_samples}")));
    }
    Ok(ScenarioSet {
        horizon,
        n_samples,
        n_reservoirs: nres,
        prices,
        inflows,
        seed: meta.seed.unwrap_or(0),
        role: meta.role.unwrap_or(ScenarioRole::Training),
        terminal_prices: None,
    })
}
