//! ν-one-class SVM with an RBF kernel over (standardized) feature vectors.
//!
//! The dual `min ½αᵀKα` subject to `0 ≤ αᵢ ≤ C = 1/(νN)`, `Σα = 1` is solved
//! by maximal-violating-pair SMO. The decision value `v(f) = Σ αᵢ k(xᵢ, f) − ρ`
//! is positive for normal-like inputs and negative for anomalous ones.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, ByteReader};
use crate::nets::FeatureVector;

pub const FEATURE_MAGIC: &[u8; 5] = b"FVEC1";
pub const MODEL_MAGIC: &[u8; 5] = b"OCSV1";

/// Coefficients at or below this are not support vectors.
pub const SV_THRESHOLD: f64 = 1e-8;
pub const DEFAULT_NU: f64 = 0.1;
/// Stopping gap of the working-set pair. With `Σα = 1` gradients are `νN`
/// times smaller than in the `Σα = νN` scaling, so the gap is kept tight.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100_000;

pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if gamma < 0.0 {
        return Err(Error::InvalidArgument(format!("gamma {gamma} is negative")));
    }
    Ok(rbf(x, y, gamma))
}

fn rbf(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitParams {
    pub nu: f64,
    /// RBF width; `None` selects `1 / (D · mean feature variance)` computed
    /// after standardization.
    pub gamma: Option<f64>,
    /// Per-dimension z-scoring learnt from the training pool.
    pub standardize: bool,
    /// Stop once the maximal KKT violation falls below this.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            nu: DEFAULT_NU,
            gamma: None,
            standardize: true,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl FitParams {
    pub fn with_nu(nu: f64) -> Self {
        FitParams {
            nu,
            ..FitParams::default()
        }
    }
}

/// Decision value with its two normalised forms. `eq1_score` lies in
/// [-1, 0] with 0 the most anomalous; `norm_score = eq1_score + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyScore {
    pub raw_v: f64,
    pub eq1_score: f64,
    pub norm_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcsvmModel {
    pub dim: usize,
    pub gamma: f64,
    pub nu: f64,
    pub rho: f64,
    pub converged: bool,
    pub iterations: u64,
    pub n_train: usize,
    pub mean: Vec<f64>,
    /// Divisors of the z-scoring; 1 for constant dimensions.
    pub scale: Vec<f64>,
    /// Support vectors in standardized coordinates.
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    /// `(min v, max v)` once calibrated.
    pub calibration: Option<(f64, f64)>,
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(xs: &[&[f32]], enabled: bool) -> Self {
        let d = xs[0].len();
        if !enabled {
            return Standardizer {
                mean: vec![0.0; d],
                scale: vec![1.0; d],
            };
        }
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            for (m, &v) in mean.iter_mut().zip(*x) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for x in xs {
            for ((s, &v), m) in var.iter_mut().zip(*x).zip(&mean) {
                *s += (f64::from(v) - m).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    fn apply(&self, x: &[f32]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&v, m), s)| (f64::from(v) - m) / s)
            .collect()
    }
}

fn default_gamma(xs: &[Vec<f64>]) -> f64 {
    let n = xs.len() as f64;
    let d = xs[0].len();
    let mut total_var = 0.0;
    for j in 0..d {
        let mean = xs.iter().map(|x| x[j]).sum::<f64>() / n;
        total_var += xs.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
    }
    let mean_var = total_var / d as f64;
    if mean_var > 0.0 {
        1.0 / (d as f64 * mean_var)
    } else {
        1.0 / d as f64
    }
}

/// Lazily computed kernel rows.
struct KernelRows<'a> {
    xs: &'a [Vec<f64>],
    gamma: f64,
    rows: Vec<Option<Vec<f64>>>,
}

impl<'a> KernelRows<'a> {
    fn new(xs: &'a [Vec<f64>], gamma: f64) -> Self {
        KernelRows {
            xs,
            gamma,
            rows: vec![None; xs.len()],
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        let (xs, gamma) = (self.xs, self.gamma);
        self.rows[i].get_or_insert_with(|| xs.iter().map(|x| rbf(&xs[i], x, gamma)).collect())
    }
}

/// Dual solution on precomputed points; shared by [`fit`] and tests.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alphas: Vec<f64>,
    /// `(Kα)ᵢ` for every training point.
    pub gradient: Vec<f64>,
    pub rho: f64,
    pub iterations: u64,
    pub converged: bool,
}

impl DualSolution {
    /// `½ αᵀKα`.
    pub fn objective(&self) -> f64 {
        0.5 * self
            .alphas
            .iter()
            .zip(&self.gradient)
            .map(|(a, g)| a * g)
            .sum::<f64>()
    }
}

/// SMO on points already in kernel space coordinates.
pub fn solve_dual(xs: &[Vec<f64>], nu: f64, gamma: f64, tolerance: f64, max_iter: usize) -> Result<DualSolution> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no training points".into()));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidArgument(format!("nu {nu} outside (0, 1]")));
    }
    let c = 1.0 / (nu * n as f64);
    // initial feasible point: floor(νN) coefficients at C, remainder on the next
    let full = ((nu * n as f64).floor() as usize).min(n);
    let mut alphas = vec![0.0; n];
    alphas[..full].fill(c);
    let rest = 1.0 - full as f64 * c;
    if full < n && rest > 0.0 {
        alphas[full] = rest;
    }

    let mut k = KernelRows::new(xs, gamma);
    let mut grad = vec![0.0; n];
    for (i, &a) in alphas.iter().enumerate() {
        if a > 0.0 {
            for (g, kv) in grad.iter_mut().zip(k.row(i)) {
                *g += a * kv;
            }
        }
    }

    let at_upper = |a: f64| a >= c * (1.0 - 1e-12);
    let mut iterations = 0u64;
    let mut converged = false;
    while (iterations as usize) < max_iter {
        // i: lowest gradient among coefficients that can grow,
        // j: highest gradient among coefficients that can shrink
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        for t in 0..n {
            if !at_upper(alphas[t]) && (i == usize::MAX || grad[t] < grad[i]) {
                i = t;
            }
            if alphas[t] > 0.0 && (j == usize::MAX || grad[t] > grad[j]) {
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || grad[j] - grad[i] < tolerance {
            converged = true;
            break;
        }
        let (kii, kij) = {
            let ri = k.row(i);
            (ri[i], ri[j])
        };
        let kjj = k.row(j)[j];
        let eta = (kii + kjj - 2.0 * kij).max(1e-12);
        let delta = ((grad[j] - grad[i]) / eta)
            .min(c - alphas[i])
            .min(alphas[j]);
        alphas[i] += delta;
        alphas[j] -= delta;
        if alphas[j] < 1e-15 {
            alphas[j] = 0.0;
        }
        if c - alphas[i] < 1e-15 * c {
            alphas[i] = c;
        }
        let ri: Vec<f64> = k.row(i).to_vec();
        let rj = k.row(j);
        for t in 0..n {
            grad[t] += delta * (ri[t] - rj[t]);
        }
        iterations += 1;
    }

    let rho = offset(&alphas, &grad, c);
    Ok(DualSolution {
        alphas,
        gradient: grad,
        rho,
        iterations,
        converged,
    })
}

/// Mean gradient over free coefficients, else the midpoint of the interval
/// the bounded ones allow.
fn offset(alphas: &[f64], grad: &[f64], c: f64) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    let mut lower = f64::NEG_INFINITY; // max G over α = C
    let mut upper = f64::INFINITY; // min G over α = 0
    for (&a, &g) in alphas.iter().zip(grad) {
        if a <= SV_THRESHOLD {
            upper = upper.min(g);
        } else if a >= c * (1.0 - 1e-9) {
            lower = lower.max(g);
        } else {
            sum += g;
            count += 1;
        }
    }
    if count > 0 {
        sum / count as f64
    } else if lower.is_finite() && upper.is_finite() {
        0.5 * (lower + upper)
    } else if lower.is_finite() {
        lower
    } else {
        upper
    }
}

/// Largest KKT violation of a dual solution for box bound `c`.
pub fn kkt_violation(alphas: &[f64], grad: &[f64], rho: f64, c: f64) -> f64 {
    alphas
        .iter()
        .zip(grad)
        .map(|(&a, &g)| {
            let mut v: f64 = 0.0;
            if a < c * (1.0 - 1e-9) {
                v = v.max(rho - g);
            }
            if a > SV_THRESHOLD {
                v = v.max(g - rho);
            }
            v
        })
        .fold(0.0, f64::max)
}

pub fn fit(features: &[FeatureVector], params: &FitParams) -> Result<OcsvmModel> {
    let Some(first) = features.first() else {
        return Err(Error::InvalidArgument("cannot fit on zero features".into()));
    };
    let dim = first.len();
    if dim == 0 {
        return Err(Error::InvalidArgument("features are empty vectors".into()));
    }
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::InvalidArgument(format!(
            "feature of length {} among length {dim}",
            f.len()
        )));
    }
    if !(params.nu > 0.0 && params.nu <= 1.0) {
        return Err(Error::InvalidArgument(format!("nu {} outside (0, 1]", params.nu)));
    }
    if features.iter().any(|f| f.values.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("feature vector".into()));
    }
    let raw: Vec<&[f32]> = features.iter().map(|f| f.values.as_slice()).collect();
    let st = Standardizer::fit(&raw, params.standardize);
    let xs: Vec<Vec<f64>> = raw.iter().map(|x| st.apply(x)).collect();
    let gamma = match params.gamma {
        Some(g) if g >= 0.0 && g.is_finite() => g,
        Some(g) => return Err(Error::InvalidArgument(format!("gamma {g} is invalid"))),
        None => default_gamma(&xs),
    };
    let sol = solve_dual(&xs, params.nu, gamma, params.tolerance, params.max_iter)?;
    if !sol.converged {
        log::warn!(
            "one-class SVM stopped at the iteration cap ({}) before convergence",
            params.max_iter
        );
    }
    let mut support_vectors = Vec::new();
    let mut alphas = Vec::new();
    for (x, &a) in xs.into_iter().zip(&sol.alphas) {
        if a > SV_THRESHOLD {
            support_vectors.push(x);
            alphas.push(a);
        }
    }
    Ok(OcsvmModel {
        dim,
        gamma,
        nu: params.nu,
        rho: sol.rho,
        converged: sol.converged,
        iterations: sol.iterations,
        n_train: features.len(),
        mean: st.mean,
        scale: st.scale,
        support_vectors,
        alphas,
        calibration: None,
    })
}

impl OcsvmModel {
    fn standardize(&self, f: &[f32]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&v, m), s)| (f64::from(v) - m) / s)
            .collect()
    }

    /// Decision value `Σ αᵢ k(xᵢ, f) − ρ`.
    pub fn decision(&self, f: &FeatureVector) -> Result<f64> {
        if f.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "feature has length {}, model expects {}",
                f.len(),
                self.dim
            )));
        }
        let x = self.standardize(&f.values);
        let s: f64 = self
            .support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * rbf(sv, &x, self.gamma))
            .sum();
        Ok(s - self.rho)
    }

    /// Stores the extremes of the decision value over `features`.
    pub fn calibrate(&mut self, features: &[FeatureVector]) -> Result<()> {
        if features.is_empty() {
            return Err(Error::InvalidArgument("calibration set is empty".into()));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for f in features {
            let v = self.decision(f)?;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi <= lo {
            return Err(Error::DegenerateCalibration(lo));
        }
        self.calibration = Some((lo, hi));
        Ok(())
    }

    /// Both normalisations of a decision value, after clamping into the
    /// calibrated range.
    pub fn score_value(&self, raw_v: f64) -> Result<AnomalyScore> {
        let (lo, hi) = self
            .calibration
            .ok_or_else(|| Error::State("one-class SVM model is not calibrated".into()))?;
        Ok(score_from(raw_v, lo, hi))
    }

    pub fn score(&self, f: &FeatureVector) -> Result<AnomalyScore> {
        self.score_value(self.decision(f)?)
    }

    pub fn score_eq1(&self, f: &FeatureVector) -> Result<f64> {
        self.score(f).map(|s| s.eq1_score)
    }

    pub fn score_norm(&self, f: &FeatureVector) -> Result<f64> {
        self.score(f).map(|s| s.norm_score)
    }

    /// Dual coefficients sum; 1 up to rounding.
    pub fn alpha_sum(&self) -> f64 {
        self.alphas.iter().sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = MODEL_MAGIC.to_vec();
        let u = |b: &mut Vec<u8>, v: u64| b.extend_from_slice(&v.to_le_bytes());
        let f = |b: &mut Vec<u8>, v: f64| b.extend_from_slice(&v.to_le_bytes());
        u(&mut b, self.dim as u64);
        u(&mut b, self.n_train as u64);
        u(&mut b, self.support_vectors.len() as u64);
        u(&mut b, self.iterations);
        b.push(u8::from(self.converged));
        f(&mut b, self.gamma);
        f(&mut b, self.nu);
        f(&mut b, self.rho);
        for &v in self.mean.iter().chain(&self.scale) {
            f(&mut b, v);
        }
        for sv in &self.support_vectors {
            for &v in sv {
                f(&mut b, v);
            }
        }
        for &a in &self.alphas {
            f(&mut b, a);
        }
        match self.calibration {
            Some((lo, hi)) => {
                b.push(1);
                f(&mut b, lo);
                f(&mut b, hi);
            }
            None => b.push(0),
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "one-class SVM model");
        r.expect_magic(MODEL_MAGIC)?;
        let dim = r.u64()? as usize;
        let n_train = r.u64()? as usize;
        let n_sv = r.u64()? as usize;
        let iterations = r.u64()?;
        let converged = flag(r.u8()?)?;
        let gamma = r.f64()?;
        let nu = r.f64()?;
        let rho = r.f64()?;
        let mean = r.f64s(dim)?;
        let scale = r.f64s(dim)?;
        let support_vectors = (0..n_sv).map(|_| r.f64s(dim)).collect::<Result<Vec<_>>>()?;
        let alphas = r.f64s(n_sv)?;
        let calibration = if flag(r.u8()?)? {
            Some((r.f64()?, r.f64()?))
        } else {
            None
        };
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after one-class SVM model".into()));
        }
        Ok(OcsvmModel {
            dim,
            gamma,
            nu,
            rho,
            converged,
            iterations,
            n_train,
            mean,
            scale,
            support_vectors,
            alphas,
            calibration,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read(path)?)
    }
}

fn flag(b: u8) -> Result<bool> {
    match b {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::Format(format!("invalid flag byte {other}"))),
    }
}

/// `eq1 = −(v − min)/(max − min)` on `v` clamped into `[min, max]`, and
/// `norm = eq1 + 1`.
pub fn score_from(raw_v: f64, min_v: f64, max_v: f64) -> AnomalyScore {
    let v = raw_v.clamp(min_v, max_v);
    // + 0.0 turns the −0 at v = min into +0
    let eq1 = -(v - min_v) / (max_v - min_v) + 0.0;
    AnomalyScore {
        raw_v,
        eq1_score: eq1,
        norm_score: eq1 + 1.0,
    }
}

/// FVEC1: magic, u32 count, u32 dimension, then row-major LE f32 values.
pub fn write_features(features: &[FeatureVector]) -> Result<Vec<u8>> {
    let dim = features.first().map_or(0, FeatureVector::len);
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::InvalidArgument(format!(
            "feature of length {} among length {dim}",
            f.len()
        )));
    }
    let count = u32::try_from(features.len())
        .map_err(|_| Error::InvalidArgument("too many features".into()))?;
    let mut b = FEATURE_MAGIC.to_vec();
    b.extend_from_slice(&count.to_le_bytes());
    b.extend_from_slice(&(dim as u32).to_le_bytes());
    for f in features {
        for v in &f.values {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(b)
}

pub fn read_features(bytes: &[u8]) -> Result<Vec<FeatureVector>> {
    let mut r = ByteReader::new(bytes, "feature file");
    r.expect_magic(FEATURE_MAGIC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let out = (0..count)
        .map(|_| r.f32s(dim).map(|values| FeatureVector { values }))
        .collect::<Result<Vec<_>>>()?;
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes after feature rows".into()));
    }
    Ok(out)
}

pub fn save_features(path: &Path, features: &[FeatureVector]) -> Result<()> {
    io::write_atomic(path, &write_features(features)?)
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureVector>> {
    read_features(&io::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(v: &[f32]) -> FeatureVector {
        FeatureVector { values: v.to_vec() }
    }

    fn raw(nu: f64, gamma: f64) -> FitParams {
        FitParams {
            nu,
            gamma: Some(gamma),
            standardize: false,
            ..FitParams::default()
        }
    }

    /// Projected-gradient descent on the dual with exact Euclidean projection
    /// onto {0 ≤ α ≤ C, Σα = 1} by bisection on the shift.
    fn oracle(xs: &[Vec<f64>], nu: f64, gamma: f64) -> (Vec<f64>, f64) {
        let n = xs.len();
        let c = 1.0 / (nu * n as f64);
        let k: Vec<Vec<f64>> = xs.iter().map(|a| xs.iter().map(|b| rbf(a, b, gamma)).collect()).collect();
        let project = |y: &[f64]| -> Vec<f64> {
            let (mut lo, mut hi) = (-1e3, 1e3);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let s: f64 = y.iter().map(|v| (v - mid).clamp(0.0, c)).sum();
                if s > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t = 0.5 * (lo + hi);
            y.iter().map(|v| (v - t).clamp(0.0, c)).collect()
        };
        let mut a = project(&vec![1.0 / n as f64; n]);
        let lmax: f64 = k.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let step = 1.0 / lmax;
        for _ in 0..20_000 {
            let g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * a[j]).sum()).collect();
            let y: Vec<f64> = a.iter().zip(&g).map(|(x, gi)| x - step * gi).collect();
            a = project(&y);
        }
        let obj = 0.5 * (0..n).map(|i| (0..n).map(|j| a[i] * k[i][j] * a[j]).sum::<f64>()).sum::<f64>();
        (a, obj)
    }

    fn corners() -> Vec<FeatureVector> {
        vec![fv(&[0.0, 0.0]), fv(&[1.0, 0.0]), fv(&[0.0, 1.0]), fv(&[1.0, 1.0])]
    }

    #[test]
    fn kernel_examples() {
        let x = [0.3, -1.0];
        assert_eq!(rbf_kernel(&x, &x, 5.0).unwrap(), 1.0);
        assert_eq!(rbf_kernel(&x, &[9.0, 9.0], 0.0).unwrap(), 1.0);
        let v = rbf_kernel(&[0.0, 0.0], &[1.0, 0.0], std::f64::consts::LN_2).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(rbf_kernel(&[0.0], &[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn single_point() {
        let m = fit(&[fv(&[0.5, 2.0])], &FitParams::with_nu(1.0)).unwrap();
        assert_eq!(m.alphas, vec![1.0]);
        assert!((m.rho - 1.0).abs() < 1e-12);
        assert!(m.decision(&fv(&[0.5, 2.0])).unwrap().abs() < 1e-12);
        let far = m.decision(&fv(&[1e6, -1e6])).unwrap();
        assert!((far + m.rho).abs() < 1e-12);
    }

    #[test]
    fn identical_points_decide_zero() {
        for nu in [0.1, 0.5, 1.0] {
            let xs = vec![fv(&[1.0, 2.0, 3.0]); 10];
            let m = fit(&xs, &FitParams::with_nu(nu)).unwrap();
            assert!(m.decision(&xs[0]).unwrap().abs() < 1e-9, "nu {nu}");
        }
    }

    #[test]
    fn rejects_bad_nu() {
        for nu in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(fit(&corners(), &FitParams::with_nu(nu)), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn corners_match_oracle() {
        let m = fit(&corners(), &raw(0.5, 1.0)).unwrap();
        let xs: Vec<Vec<f64>> = corners().iter().map(|f| f.values.iter().map(|&v| f64::from(v)).collect()).collect();
        let (oa, obj) = oracle(&xs, 0.5, 1.0);
        let sol = solve_dual(&xs, 0.5, 1.0, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).unwrap();
        assert!((sol.objective() - obj).abs() < 1e-4);
        // decision at the centre against the oracle's coefficients and offset
        let centre = [0.5, 0.5];
        let g: Vec<f64> = xs.iter().map(|a| xs.iter().zip(&oa).map(|(b, w)| w * rbf(a, b, 1.0)).sum()).collect();
        let orho = g.iter().sum::<f64>() / 4.0;
        let ov: f64 = xs.iter().zip(&oa).map(|(x, a)| a * rbf(x, &centre, 1.0)).sum::<f64>() - orho;
        assert!((m.decision(&fv(&[0.5, 0.5])).unwrap() - ov).abs() < 1e-4);
    }

    #[test]
    fn random_problems_match_oracle_and_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..8 {
            let n = rng.gen_range(3..=20);
            let nu = rng.gen_range(0.05..1.0);
            let gamma = rng.gen_range(0.1..3.0);
            let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
            let sol = solve_dual(&xs, nu, gamma, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).unwrap();
            let (_, obj) = oracle(&xs, nu, gamma);
            assert!((sol.objective() - obj).abs() < 1e-4, "{} vs {obj}", sol.objective());
            let c = 1.0 / (nu * n as f64);
            assert!(kkt_violation(&sol.alphas, &sol.gradient, sol.rho, c) < 1e-3);
            assert!((sol.alphas.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(sol.alphas.iter().all(|&a| (0.0..=c * (1.0 + 1e-12)).contains(&a)));
        }
    }

    #[test]
    fn nu_property_on_gaussian_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = rand_distr_normal;
        let xs: Vec<FeatureVector> = (0..200)
            .map(|_| fv(&[normal(&mut rng) as f32, normal(&mut rng) as f32]))
            .collect();
        for nu in [0.1, 0.3, 0.5] {
            let m = fit(&xs, &FitParams::with_nu(nu)).unwrap();
            let outliers = xs.iter().filter(|f| m.decision(f).unwrap() < 0.0).count() as f64 / 200.0;
            let svs = m.support_vectors.len() as f64 / 200.0;
            assert!(outliers <= nu + 0.05, "nu {nu}: outliers {outliers}");
            assert!(svs >= nu - 0.05, "nu {nu}: svs {svs}");
        }
    }

    fn rand_distr_normal(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[test]
    fn calibration() {
        let mut m = fit(&corners(), &raw(0.5, 1.0)).unwrap();
        assert!(matches!(m.score_eq1(&corners()[0]), Err(Error::State(_))));
        assert!(matches!(m.calibrate(&corners()[..1]), Err(Error::DegenerateCalibration(_))));
        let pool = [corners(), vec![fv(&[0.5, 0.5])]].concat();
        m.calibrate(&pool).unwrap();
        let first = m.calibration;
        m.calibrate(&pool).unwrap();
        assert_eq!(m.calibration, first);
    }

    #[test]
    fn calibration_extremes_equal_direct_evaluation() {
        let xs = vec![fv(&[0.0, 0.0]), fv(&[1.0, 0.0]), fv(&[0.0, 1.5]), fv(&[3.0, 1.0])];
        let mut m = fit(&xs, &raw(0.5, 1.0)).unwrap();
        m.calibrate(&xs).unwrap();
        let vs: Vec<f64> = xs.iter().map(|f| m.decision(f).unwrap()).collect();
        let lo = vs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(m.calibration, Some((lo, hi)));
    }

    #[test]
    fn score_examples() {
        let s = score_from(2.0, -4.0, 6.0);
        assert!((s.eq1_score + 0.6).abs() < 1e-15);
        assert!((s.norm_score - 0.4).abs() < 1e-15);
        assert_eq!(score_from(-4.0, -4.0, 6.0).eq1_score, 0.0);
        assert_eq!(score_from(-4.0, -4.0, 6.0).norm_score, 1.0);
        assert_eq!(score_from(6.0, -4.0, 6.0).eq1_score, -1.0);
        assert_eq!(score_from(6.0, -4.0, 6.0).norm_score, 0.0);
        // clamped outside the calibrated range
        assert_eq!(score_from(-10.0, -4.0, 6.0).norm_score, 1.0);
        assert_eq!(score_from(10.0, -4.0, 6.0).eq1_score, -1.0);
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let mut m = fit(&corners(), &FitParams::with_nu(0.5)).unwrap();
        let b0 = m.to_bytes();
        assert_eq!(OcsvmModel::from_bytes(&b0).unwrap(), m);
        m.calibrate(&[fv(&[0.0, 0.0]), fv(&[5.0, 5.0])]).unwrap();
        let b = m.to_bytes();
        let back = OcsvmModel::from_bytes(&b).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), b);
        assert!(OcsvmModel::from_bytes(&b[..b.len() - 3]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(OcsvmModel::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn feature_file_round_trip() {
        let fs = vec![fv(&[1.0, -0.5, 3.25]), fv(&[0.0, f32::MIN_POSITIVE, 7.0])];
        let b = write_features(&fs).unwrap();
        assert_eq!(&b[..5], b"FVEC1");
        assert_eq!(&b[5..9], &2u32.to_le_bytes());
        assert_eq!(&b[9..13], &3u32.to_le_bytes());
        assert_eq!(b.len(), 13 + 2 * 3 * 4);
        assert_eq!(read_features(&b).unwrap(), fs);
        assert!(read_features(&b[..b.len() - 1]).is_err());
        assert!(write_features(&[fv(&[1.0]), fv(&[1.0, 2.0])]).is_err());
        assert_eq!(read_features(&write_features(&[]).unwrap()).unwrap(), vec![]);
    }

    #[test]
    fn dimension_mismatch() {
        let m = fit(&corners(), &FitParams::with_nu(0.5)).unwrap();
        assert!(matches!(m.decision(&fv(&[1.0])), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #[test]
        fn eq1_and_norm_agree(v in -1e3f64..1e3, a in -1e3f64..1e3, w in 1e-3f64..1e3) {
            let s = score_from(v, a, a + w);
            prop_assert_eq!(s.norm_score, s.eq1_score + 1.0);
            prop_assert!((-1.0..=0.0).contains(&s.eq1_score));
            prop_assert!((0.0..=1.0).contains(&s.norm_score));
        }

        #[test]
        fn norm_is_monotone_non_increasing(v1 in -10f64..10.0, v2 in -10f64..10.0) {
            let (a, b) = (score_from(v1, -5.0, 5.0), score_from(v2, -5.0, 5.0));
            if v1 <= v2 {
                prop_assert!(a.norm_score >= b.norm_score);
            }
        }

        #[test]
        fn decision_is_lipschitz(seed in any::<u64>(), dx in -0.1f32..0.1, dy in -0.1f32..0.1) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<FeatureVector> = (0..12).map(|_| fv(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])).collect();
            let gamma = 0.7;
            let m = fit(&xs, &raw(0.3, gamma)).unwrap();
            let q = fv(&[0.2, -0.1]);
            let q2 = fv(&[0.2 + dx, -0.1 + dy]);
            let d = f64::from((dx * dx + dy * dy).sqrt());
            let lip = 2.0 * gamma * m.alpha_sum();
            prop_assert!((m.decision(&q).unwrap() - m.decision(&q2).unwrap()).abs() <= lip * d + 1e-9);
        }

        #[test]
        fn dual_feasibility(seed in any::<u64>(), n in 1usize..25, nu in 0.05f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<FeatureVector> = (0..n).map(|_| fv(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)])).collect();
            let m = fit(&xs, &FitParams::with_nu(nu)).unwrap();
            let c = 1.0 / (nu * n as f64);
            prop_assert!((m.alpha_sum() - 1.0).abs() < 1e-6);
            prop_assert!(m.alphas.iter().all(|&a| a > 0.0 && a <= c * (1.0 + 1e-9)));
        }
    }
}
