//! Size sweeps, growth classification, lattice sums and lower bounds.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoherenceError, Result};
use crate::lattice::TorusShape;
use crate::measures::{control_effort, variance, MeasureKind};
use crate::spectral::least_damped_eigenvalue;
use crate::stencil::{FeedbackSpec, Stencil};
use crate::sum::CompensatedSum;

pub const DEFAULT_SIZE_FLOOR: usize = 17;

/// Growth of a per-site quantity in the side length `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum GrowthClass {
    Bounded,
    Logarithmic,
    Power { exponent: f64 },
    Indeterminate,
}

impl GrowthClass {
    pub fn label(&self) -> String {
        match self {
            GrowthClass::Bounded => "bounded".into(),
            GrowthClass::Logarithmic => "logarithmic".into(),
            GrowthClass::Power { exponent } => format!("power {exponent:.3}"),
            GrowthClass::Indeterminate => "indeterminate".into(),
        }
    }

    /// Same class, and for powers an exponent within `tol`.
    pub fn matches(&self, expected: &GrowthClass, tol: f64) -> bool {
        match (self, expected) {
            (GrowthClass::Power { exponent: a }, GrowthClass::Power { exponent: b }) => (a - b).abs() <= tol,
            (a, b) => std::mem::discriminant(a) == std::mem::discriminant(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub class: GrowthClass,
    /// Least-squares slope of `log f` against `log N`.
    pub loglog_slope: f64,
    pub loglog_r2: f64,
    /// Slope of `log(df / dlog N)` against `log N`; about `s` for `N^s`,
    /// about 0 for `log N` and negative for a convergent sequence.
    pub increment_slope: Option<f64>,
    /// R^2 of `f` against `log N`.
    pub log_r2: f64,
    pub fitted_sizes: Vec<usize>,
}

/// Least-squares line `y = slope x + intercept` with its R^2.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

const BOUNDED_SLOPE: f64 = 0.1;
const LOG_R2: f64 = 0.99;
const INCREMENT_SPLIT: f64 = 0.5;

/// Classifies the growth of `values` over `sizes`, using only sizes at or
/// above `floor`.
///
/// Power laws and logarithms are told apart by how the increments
/// `df / dlog N` scale: `N^s` for a power, constant for a logarithm and
/// decaying for a convergent sequence. The log-log slope supplies the
/// exponent and settles sequences whose increments vanish.
pub fn classify(sizes: &[usize], values: &[f64], floor: usize) -> Result<GrowthFit> {
    if sizes.len() != values.len() {
        return Err(CoherenceError::LengthMismatch {
            expected: sizes.len(),
            actual: values.len(),
        });
    }
    let (ns, fs): (Vec<usize>, Vec<f64>) = sizes
        .iter()
        .zip(values)
        .filter(|(n, _)| **n >= floor)
        .map(|(n, f)| (*n, *f))
        .unzip();
    if ns.len() < 3 {
        return Err(CoherenceError::InvalidShape(format!(
            "need at least 3 sizes >= {floor} to classify, got {}",
            ns.len()
        )));
    }
    if fs.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(CoherenceError::Unsupported("growth fit needs positive finite values".into()));
    }
    let logn: Vec<f64> = ns.iter().map(|n| (*n as f64).ln()).collect();
    let logf: Vec<f64> = fs.iter().map(|f| f.ln()).collect();
    let (slope, _, loglog_r2) = linear_fit(&logn, &logf);
    let (_, _, log_r2) = linear_fit(&logn, &fs);

    let scale = fs.iter().fold(0.0f64, |m, f| m.max(f.abs()));
    let mut mids = Vec::new();
    let mut incs = Vec::new();
    let mut degenerate = false;
    for i in 1..ns.len() {
        let df = fs[i] - fs[i - 1];
        if df <= 1e-12 * scale {
            degenerate = true;
            break;
        }
        mids.push(0.5 * (logn[i] + logn[i - 1]));
        incs.push((df / (logn[i] - logn[i - 1])).ln());
    }

    let (class, increment_slope) = if degenerate {
        let class = if slope.abs() <= BOUNDED_SLOPE {
            GrowthClass::Bounded
        } else {
            GrowthClass::Indeterminate
        };
        (class, None)
    } else {
        let (tau, _, _) = linear_fit(&mids, &incs);
        let class = if tau <= -INCREMENT_SPLIT {
            GrowthClass::Bounded
        } else if tau.abs() < INCREMENT_SPLIT && log_r2 > LOG_R2 {
            GrowthClass::Logarithmic
        } else if tau >= INCREMENT_SPLIT {
            GrowthClass::Power { exponent: slope }
        } else {
            GrowthClass::Indeterminate
        };
        (class, Some(tau))
    };
    Ok(GrowthFit {
        class,
        loglog_slope: slope,
        loglog_r2,
        increment_slope,
        log_r2,
        fitted_sizes: ns,
    })
}

/// Feedback strategy rows of the scaling table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Consensus,
    AbsPosAbsVel,
    RelPosAbsVel,
    AbsPosRelVel,
    RelPosRelVel,
}

impl Strategy {
    /// Absolute terms (including friction) take precedence over relative ones.
    pub fn of(spec: &FeedbackSpec) -> Self {
        match spec {
            FeedbackSpec::Consensus { .. } => Strategy::Consensus,
            FeedbackSpec::Vehicular(v) => match (v.g_o < 0.0, v.f_o - v.mu < 0.0) {
                (true, true) => Strategy::AbsPosAbsVel,
                (false, true) => Strategy::RelPosAbsVel,
                (true, false) => Strategy::AbsPosRelVel,
                (false, false) => Strategy::RelPosRelVel,
            },
        }
    }

    /// Expected growth of the per-site measure in `N`.
    pub fn expected_growth(&self, kind: MeasureKind, d: usize) -> Option<GrowthClass> {
        let diffusive = match d {
            1 => GrowthClass::Power { exponent: 1.0 },
            2 => GrowthClass::Logarithmic,
            _ => GrowthClass::Bounded,
        };
        let micro = kind == MeasureKind::LocalError;
        match (self, kind) {
            (_, MeasureKind::ControlEffort) => None,
            (Strategy::RelPosRelVel, _) if micro => Some(diffusive),
            (_, _) if micro => Some(GrowthClass::Bounded),
            (Strategy::AbsPosAbsVel, _) => Some(GrowthClass::Bounded),
            (Strategy::RelPosRelVel, _) => Some(match d {
                4 => GrowthClass::Logarithmic,
                d if d >= 5 => GrowthClass::Bounded,
                d => GrowthClass::Power {
                    exponent: (4 - d) as f64,
                },
            }),
            _ => Some(diffusive),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPlan {
    pub template: FeedbackSpec,
    pub sizes: Vec<usize>,
    pub measure: MeasureKind,
    /// Rescales a consensus template to this per-site control effort.
    #[serde(default)]
    pub effort_target: Option<f64>,
    #[serde(default = "default_floor")]
    pub floor: usize,
    #[serde(default = "default_tol")]
    pub exponent_tol: f64,
}

fn default_floor() -> usize {
    DEFAULT_SIZE_FLOOR
}

fn default_tol() -> f64 {
    0.2
}

impl SweepPlan {
    pub fn new(template: FeedbackSpec, sizes: Vec<usize>, measure: MeasureKind) -> Self {
        Self {
            template,
            sizes,
            measure,
            effort_target: None,
            floor: DEFAULT_SIZE_FLOOR,
            exponent_tol: default_tol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoherenceError::InvalidShape("sizes must be strictly increasing".into()));
        }
        let q = self.template.radius();
        for &n in &self.sizes {
            if 2 * q + 1 > n {
                return Err(CoherenceError::InvalidShape(format!(
                    "N = {n} cannot hold a stencil of radius {q}"
                )));
            }
            self.measure.check_shape(self.template.shape().with_side(n)?)?;
        }
        Ok(())
    }

    fn spec_at(&self, side: usize) -> Result<FeedbackSpec> {
        let spec = self.template.resized(side)?;
        match (self.effort_target, &spec) {
            (None, _) => Ok(spec),
            (Some(w), FeedbackSpec::Consensus { a }) => {
                let e = control_effort(&spec)?;
                Ok(FeedbackSpec::consensus(a.scaled(w / e)))
            }
            (Some(_), FeedbackSpec::Vehicular(_)) => Err(CoherenceError::Unsupported(
                "effort normalization is only defined for consensus".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub side: usize,
    pub sites: usize,
    pub per_site: f64,
    pub effort: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    pub measure: MeasureKind,
    pub dim: usize,
    pub strategy: Strategy,
    pub points: Vec<SweepPoint>,
    pub fit: GrowthFit,
    pub expected: Option<GrowthClass>,
    pub verdict: Option<bool>,
}

pub fn sweep(plan: &SweepPlan) -> Result<ScalingReport> {
    plan.validate()?;
    let mut points = plan
        .sizes
        .par_iter()
        .map(|&side| {
            let spec = plan.spec_at(side)?;
            let per_site = variance(&spec, plan.measure)?.per_site;
            Ok(SweepPoint {
                side,
                sites: spec.shape().sites(),
                per_site,
                effort: control_effort(&spec)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by_key(|p| p.side);
    let sizes: Vec<usize> = points.iter().map(|p| p.side).collect();
    let values: Vec<f64> = points.iter().map(|p| p.per_site).collect();
    let fit = classify(&sizes, &values, plan.floor)?;
    let dim = plan.template.shape().dim();
    let strategy = Strategy::of(&plan.template);
    let expected = if plan.effort_target.is_some() {
        None
    } else {
        strategy.expected_growth(plan.measure, dim)
    };
    let verdict = expected.map(|e| fit.class.matches(&e, plan.exponent_tol));
    Ok(ScalingReport {
        measure: plan.measure,
        dim,
        strategy,
        points,
        fit,
        expected,
        verdict,
    })
}

/// Number of points of `{0..extent-1}^d` at each squared radius.
pub fn radius_histogram(d: usize, extent: usize) -> Vec<u64> {
    let squares: Vec<usize> = (0..extent).map(|k| k * k).collect();
    let max1 = (extent - 1) * (extent - 1);
    let mut hist = vec![1u64];
    for _ in 0..d {
        let mut next = vec![0u64; hist.len() + max1];
        for (r, &count) in hist.iter().enumerate() {
            if count == 0 {
                continue;
            }
            for &s in &squares {
                next[r + s] += count;
            }
        }
        hist = next;
    }
    hist
}

/// `N_bar = (N + 1) / 2`, the extent of the folded cube.
pub fn folded_extent(side: usize) -> usize {
    side.div_ceil(2)
}

/// `sum_{n != 0} 1 / |n|^{2p}` over the folded cube `{0..N_bar-1}^d`.
pub fn lattice_sum(d: usize, side: usize, p: u32) -> Result<f64> {
    if d == 0 || side < 3 {
        return Err(CoherenceError::InvalidShape(format!("lattice sum needs d >= 1 and N >= 3, got d = {d}, N = {side}")));
    }
    let hist = radius_histogram(d, folded_extent(side));
    let mut acc = CompensatedSum::new();
    // largest radii first, so small terms accumulate before the large ones
    for (r2, &count) in hist.iter().enumerate().skip(1).rev() {
        if count > 0 {
            acc += count as f64 / (r2 as f64).powi(p as i32);
        }
    }
    Ok(acc.value())
}

/// Asymptotic comparison function: `log N` when `d = 2p`, otherwise
/// `(N^{d-2p} - 1) / (d - 2p)`.
pub fn sum_comparison(d: usize, p: u32, n: f64) -> f64 {
    let e = d as f64 - 2.0 * p as f64;
    if e == 0.0 {
        n.ln()
    } else {
        (n.powf(e) - 1.0) / e
    }
}

pub fn expected_sum_class(d: usize, p: u32) -> GrowthClass {
    let e = d as i64 - 2 * p as i64;
    match e.cmp(&0) {
        std::cmp::Ordering::Less => GrowthClass::Bounded,
        std::cmp::Ordering::Equal => GrowthClass::Logarithmic,
        std::cmp::Ordering::Greater => GrowthClass::Power { exponent: e as f64 },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SumAsymptotics {
    pub d: usize,
    pub p: u32,
    pub sizes: Vec<usize>,
    pub sums: Vec<f64>,
    /// `lattice_sum / g(N_bar)` for the upper half of the sizes.
    pub ratios: Vec<f64>,
    pub lower_constant: f64,
    pub upper_constant: f64,
    pub fit: GrowthFit,
    pub expected: GrowthClass,
    pub class_matches: bool,
    pub bracket_stable: bool,
}

impl SumAsymptotics {
    pub fn passed(&self) -> bool {
        self.class_matches && self.bracket_stable
    }
}

/// Bracket constants must agree within this factor over the upper half.
pub const BRACKET_SPREAD: f64 = 1.5;

pub fn verify_sum_asymptotics(d: usize, p: u32, sizes: &[usize], floor: usize) -> Result<SumAsymptotics> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoherenceError::InvalidShape("sizes must be strictly increasing".into()));
    }
    let sums = sizes
        .par_iter()
        .map(|&n| lattice_sum(d, n, p))
        .collect::<Result<Vec<_>>>()?;
    let fit = classify(sizes, &sums, floor)?;
    let upper = &sizes[sizes.len() / 2..];
    let ratios: Vec<f64> = upper
        .iter()
        .zip(&sums[sizes.len() / 2..])
        .map(|(&n, s)| s / sum_comparison(d, p, folded_extent(n) as f64))
        .collect();
    let lower_constant = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let upper_constant = ratios.iter().copied().fold(0.0, f64::max);
    let expected = expected_sum_class(d, p);
    Ok(SumAsymptotics {
        d,
        p,
        sizes: sizes.to_vec(),
        sums,
        ratios,
        lower_constant,
        upper_constant,
        class_matches: fit.class.matches(&expected, 0.2),
        bracket_stable: lower_constant > 0.0 && upper_constant / lower_constant <= BRACKET_SPREAD,
        fit,
        expected,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub side: usize,
    pub radius: usize,
    pub effort: f64,
    pub dav_total: f64,
    /// `N^2 / (pi^2 (2q)^2 c 2W) sum 1/(n_1 + ... + n_d)^2` with
    /// `c = (2q+1)^d - 1` support points off the origin.
    pub bound: f64,
    /// Same expression with `c = (2q)^d`.
    pub bound_2q: f64,
    pub holds: bool,
}

/// Checks the explicit effort-constrained lower bound on the total
/// deviation-from-average variance of a consensus algorithm.
pub fn lower_bound_check_consensus(spec: &FeedbackSpec) -> Result<LowerBoundReport> {
    let FeedbackSpec::Consensus { a } = spec else {
        return Err(CoherenceError::Unsupported("lower bound is for consensus".into()));
    };
    let report = spec.validate_structure();
    if !report.passed() {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
        return Err(CoherenceError::Unsupported(format!("structural violations: {}", names.join(", "))));
    }
    if !a.is_relative() || !a.is_reflection_symmetric() {
        return Err(CoherenceError::Unsupported("lower bound needs a relative symmetric stencil".into()));
    }
    let shape = spec.shape();
    let side = shape.side();
    let d = shape.dim() as i32;
    let q = a.radius().max(1);
    let effort = control_effort(spec)?;
    let dav_total = variance(spec, MeasureKind::DeviationFromAverage)?.total;

    let mut acc = CompensatedSum::new();
    for n in shape.sites_iter().skip(1) {
        let folded: usize = n.coords().iter().map(|&c| c.min(side - c)).sum();
        acc += 1.0 / (folded as f64).powi(2);
    }
    let n2 = (side as f64).powi(2);
    let pi2 = std::f64::consts::PI.powi(2);
    let core = n2 / (pi2 * (2.0 * q as f64).powi(2) * 2.0 * effort) * acc.value();
    let support = ((2 * q + 1) as f64).powi(d) - 1.0;
    let bound = core / support;
    let bound_2q = core / (2.0 * q as f64).powi(d);
    Ok(LowerBoundReport {
        side,
        radius: q,
        effort,
        dav_total,
        bound,
        bound_2q,
        holds: dav_total >= bound * (1.0 - 1e-12),
    })
}

/// Random relative, reflection-symmetric stencil of radius `q` with positive
/// off-center weights in `(0, 1]`, hence stable.
pub fn random_symmetric_stencil<R: Rng + ?Sized>(shape: TorusShape, q: usize, rng: &mut R) -> Result<Stencil> {
    let d = shape.dim();
    let mut entries = Vec::new();
    let mut center = 0.0;
    let width = 2 * q + 1;
    let total = width.pow(d as u32);
    for pos in 0..total {
        let mut off = vec![0i64; d];
        let mut rest = pos;
        for c in off.iter_mut().rev() {
            *c = (rest % width) as i64 - q as i64;
            rest /= width;
        }
        let neg: Vec<i64> = off.iter().map(|c| -c).collect();
        // one representative per +/- pair
        if off.iter().all(|&c| c == 0) || neg < off {
            continue;
        }
        let keep = off.iter().filter(|c| **c != 0).count() == 1 || rng.random_bool(0.5);
        if !keep {
            continue;
        }
        let w: f64 = 1.0 - rng.random::<f64>();
        entries.push((off, w));
        entries.push((neg, w));
        center -= 2.0 * w;
    }
    entries.push((vec![0; d], center));
    Stencil::with_radius(shape, q, &entries)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub samples: usize,
    pub violations: usize,
}

/// Samples the elementary inequalities used in the sum estimates:
/// `1 - cos x <= x^2 / 2`, `1 - cos y >= (2 / pi^2) y^2` on `[-pi, pi]` and
/// `(n_1 + ... + n_d)^2 <= (2d + 1)(n_1^2 + ... + n_d^2)` for `d <= 6`.
pub fn auxiliary_inequality_suite<R: Rng + ?Sized>(samples: usize, rng: &mut R) -> Vec<InequalityCheck> {
    use std::f64::consts::PI;
    let mut upper = 0;
    let mut lower = 0;
    let mut squares = 0;
    for _ in 0..samples {
        let x: f64 = rng.random_range(-50.0..50.0);
        if 1.0 - x.cos() > x * x / 2.0 + 1e-15 {
            upper += 1;
        }
        let y: f64 = rng.random_range(-PI..=PI);
        if 1.0 - y.cos() < 2.0 / (PI * PI) * y * y - 1e-15 {
            lower += 1;
        }
        let d = rng.random_range(1..=6usize);
        let n: Vec<i64> = (0..d).map(|_| rng.random_range(-1000..=1000)).collect();
        let s: i64 = n.iter().sum();
        let s2: i64 = n.iter().map(|v| v * v).sum();
        if s * s > (2 * d as i64 + 1) * s2 {
            squares += 1;
        }
    }
    vec![
        InequalityCheck {
            name: "1 - cos x <= x^2 / 2".into(),
            samples,
            violations: upper,
        },
        InequalityCheck {
            name: "1 - cos y >= (2/pi^2) y^2 on [-pi, pi]".into(),
            samples,
            violations: lower,
        },
        InequalityCheck {
            name: "(sum n_i)^2 <= (2d+1) sum n_i^2".into(),
            samples,
            violations: squares,
        },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxationSweep {
    pub sites: Vec<usize>,
    pub relaxation_times: Vec<f64>,
    /// Log-log slope of `1 / |Re lambda_2|` against `M`.
    pub exponent: f64,
    pub r2: f64,
}

/// Fits the slowest relaxation time `1 / |Re lambda_2|` against `M`.
pub fn relaxation_time_sweep(template: &FeedbackSpec, sizes: &[usize]) -> Result<RelaxationSweep> {
    let rows = sizes
        .par_iter()
        .map(|&n| {
            let spec = template.resized(n)?;
            let lambda = least_damped_eigenvalue(&spec)?;
            Ok((spec.shape().sites(), 1.0 / lambda.abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sites, relaxation_times): (Vec<usize>, Vec<f64>) = rows.into_iter().unzip();
    let x: Vec<f64> = sites.iter().map(|m| (*m as f64).ln()).collect();
    let y: Vec<f64> = relaxation_times.iter().map(|t| t.ln()).collect();
    let (exponent, _, r2) = linear_fit(&x, &y);
    Ok(RelaxationSweep {
        sites,
        relaxation_times,
        exponent,
        r2,
    })
}
