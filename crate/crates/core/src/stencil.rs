//! Local convolution operators on the torus and the feedback specifications
//! built from them.
//!
//! A [`Stencil`] is the coefficient array of a circulant operator with
//! finite support. Vehicular feedback is kept as scalar stencils applied
//! identically in every coordinate direction; the d x d diagonal blocks are
//! never materialized.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoherenceError, Result};
use crate::lattice::{MultiIndex, TorusShape};

const STRUCTURE_TOL: f64 = 1e-12;

/// Coefficient array with support inside the cube `[-q, q]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStencil", into = "RawStencil")]
pub struct Stencil {
    shape: TorusShape,
    radius: usize,
    coeffs: BTreeMap<MultiIndex, f64>,
}

#[derive(Serialize, Deserialize)]
struct RawStencil {
    shape: TorusShape,
    q: usize,
    entries: Vec<RawEntry>,
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    offset: Vec<i64>,
    value: f64,
}

impl TryFrom<RawStencil> for Stencil {
    type Error = CoherenceError;

    fn try_from(raw: RawStencil) -> Result<Self> {
        let entries: Vec<(Vec<i64>, f64)> =
            raw.entries.into_iter().map(|e| (e.offset, e.value)).collect();
        Stencil::with_radius(raw.shape, raw.q, &entries)
    }
}

impl From<Stencil> for RawStencil {
    fn from(s: Stencil) -> Self {
        let entries = s
            .signed_entries()
            .into_iter()
            .map(|(offset, value)| RawEntry { offset, value })
            .collect();
        RawStencil {
            shape: s.shape,
            q: s.radius,
            entries,
        }
    }
}

impl Stencil {
    /// Builds a stencil with a declared radius `q`.
    ///
    /// Offsets are reduced mod N; duplicates are summed and zeros dropped.
    /// Fails if a coefficient is not finite or if an offset lies outside the
    /// declared radius. Whether `2q + 1 <= N` holds is left to
    /// [`FeedbackSpec::validate_structure`].
    pub fn with_radius(shape: TorusShape, radius: usize, entries: &[(Vec<i64>, f64)]) -> Result<Self> {
        let mut coeffs: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (offset, value) in entries {
            if !value.is_finite() {
                return Err(CoherenceError::NonFinite(offset.clone()));
            }
            let k = shape.index(offset)?;
            let reach = shape
                .signed(&k)
                .iter()
                .map(|c| c.unsigned_abs() as usize)
                .max()
                .unwrap_or(0);
            if reach > radius {
                return Err(CoherenceError::Locality {
                    offset: offset.clone(),
                    side: shape.side(),
                });
            }
            *coeffs.entry(k).or_insert(0.0) += value;
        }
        coeffs.retain(|_, v| *v != 0.0);
        Ok(Self {
            shape,
            radius,
            coeffs,
        })
    }

    /// Builds a stencil whose radius is the smallest one covering `entries`.
    pub fn from_entries(shape: TorusShape, entries: &[(Vec<i64>, f64)]) -> Result<Self> {
        let mut radius = 0;
        for (offset, value) in entries {
            if *value == 0.0 {
                continue;
            }
            let k = shape.index(offset)?;
            for c in shape.signed(&k) {
                radius = radius.max(c.unsigned_abs() as usize);
            }
        }
        Self::with_radius(shape, radius, entries)
    }

    pub fn zero(shape: TorusShape) -> Self {
        Self {
            shape,
            radius: 0,
            coeffs: BTreeMap::new(),
        }
    }

    /// Kronecker delta scaled by `value`.
    pub fn delta(shape: TorusShape, value: f64) -> Result<Self> {
        Self::from_entries(shape, &[(vec![0; shape.dim()], value)])
    }

    /// The same offsets and coefficients placed on a torus of a different size.
    pub fn on_shape(&self, shape: TorusShape) -> Result<Self> {
        if shape.dim() != self.shape.dim() {
            return Err(CoherenceError::DimensionMismatch {
                expected: self.shape.dim(),
                actual: shape.dim(),
            });
        }
        Self::with_radius(shape, self.radius, &self.signed_entries())
    }

    pub fn shape(&self) -> TorusShape {
        self.shape
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Nonzero coefficients keyed by canonical offset.
    pub fn entries(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.coeffs.iter().map(|(k, v)| (k, *v))
    }

    /// Nonzero coefficients with offsets written in `(-N/2, N/2]`.
    pub fn signed_entries(&self) -> Vec<(Vec<i64>, f64)> {
        self.coeffs
            .iter()
            .map(|(k, v)| (self.shape.signed(k), *v))
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coefficient(&self, offset: &MultiIndex) -> f64 {
        self.coeffs.get(offset).copied().unwrap_or(0.0)
    }

    pub fn center(&self) -> f64 {
        self.coefficient(&self.shape.zero())
    }

    pub fn sum(&self) -> f64 {
        self.coeffs.values().sum()
    }

    pub fn norm_l1(&self) -> f64 {
        self.coeffs.values().map(|v| v.abs()).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.coeffs.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Full coefficient array over the torus in row-major order.
    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.shape.sites()];
        for (k, v) in &self.coeffs {
            out[self.shape.linear(k)] = *v;
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for v in s.coeffs.values_mut() {
            *v *= factor;
        }
        s.coeffs.retain(|_, v| *v != 0.0);
        s
    }

    /// Sum-zero property of relative feedback.
    pub fn is_relative(&self) -> bool {
        self.sum().abs() <= STRUCTURE_TOL * self.norm_l1().max(1.0)
    }

    /// Coefficient at `k` equals the coefficient at `-k` for every offset.
    pub fn is_reflection_symmetric(&self) -> bool {
        let tol = STRUCTURE_TOL * self.norm_inf().max(1.0);
        self.coeffs
            .iter()
            .all(|(k, v)| (self.coefficient(&self.shape.negate(k)) - v).abs() <= tol)
    }

    /// `2q + 1 <= N`.
    pub fn is_local(&self) -> bool {
        2 * self.radius < self.shape.side()
    }

    /// Precomputed gather tables for repeated convolution on this torus.
    pub fn convolver(&self) -> Convolver {
        let shape = self.shape;
        let sites: Vec<MultiIndex> = shape.enumerate_sites();
        let terms = self
            .coeffs
            .iter()
            .map(|(offset, &value)| {
                let gather = sites
                    .iter()
                    .map(|k| shape.linear(&shape.wrap_sub(k, offset).expect("same shape")))
                    .collect();
                (value, gather)
            })
            .collect();
        Convolver {
            sites: shape.sites(),
            terms,
        }
    }
}

/// `y_k = sum_o s_o x_{k - o}` with the index arithmetic resolved up front.
#[derive(Debug, Clone)]
pub struct Convolver {
    sites: usize,
    terms: Vec<(f64, Vec<usize>)>,
}

impl Convolver {
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.sites);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (value, gather) in &self.terms {
            for (yk, &src) in y.iter_mut().zip(gather) {
                *yk += value * x[src];
            }
        }
    }

    /// Adds `scale * (s * x)` to `y`.
    pub fn accumulate(&self, scale: f64, x: &[f64], y: &mut [f64]) {
        for (value, gather) in &self.terms {
            let w = scale * value;
            for (yk, &src) in y.iter_mut().zip(gather) {
                *yk += w * x[src];
            }
        }
    }
}

/// Circular convolution of `x` (row-major over the sites) with `s`.
pub fn apply_convolution(s: &Stencil, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != s.shape.sites() {
        return Err(CoherenceError::LengthMismatch {
            expected: s.shape.sites(),
            actual: x.len(),
        });
    }
    let mut y = vec![0.0; x.len()];
    s.convolver().apply_into(x, &mut y);
    Ok(y)
}

/// Standard consensus array: `-2 d beta` at the origin and `beta` at each of
/// the `2d` unit offsets.
pub fn standard_consensus_stencil(shape: TorusShape, beta: f64) -> Result<Stencil> {
    if shape.side() < 3 {
        return Err(CoherenceError::InvalidShape(format!(
            "standard stencil needs N >= 3 so that +1 and -1 differ, got N = {}",
            shape.side()
        )));
    }
    if !beta.is_finite() {
        return Err(CoherenceError::NonFinite(vec![0; shape.dim()]));
    }
    let d = shape.dim();
    let mut entries = vec![(vec![0; d], -2.0 * d as f64 * beta)];
    for r in 0..d {
        for step in [1, -1] {
            let mut offset = vec![0; d];
            offset[r] = step;
            entries.push((offset, beta));
        }
    }
    Stencil::with_radius(shape, 1, &entries)
}

/// Position and velocity feedback of a vehicular formation, split into
/// relative stencils and absolute scalar gains, plus viscous friction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicularFeedback {
    pub g_rel: Stencil,
    pub f_rel: Stencil,
    pub g_o: f64,
    pub f_o: f64,
    #[serde(default)]
    pub mu: f64,
}

impl VehicularFeedback {
    /// Full position array `g_rel + g_o * delta`.
    pub fn position_array(&self) -> Result<Stencil> {
        combine(&self.g_rel, self.g_o)
    }

    /// Full velocity array including friction: `f_rel + (f_o - mu) * delta`.
    pub fn velocity_array(&self) -> Result<Stencil> {
        combine(&self.f_rel, self.f_o - self.mu)
    }
}

fn combine(rel: &Stencil, absolute: f64) -> Result<Stencil> {
    let mut entries = rel.signed_entries();
    entries.push((vec![0; rel.shape().dim()], absolute));
    Stencil::with_radius(rel.shape(), rel.radius(), &entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackSpec {
    Consensus { a: Stencil },
    Vehicular(VehicularFeedback),
}

impl FeedbackSpec {
    pub fn consensus(a: Stencil) -> Self {
        FeedbackSpec::Consensus { a }
    }

    pub fn standard_consensus(shape: TorusShape, beta: f64) -> Result<Self> {
        Ok(Self::consensus(standard_consensus_stencil(shape, beta)?))
    }

    pub fn vehicular(g_rel: Stencil, f_rel: Stencil, g_o: f64, f_o: f64, mu: f64) -> Result<Self> {
        if g_rel.shape() != f_rel.shape() {
            return Err(CoherenceError::InvalidShape(
                "position and velocity stencils live on different tori".into(),
            ));
        }
        for (name, v) in [("g_o", g_o), ("f_o", f_o), ("mu", mu)] {
            if !v.is_finite() {
                return Err(CoherenceError::Unsupported(format!("{name} is not finite")));
            }
        }
        Ok(FeedbackSpec::Vehicular(VehicularFeedback {
            g_rel,
            f_rel,
            g_o,
            f_o,
            mu,
        }))
    }

    /// `u = T_O x + T_O v + g_o x + f_o v` with friction `mu`.
    pub fn standard_vehicular(shape: TorusShape, beta: f64, g_o: f64, f_o: f64, mu: f64) -> Result<Self> {
        let o = standard_consensus_stencil(shape, beta)?;
        Self::vehicular(o.clone(), o, g_o, f_o, mu)
    }

    pub fn shape(&self) -> TorusShape {
        match self {
            FeedbackSpec::Consensus { a } => a.shape(),
            FeedbackSpec::Vehicular(v) => v.g_rel.shape(),
        }
    }

    pub fn is_consensus(&self) -> bool {
        matches!(self, FeedbackSpec::Consensus { .. })
    }

    /// Largest stencil radius in the spec.
    pub fn radius(&self) -> usize {
        match self {
            FeedbackSpec::Consensus { a } => a.radius(),
            FeedbackSpec::Vehicular(v) => v.g_rel.radius().max(v.f_rel.radius()),
        }
    }

    /// Same feedback laws placed on a torus of side `side`.
    pub fn resized(&self, side: usize) -> Result<Self> {
        let shape = self.shape().with_side(side)?;
        Ok(match self {
            FeedbackSpec::Consensus { a } => FeedbackSpec::Consensus { a: a.on_shape(shape)? },
            FeedbackSpec::Vehicular(v) => FeedbackSpec::Vehicular(VehicularFeedback {
                g_rel: v.g_rel.on_shape(shape)?,
                f_rel: v.f_rel.on_shape(shape)?,
                ..v.clone()
            }),
        })
    }

    pub fn validate_structure(&self) -> ValidationReport {
        let mut checks = Vec::new();
        let mut stencil_checks = |name: &str, s: &Stencil| {
            checks.push(Check::new(
                format!("{name}: relative sum-zero"),
                s.is_relative(),
                format!("coefficient sum {:.3e}", s.sum()),
            ));
            checks.push(Check::new(
                format!("{name}: locality"),
                s.is_local(),
                format!("q = {}, N = {}", s.radius(), s.shape().side()),
            ));
            checks.push(Check::new(
                format!("{name}: reflection symmetry"),
                s.is_reflection_symmetric(),
                String::new(),
            ));
        };
        match self {
            FeedbackSpec::Consensus { a } => stencil_checks("a", a),
            FeedbackSpec::Vehicular(v) => {
                stencil_checks("g_rel", &v.g_rel);
                stencil_checks("f_rel", &v.f_rel);
                checks.push(Check::new("g_o <= 0".into(), v.g_o <= 0.0, format!("g_o = {}", v.g_o)));
                checks.push(Check::new("f_o <= 0".into(), v.f_o <= 0.0, format!("f_o = {}", v.f_o)));
                checks.push(Check::new("mu >= 0".into(), v.mu >= 0.0, format!("mu = {}", v.mu)));
            }
        }
        ValidationReport { checks }
    }
}

/// Look-ahead / look-behind platoon gains on a ring (d = 1).
pub fn stencil_from_platoon_gains(
    shape: TorusShape,
    g_plus: f64,
    g_minus: f64,
    f_plus: f64,
    f_minus: f64,
    g_o: f64,
    f_o: f64,
) -> Result<FeedbackSpec> {
    if shape.dim() != 1 {
        return Err(CoherenceError::Unsupported(format!(
            "platoon gains are defined on a ring, got d = {}",
            shape.dim()
        )));
    }
    let pair = |plus: f64, minus: f64| {
        Stencil::with_radius(
            shape,
            1,
            &[(vec![0], -(plus + minus)), (vec![1], plus), (vec![-1], minus)],
        )
    };
    FeedbackSpec::vehicular(pair(g_plus, g_minus)?, pair(f_plus, f_minus)?, g_o, f_o, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: String, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}
