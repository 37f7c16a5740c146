//! Closed-form H2 performance measures.
//!
//! Every measure is a sum over the nonzero wavenumbers of the output symbol
//! weighted by the closed-loop symbols:
//!
//! ```text
//! consensus:  V = -1/2 sum_{n != 0} |c^_n|^2 / Re(a^_n)
//! vehicular:  V =  d/2 sum_{n != 0} |c^_n|^2 / (g^_n f^_n)
//! ```
//!
//! The mean mode n = 0 is unobservable from every output considered here and
//! is excluded everywhere, including from the control-effort sums.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoherenceError, Result};
use crate::lattice::{MultiIndex, Parity, TorusShape};
use crate::spectral::{standard_symbol, symbol_of_stencil, vehicular_symbols};
use crate::stencil::FeedbackSpec;
use crate::sum::{compensated, CompensatedSum};

const STABILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureKind {
    /// Neighbour-to-neighbour differences (microscopic).
    #[serde(rename = "local")]
    LocalError,
    /// Difference to the antipodal site (macroscopic).
    #[serde(rename = "lrd")]
    LongRangeDeviation,
    /// Deviation from the network average (macroscopic).
    #[serde(rename = "dav")]
    DeviationFromAverage,
    /// Variance of the feedback signal itself.
    #[serde(rename = "effort")]
    ControlEffort,
}

impl MeasureKind {
    pub const OUTPUTS: [MeasureKind; 3] = [
        MeasureKind::LocalError,
        MeasureKind::LongRangeDeviation,
        MeasureKind::DeviationFromAverage,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            MeasureKind::LocalError => "local",
            MeasureKind::LongRangeDeviation => "lrd",
            MeasureKind::DeviationFromAverage => "dav",
            MeasureKind::ControlEffort => "effort",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        match label {
            "local" => Some(MeasureKind::LocalError),
            "lrd" => Some(MeasureKind::LongRangeDeviation),
            "dav" => Some(MeasureKind::DeviationFromAverage),
            "effort" => Some(MeasureKind::ControlEffort),
            _ => None,
        }
    }

    /// Fails for long range deviation on odd N.
    pub fn check_shape(&self, shape: TorusShape) -> Result<()> {
        if *self == MeasureKind::LongRangeDeviation && shape.side() % 2 != 0 {
            return Err(CoherenceError::Parity(shape.side()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub kind: MeasureKind,
    /// Square of the H2 norm summed over all sites.
    pub total: f64,
    /// `total / M`.
    pub per_site: f64,
    pub shape: TorusShape,
    pub spec_digest: String,
    pub formula: String,
    /// How the local-error output is normalized; `None` for other measures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convention: Option<String>,
}

impl VarianceReport {
    fn new(kind: MeasureKind, total: f64, spec: &FeedbackSpec, formula: &str) -> Self {
        let shape = spec.shape();
        Self {
            kind,
            total,
            per_site: total / shape.sites() as f64,
            shape,
            spec_digest: spec_digest(spec),
            formula: formula.to_string(),
            convention: (kind == MeasureKind::LocalError).then(|| LOCAL_CONVENTION.to_string()),
        }
    }
}

const LOCAL_CONVENTION: &str =
    "C = (2d)^(-1/2) [I - D^1; ...; I - D^d], |c^_n|^2 = (1/d) sum_r (1 - cos(2 pi n_r / N))";

/// Short content hash of the spec's JSON form.
pub fn spec_digest(spec: &FeedbackSpec) -> String {
    let json = serde_json::to_vec(spec).expect("feedback specs serialize");
    let hash = Sha256::digest(&json);
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub stable: bool,
    pub offending: Vec<MultiIndex>,
}

/// Hurwitz test per wavenumber.
///
/// Consensus: `Re a^_n < 0` for `n != 0` and `Re a^_0 <= 0`. Vehicular:
/// `g^_n < 0` and `f^_n < 0` for `n != 0`; the mean mode is exempt.
pub fn stability_check(spec: &FeedbackSpec) -> Result<StabilityReport> {
    let shape = spec.shape();
    let mut offending = Vec::new();
    match spec {
        FeedbackSpec::Consensus { a } => {
            let re = symbol_of_stencil(a).real_parts();
            let tol = STABILITY_TOL * re.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if re[0] > tol {
                offending.push(shape.zero());
            }
            for (pos, v) in re.iter().enumerate().skip(1) {
                if *v >= -tol {
                    offending.push(shape.from_linear(pos));
                }
            }
        }
        FeedbackSpec::Vehicular(v) => {
            let sym = vehicular_symbols(v)?;
            let scale = sym
                .position
                .iter()
                .chain(&sym.velocity)
                .fold(1.0f64, |m, x| m.max(x.abs()));
            let tol = STABILITY_TOL * scale;
            for (pos, (g, f)) in sym.position.iter().zip(&sym.velocity).enumerate().skip(1) {
                if *g >= -tol || *f >= -tol {
                    offending.push(shape.from_linear(pos));
                }
            }
        }
    }
    Ok(StabilityReport {
        stable: offending.is_empty(),
        offending,
    })
}

fn require_stable(spec: &FeedbackSpec) -> Result<()> {
    let report = stability_check(spec)?;
    if report.stable {
        Ok(())
    } else {
        Err(CoherenceError::Unstable {
            offending: report.offending,
        })
    }
}

/// `|c^_n|^2` for the output operator of `kind`, one value per wavenumber.
///
/// For the local error this is `-O^_n / (2 d beta_ref)` with `O^` evaluated
/// at `beta_ref`, which does not depend on `beta_ref`.
pub fn output_symbol_squared(kind: MeasureKind, shape: TorusShape, beta_ref: f64) -> Result<Vec<f64>> {
    kind.check_shape(shape)?;
    let d = shape.dim() as f64;
    let values = shape
        .sites_iter()
        .map(|n| match kind {
            MeasureKind::LocalError => -standard_symbol(shape, beta_ref, &n) / (2.0 * d * beta_ref),
            MeasureKind::LongRangeDeviation => match n.coordinate_sum_parity() {
                Parity::Odd => 4.0,
                Parity::Even => 0.0,
            },
            MeasureKind::DeviationFromAverage => {
                if n.is_zero() {
                    0.0
                } else {
                    1.0
                }
            }
            MeasureKind::ControlEffort => 0.0,
        })
        .collect();
    if kind == MeasureKind::ControlEffort {
        return Err(CoherenceError::Unsupported(
            "control effort has no output symbol independent of the feedback".into(),
        ));
    }
    Ok(values)
}

/// Variance of any measure, dispatching on the spec kind.
pub fn variance(spec: &FeedbackSpec, kind: MeasureKind) -> Result<VarianceReport> {
    match spec {
        FeedbackSpec::Consensus { .. } => consensus_variance(spec, kind),
        FeedbackSpec::Vehicular(_) => vehicular_variance(spec, kind),
    }
}

pub fn consensus_variance(spec: &FeedbackSpec, kind: MeasureKind) -> Result<VarianceReport> {
    let FeedbackSpec::Consensus { a } = spec else {
        return Err(CoherenceError::Unsupported("expected a consensus spec".into()));
    };
    if kind == MeasureKind::ControlEffort {
        let per_site = control_effort(spec)?;
        let total = per_site * spec.shape().sites() as f64;
        return Ok(VarianceReport::new(kind, total, spec, "1/2 sum_{n!=0} (-Re a^_n)"));
    }
    kind.check_shape(spec.shape())?;
    require_stable(spec)?;
    let c2 = output_symbol_squared(kind, spec.shape(), 1.0)?;
    let re = symbol_of_stencil(a).real_parts();
    let sum = compensated(
        c2.iter()
            .zip(&re)
            .skip(1)
            .filter(|(c, _)| **c != 0.0)
            .map(|(c, r)| c / r),
    );
    Ok(VarianceReport::new(
        kind,
        -0.5 * sum,
        spec,
        "-1/2 sum_{n!=0} |c^_n|^2 / Re(a^_n)",
    ))
}

pub fn vehicular_variance(spec: &FeedbackSpec, kind: MeasureKind) -> Result<VarianceReport> {
    let FeedbackSpec::Vehicular(v) = spec else {
        return Err(CoherenceError::Unsupported("expected a vehicular spec".into()));
    };
    let shape = spec.shape();
    if kind == MeasureKind::ControlEffort {
        let per_site = control_effort(spec)?;
        return Ok(VarianceReport::new(
            kind,
            per_site * shape.sites() as f64,
            spec,
            "d/2 sum_{n!=0} (|f^_n| + |g^_n|/|f^_n|)",
        ));
    }
    kind.check_shape(shape)?;
    require_stable(spec)?;
    let c2 = output_symbol_squared(kind, shape, 1.0)?;
    let sym = vehicular_symbols(v)?;
    let sum = compensated(
        c2.iter()
            .zip(sym.position.iter().zip(&sym.velocity))
            .skip(1)
            .filter(|(c, _)| **c != 0.0)
            .map(|(c, (g, f))| c / (g * f)),
    );
    Ok(VarianceReport::new(
        kind,
        0.5 * shape.dim() as f64 * sum,
        spec,
        "d/2 sum_{n!=0} |c^_n|^2 / (g^_n f^_n)",
    ))
}

/// Local error in the beta-normalized form, `1/(4 d beta) sum O^_n / Re a^_n`
/// (consensus) or `-1/(4 beta) sum O^_n / (g^_n f^_n)` (vehicular), with the
/// standard symbol `O^` taken at `beta`.
pub fn local_error_beta_normalized(spec: &FeedbackSpec, beta: f64) -> Result<f64> {
    require_stable(spec)?;
    let shape = spec.shape();
    let o: Vec<f64> = shape.sites_iter().map(|n| standard_symbol(shape, beta, &n)).collect();
    let d = shape.dim() as f64;
    Ok(match spec {
        FeedbackSpec::Consensus { a } => {
            let re = symbol_of_stencil(a).real_parts();
            compensated(o.iter().zip(&re).skip(1).map(|(o, r)| o / r)) / (4.0 * d * beta)
        }
        FeedbackSpec::Vehicular(v) => {
            let sym = vehicular_symbols(v)?;
            -compensated(
                o.iter()
                    .zip(sym.position.iter().zip(&sym.velocity))
                    .skip(1)
                    .map(|(o, (g, f))| o / (g * f)),
            ) / (4.0 * beta)
        }
    })
}

/// Per-site stationary control variance `E{u_k^2}` (n = 0 excluded).
pub fn control_effort(spec: &FeedbackSpec) -> Result<f64> {
    require_stable(spec)?;
    let shape = spec.shape();
    let m = shape.sites() as f64;
    match spec {
        FeedbackSpec::Consensus { a } => {
            let re = symbol_of_stencil(a).real_parts();
            Ok(compensated(re.iter().skip(1).map(|r| -r)) / (2.0 * m))
        }
        FeedbackSpec::Vehicular(v) => {
            let sym = vehicular_symbols(v)?;
            let mut acc = CompensatedSum::new();
            for (g, f) in sym.position.iter().zip(&sym.velocity).skip(1) {
                if *f == 0.0 {
                    return Err(CoherenceError::Unsupported("zero velocity symbol".into()));
                }
                acc += f.abs();
                acc += g.abs() / f.abs();
            }
            Ok(shape.dim() as f64 * acc.value() / (2.0 * m))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            holds: lhs <= rhs * (1.0 + 1e-12) + 1e-300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffortBoundReport {
    pub effort: f64,
    pub checks: Vec<BoundCheck>,
}

impl EffortBoundReport {
    pub fn holds(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

/// Feedback array magnitudes bounded by the control effort.
///
/// Consensus: `|a|_inf <= 2 E{u^2}`. Vehicular: `|f|_inf <= (2/d) E{u^2}` and
/// `|g|_inf <= (2 (2q)^d / d) |f|_inf E{u^2}`, with `f`, `g` the full arrays
/// including absolute terms and friction.
pub fn effort_bound_check(spec: &FeedbackSpec) -> Result<EffortBoundReport> {
    let effort = control_effort(spec)?;
    let checks = match spec {
        FeedbackSpec::Consensus { a } => {
            vec![BoundCheck::new("|a|_inf <= 2 E{u^2}", a.norm_inf(), 2.0 * effort)]
        }
        FeedbackSpec::Vehicular(v) => {
            let d = spec.shape().dim() as f64;
            let q = spec.radius() as f64;
            let f = v.velocity_array()?.norm_inf();
            let g = v.position_array()?.norm_inf();
            vec![
                BoundCheck::new("|f|_inf <= (2/d) E{u^2}", f, 2.0 / d * effort),
                BoundCheck::new(
                    "|g|_inf <= (2 (2q)^d / d) |f|_inf E{u^2}",
                    g,
                    2.0 * (2.0 * q).powf(d) / d * f * effort,
                ),
            ]
        }
    };
    Ok(EffortBoundReport { effort, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stencil::Stencil;
    use proptest::prelude::*;

    fn ring(n: usize) -> TorusShape {
        TorusShape::new(1, n).unwrap()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn stability_examples() {
        let ok = FeedbackSpec::standard_consensus(TorusShape::new(2, 5).unwrap(), 0.3).unwrap();
        assert!(stability_check(&ok).unwrap().stable);

        let flipped = FeedbackSpec::standard_consensus(ring(6), -1.0).unwrap();
        let report = stability_check(&flipped).unwrap();
        assert!(!report.stable);
        assert_eq!(report.offending.len(), 5);

        let no_damping = FeedbackSpec::vehicular(
            crate::stencil::standard_consensus_stencil(ring(6), 1.0).unwrap(),
            Stencil::zero(ring(6)),
            0.0,
            0.0,
            0.0,
        )
        .unwrap();
        assert!(!stability_check(&no_damping).unwrap().stable);
        assert!(matches!(
            vehicular_variance(&no_damping, MeasureKind::DeviationFromAverage),
            Err(CoherenceError::Unstable { .. })
        ));
    }

    #[test]
    fn output_symbols() {
        let s = ring(4);
        assert_eq!(
            output_symbol_squared(MeasureKind::DeviationFromAverage, s, 1.0).unwrap(),
            vec![0.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(
            output_symbol_squared(MeasureKind::LongRangeDeviation, s, 1.0).unwrap(),
            vec![0.0, 4.0, 0.0, 4.0]
        );
        let local = output_symbol_squared(MeasureKind::LocalError, s, 1.0).unwrap();
        for (got, want) in local.iter().zip([0.0, 1.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let local_b = output_symbol_squared(MeasureKind::LocalError, s, 3.7).unwrap();
        for (a, b) in local.iter().zip(&local_b) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            output_symbol_squared(MeasureKind::LongRangeDeviation, ring(5), 1.0),
            Err(CoherenceError::Parity(5))
        ));
    }

    #[test]
    fn consensus_values_d1_n4() {
        let spec = FeedbackSpec::standard_consensus(ring(4), 1.0).unwrap();
        let local = consensus_variance(&spec, MeasureKind::LocalError).unwrap();
        assert!(close(local.total, 0.75, 1e-12));
        assert_eq!(local.per_site, local.total / 4.0);
        assert!(local.convention.is_some());
        let dav = consensus_variance(&spec, MeasureKind::DeviationFromAverage).unwrap();
        assert!(close(dav.total, 0.625, 1e-12));
        let lrd = consensus_variance(&spec, MeasureKind::LongRangeDeviation).unwrap();
        assert!(close(lrd.total, 2.0, 1e-12));
        assert!(close(local_error_beta_normalized(&spec, 1.0).unwrap(), 0.75, 1e-12));
    }

    #[test]
    fn consensus_local_error_closed_form() {
        for (d, n, beta) in [(1, 9, 0.5), (2, 5, 2.0), (3, 4, 1.0)] {
            let shape = TorusShape::new(d, n).unwrap();
            let spec = FeedbackSpec::standard_consensus(shape, beta).unwrap();
            let v = consensus_variance(&spec, MeasureKind::LocalError).unwrap();
            let expect = (shape.sites() as f64 - 1.0) / (4.0 * d as f64 * beta);
            assert!(close(v.total, expect, 1e-12), "{d} {n}");
            assert!(close(local_error_beta_normalized(&spec, beta).unwrap(), expect, 1e-12));
        }
    }

    #[test]
    fn vehicular_values_d1_n4() {
        let rr = FeedbackSpec::standard_vehicular(ring(4), 1.0, 0.0, 0.0, 0.0).unwrap();
        let dav = vehicular_variance(&rr, MeasureKind::DeviationFromAverage).unwrap();
        assert!(close(dav.total, 0.28125, 1e-12));

        let abs_only =
            FeedbackSpec::vehicular(Stencil::zero(ring(4)), Stencil::zero(ring(4)), -1.0, -1.0, 0.0).unwrap();
        let dav = vehicular_variance(&abs_only, MeasureKind::DeviationFromAverage).unwrap();
        assert!(close(dav.total, 0.5 * 3.0, 1e-12));
    }

    #[test]
    fn friction_acts_as_absolute_velocity_feedback() {
        let shape = TorusShape::new(2, 6).unwrap();
        let with_mu = FeedbackSpec::standard_vehicular(shape, 1.0, 0.0, 0.0, 0.4).unwrap();
        let with_fo = FeedbackSpec::standard_vehicular(shape, 1.0, 0.0, -0.4, 0.0).unwrap();
        for kind in MeasureKind::OUTPUTS {
            let a = vehicular_variance(&with_mu, kind).unwrap().total;
            let b = vehicular_variance(&with_fo, kind).unwrap().total;
            assert!(close(a, b, 1e-14), "{kind:?}");
        }
    }

    #[test]
    fn effort_values() {
        // brute-force oracle: sum the standard symbol from its closed form
        for (d, n, beta) in [(1, 4, 1.0), (2, 5, 0.5), (3, 4, 2.0)] {
            let shape = TorusShape::new(d, n).unwrap();
            let spec = FeedbackSpec::standard_consensus(shape, beta).unwrap();
            let brute: f64 = shape
                .sites_iter()
                .map(|w| -standard_symbol(shape, beta, &w))
                .sum::<f64>()
                / (2.0 * shape.sites() as f64);
            let effort = control_effort(&spec).unwrap();
            assert!(close(effort, brute, 1e-12));
            assert!(close(effort, beta * d as f64, 1e-12));
            let doubled = FeedbackSpec::standard_consensus(shape, 2.0 * beta).unwrap();
            assert!(close(control_effort(&doubled).unwrap(), 2.0 * effort, 1e-12));
        }
    }

    #[test]
    fn vehicular_effort_rel_rel() {
        // per wavenumber the effort is (|f| + |g|/|f|) / 2 with g = f = O^,
        // so the per-site value is beta d^2 + d (M - 1) / (2M)
        for (d, n, beta) in [(1, 4, 1.0), (2, 5, 0.5), (1, 9, 2.0)] {
            let shape = TorusShape::new(d, n).unwrap();
            let m = shape.sites() as f64;
            let spec = FeedbackSpec::standard_vehicular(shape, beta, 0.0, 0.0, 0.0).unwrap();
            let brute: f64 = shape
                .sites_iter()
                .skip(1)
                .map(|w| {
                    let o = standard_symbol(shape, beta, &w).abs();
                    o + 1.0
                })
                .sum::<f64>()
                * d as f64
                / (2.0 * m);
            let effort = control_effort(&spec).unwrap();
            assert!(close(effort, brute, 1e-12));
            let df = d as f64;
            assert!(close(effort, beta * df * df + df * (m - 1.0) / (2.0 * m), 1e-12));
        }
    }

    #[test]
    fn effort_bound_standard_is_tight() {
        let spec = FeedbackSpec::standard_consensus(ring(8), 1.0).unwrap();
        let report = effort_bound_check(&spec).unwrap();
        assert!(report.holds());
        assert!(close(report.checks[0].lhs, 2.0, 1e-15));
        assert!(close(report.checks[0].rhs, 2.0, 1e-12));

        let scaled = FeedbackSpec::standard_consensus(ring(8), 5.0).unwrap();
        let r2 = effort_bound_check(&scaled).unwrap();
        assert!(close(r2.checks[0].lhs / r2.effort, report.checks[0].lhs / report.effort, 1e-12));

        let veh = FeedbackSpec::standard_vehicular(ring(8), 1.0, 0.0, 0.0, 0.0).unwrap();
        assert!(effort_bound_check(&veh).unwrap().holds());
    }

    #[test]
    fn report_json_round_trip() {
        let spec = FeedbackSpec::standard_consensus(ring(4), 1.0).unwrap();
        let r = consensus_variance(&spec, MeasureKind::DeviationFromAverage).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["kind"], "dav");
        assert_eq!(json["shape"]["N"], 4);
        assert_eq!(r.spec_digest.len(), 16);
        let back: VarianceReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }

    fn random_symmetric(shape: TorusShape, weights: &[f64]) -> Stencil {
        let d = shape.dim();
        let mut entries = Vec::new();
        let mut center = 0.0;
        for (i, w) in weights.iter().enumerate() {
            let mut off = vec![0i64; d];
            off[i % d] = 1 + (i / d) as i64 % 2;
            if i >= 2 * d && d > 1 {
                off[(i + 1) % d] = 1;
            }
            let neg: Vec<i64> = off.iter().map(|c| -c).collect();
            entries.push((off, *w));
            entries.push((neg, *w));
            center -= 2.0 * w;
        }
        entries.push((vec![0; d], center));
        Stencil::from_entries(shape, &entries).unwrap()
    }

    proptest! {
        #[test]
        fn lrd_at_most_four_dav(
            weights in proptest::collection::vec(0.05f64..2.0, 2..5),
            d in 1usize..3,
            half in 3usize..6,
            g_o in -1.0f64..0.0,
            f_o in -1.0f64..0.0,
        ) {
            let shape = TorusShape::new(d, 2 * half).unwrap();
            let a = random_symmetric(shape, &weights);
            let cons = FeedbackSpec::consensus(a.clone());
            let lrd = consensus_variance(&cons, MeasureKind::LongRangeDeviation).unwrap().total;
            let dav = consensus_variance(&cons, MeasureKind::DeviationFromAverage).unwrap().total;
            prop_assert!(lrd <= 4.0 * dav * (1.0 + 1e-12));

            let veh = FeedbackSpec::vehicular(a.clone(), a, g_o, f_o, 0.0).unwrap();
            let lrd = vehicular_variance(&veh, MeasureKind::LongRangeDeviation).unwrap().total;
            let dav = vehicular_variance(&veh, MeasureKind::DeviationFromAverage).unwrap().total;
            prop_assert!(lrd <= 4.0 * dav * (1.0 + 1e-12));
        }

        #[test]
        fn summands_nonnegative(weights in proptest::collection::vec(0.05f64..2.0, 2..4), n in 3usize..12) {
            let shape = ring(n);
            let a = random_symmetric(shape, &weights);
            let re = symbol_of_stencil(&a).real_parts();
            for r in re.iter().skip(1) {
                prop_assert!(-0.5 / r >= 0.0);
            }
            let spec = FeedbackSpec::consensus(a);
            prop_assert!(consensus_variance(&spec, MeasureKind::LocalError).unwrap().total >= 0.0);
        }
    }
}
