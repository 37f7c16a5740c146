//! Run configuration: one JSON document holding the feedback spec and the
//! per-command settings.

use std::path::Path;

use coherence::sim::AccordionParams;
use coherence::{FeedbackSpec, MeasureKind, TorusShape};
use serde::Deserialize;

use crate::failure::Failure;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub spec: Option<FeedbackSpec>,
    /// Shorthand for the standard algorithms, used when `spec` is absent.
    #[serde(default)]
    pub standard: Option<StandardSpec>,
    #[serde(default)]
    pub measures: Vec<MeasureKind>,
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub floor: Option<usize>,
    #[serde(default)]
    pub effort_target: Option<f64>,
    #[serde(default)]
    pub simulation: Option<SimSettings>,
    #[serde(default)]
    pub experiment: Option<Experiment>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StandardSpec {
    Consensus {
        d: usize,
        #[serde(rename = "N")]
        n: usize,
        beta: f64,
    },
    Vehicular {
        d: usize,
        #[serde(rename = "N")]
        n: usize,
        beta: f64,
        #[serde(default)]
        g_o: f64,
        #[serde(default)]
        f_o: f64,
        #[serde(default)]
        mu: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub dt: f64,
    pub steps: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one")]
    pub replicas: usize,
    #[serde(default)]
    pub record_stride: Option<usize>,
    #[serde(default = "one")]
    pub sample_stride: usize,
    #[serde(default)]
    pub noise_mask: Option<Vec<bool>>,
    #[serde(default)]
    pub initial_positions: Option<Vec<f64>>,
    #[serde(default)]
    pub track_spectrum: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Accordion {
        #[serde(flatten)]
        params: AccordionOverrides,
    },
    StringStability {
        omegas: Vec<f64>,
        #[serde(default = "unit")]
        amplitude: f64,
    },
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct AccordionOverrides {
    pub dt: Option<f64>,
    pub burn_in_time: Option<f64>,
    pub horizon: Option<f64>,
    pub replicas: Option<usize>,
    pub sample_stride: Option<usize>,
    pub record_stride: Option<usize>,
    pub spacing: Option<f64>,
}

impl AccordionOverrides {
    pub fn resolve(&self, seed: u64) -> AccordionParams {
        let base = AccordionParams::default();
        AccordionParams {
            dt: self.dt.unwrap_or(base.dt),
            burn_in_time: self.burn_in_time.unwrap_or(base.burn_in_time),
            horizon: self.horizon.unwrap_or(base.horizon),
            replicas: self.replicas.unwrap_or(base.replicas),
            seed,
            sample_stride: self.sample_stride.unwrap_or(base.sample_stride),
            record_stride: self.record_stride.unwrap_or(base.record_stride),
            spacing: self.spacing.unwrap_or(base.spacing),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))
    }

    /// The feedback spec, checked for structural validity.
    pub fn feedback(&self) -> Result<FeedbackSpec, Failure> {
        let spec = match (&self.spec, &self.standard) {
            (Some(spec), None) => spec.clone(),
            (None, Some(std)) => std.build()?,
            (Some(_), Some(_)) => return Err(Failure::config("give either `spec` or `standard`, not both")),
            (None, None) => return Err(Failure::config("config needs a `spec` or `standard` entry")),
        };
        let report = spec.validate_structure();
        if !report.passed() {
            let failed: Vec<String> = report
                .failures()
                .iter()
                .map(|c| format!("{} ({})", c.name, c.detail))
                .collect();
            return Err(Failure::config(format!("structural validation failed: {}", failed.join("; "))));
        }
        Ok(spec)
    }
}

impl StandardSpec {
    fn build(&self) -> Result<FeedbackSpec, Failure> {
        Ok(match *self {
            StandardSpec::Consensus { d, n, beta } => FeedbackSpec::standard_consensus(TorusShape::new(d, n)?, beta)?,
            StandardSpec::Vehicular {
                d,
                n,
                beta,
                g_o,
                f_o,
                mu,
            } => FeedbackSpec::standard_vehicular(TorusShape::new(d, n)?, beta, g_o, f_o, mu)?,
        })
    }
}

pub fn parse_measure(text: &str) -> Result<MeasureKind, String> {
    MeasureKind::parse(text).ok_or_else(|| format!("unknown measure {text:?}; expected local, lrd, dav or effort"))
}
