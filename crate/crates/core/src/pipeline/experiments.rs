use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aggregation::InitScheme;
use crate::decimation::MeshHierarchy;
use crate::error::{Error, Result};
use crate::mesh::MeshSequenceDataset;
use crate::model::{AggregationKind, Autoencoder, ModelConfig};
use crate::scalar::Real;

use super::metrics::evaluate;
use super::train::{train, TrainConfig};

/// Parameters accepted by [`ablation_sweep`].
pub const SWEEP_PARAMETERS: [&str; 5] = ["c", "k_down", "k_up", "w_a_init", "init_scheme"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Hierarchy depth and per-level reduction used when building from a template.
    pub levels: usize,
    pub factor: usize,
    /// Multiplies reported distances (e.g. 1000 for metres to millimetres).
    pub eval_scale: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            levels: 4,
            factor: 4,
            eval_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full,
    Average,
    Qem,
    Variant,
    AttentionNoFusion,
    Attention,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Full,
        Method::Average,
        Method::Qem,
        Method::Variant,
        Method::AttentionNoFusion,
        Method::Attention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Average => "average",
            Method::Qem => "qem",
            Method::Variant => "variant",
            Method::AttentionNoFusion => "attention_no_fusion",
            Method::Attention => "attention",
        }
    }

    /// `base` with this method's aggregation in both encoder and decoder.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let kind = match self {
            Method::Full => AggregationKind::Full,
            Method::Average => AggregationKind::Average,
            Method::Qem => AggregationKind::Qem,
            Method::Variant => AggregationKind::Variant,
            Method::AttentionNoFusion | Method::Attention => AggregationKind::Attention,
        };
        let mut cfg = base.clone().with_aggregation(kind);
        match self {
            Method::AttentionNoFusion => cfg.fusion = false,
            Method::Attention => cfg.fusion = true,
            _ => {}
        }
        cfg
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    /// Method name or `parameter=value`.
    pub label: String,
    pub seed: u64,
    pub inference_params: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub test_mean: f64,
    pub test_median: f64,
    pub test_std: f64,
}

/// Builds, trains and evaluates one model on the test split.
pub fn run_experiment<T: Real>(
    label: &str,
    dataset: &MeshSequenceDataset<T>,
    hierarchy: &Arc<MeshHierarchy<T>>,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    eval_scale: f64,
) -> Result<RunResult> {
    let seed = model_cfg.seed;
    let mut model = Autoencoder::build(model_cfg, Arc::clone(hierarchy))?;
    let report = train(&mut model, dataset, train_cfg, None)?;
    let metrics = evaluate(&model, dataset, "test", eval_scale)?;
    log::info!("{label} seed {seed}: loss {:.5} test {:.5}", report.final_loss, metrics.mean);
    Ok(RunResult {
        label: label.to_string(),
        seed,
        inference_params: model.count_parameters(true),
        initial_loss: report.initial_loss,
        final_loss: report.final_loss,
        test_mean: metrics.mean,
        test_median: metrics.median,
        test_std: metrics.std,
    })
}

/// Every method under the same hierarchy, budget and seeds; results ordered seed-major.
pub fn compare_aggregators<T: Real>(
    dataset: &MeshSequenceDataset<T>,
    hierarchy: &Arc<MeshHierarchy<T>>,
    base: &ExperimentConfig,
    methods: &[Method],
    seeds: &[u64],
) -> Result<Vec<RunResult>> {
    let mut out = Vec::with_capacity(methods.len() * seeds.len());
    for &seed in seeds {
        for &m in methods {
            let mut cfg = m.apply(&base.model);
            cfg.seed = seed;
            let train_cfg = TrainConfig { seed, ..base.train.clone() };
            out.push(run_experiment(m.as_str(), dataset, hierarchy, cfg, &train_cfg, base.eval_scale)?);
        }
    }
    Ok(out)
}

/// Values swept when none are given.
pub fn default_sweep_values(parameter: &str) -> Result<Vec<String>> {
    let v: &[&str] = match parameter {
        "c" => &["3", "9", "21", "33"],
        "k_down" => &["1", "2", "4"],
        "k_up" => &["4", "16", "32"],
        "w_a_init" => &["0", "0.2", "0.5", "0.8"],
        "init_scheme" => &["normal", "uniform", "precomputed"],
        other => return Err(unknown_parameter(other)),
    };
    Ok(v.iter().map(|s| s.to_string()).collect())
}

fn unknown_parameter(p: &str) -> Error {
    Error::Config(format!("unknown sweep parameter {p}; expected one of {}", SWEEP_PARAMETERS.join(", ")))
}

fn parse_value<V: FromStr>(parameter: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {parameter}")))
}

fn set_parameter(cfg: &mut ModelConfig, parameter: &str, value: &str) -> Result<()> {
    match parameter {
        "c" => cfg.c = parse_value(parameter, value)?,
        "k_down" => cfg.k_down = parse_value(parameter, value)?,
        "k_up" => cfg.k_up = parse_value(parameter, value)?,
        "w_a_init" => cfg.w_a_init = parse_value(parameter, value)?,
        "init_scheme" => cfg.init_scheme = value.parse::<InitScheme>()?,
        other => return Err(unknown_parameter(other)),
    }
    Ok(())
}

/// Fused attention model trained once per value of `parameter`, everything else fixed.
pub fn ablation_sweep<T: Real>(
    dataset: &MeshSequenceDataset<T>,
    hierarchy: &Arc<MeshHierarchy<T>>,
    base: &ExperimentConfig,
    parameter: &str,
    values: &[String],
) -> Result<Vec<RunResult>> {
    if !SWEEP_PARAMETERS.contains(&parameter) {
        return Err(unknown_parameter(parameter));
    }
    let base_model = Method::Attention.apply(&base.model);
    let mut out = Vec::with_capacity(values.len());
    for value in values {
        let mut cfg = base_model.clone();
        set_parameter(&mut cfg, parameter, value)?;
        cfg.validate()?;
        let label = format!("{parameter}={value}");
        out.push(run_experiment(&label, dataset, hierarchy, cfg, &base.train, base.eval_scale)?);
    }
    Ok(out)
}

pub fn write_results_csv<W: Write>(results: &[RunResult], mut w: W) -> Result<()> {
    writeln!(w, "label,seed,inference_params,initial_loss,final_loss,test_mean,test_median,test_std")?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.label, r.seed, r.inference_params, r.initial_loss, r.final_loss, r.test_mean, r.test_median, r.test_std
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_reference_settings() {
        assert!(default_sweep_values("c").unwrap().contains(&"21".to_string()));
        assert!(default_sweep_values("w_a_init").unwrap().contains(&"0.2".to_string()));
        assert_eq!(default_sweep_values("init_scheme").unwrap(), ["normal", "uniform", "precomputed"]);
        for p in SWEEP_PARAMETERS {
            let mut cfg = ModelConfig::default();
            for v in default_sweep_values(p).unwrap() {
                set_parameter(&mut cfg, p, &v).unwrap();
            }
        }
    }

    #[test]
    fn unknown_parameter_is_config_error() {
        assert!(matches!(default_sweep_values("depth"), Err(Error::Config(_))));
        let mut cfg = ModelConfig::default();
        assert!(matches!(set_parameter(&mut cfg, "depth", "3"), Err(Error::Config(_))));
        assert!(matches!(set_parameter(&mut cfg, "c", "x"), Err(Error::Config(_))));
    }

    #[test]
    fn methods_round_trip_and_set_fusion() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!(!Method::AttentionNoFusion.apply(&ModelConfig::default()).fusion);
        assert_eq!(Method::Variant.apply(&ModelConfig::default()).decoder_aggregation, AggregationKind::Variant);
    }
}
