//! Flat key=value experiment configuration with strict unknown-key
//! rejection.
//!
//! Recognized keys (one per line, `#` starts a comment):
//!
//! ```text
//! k, n, d, layers          problem sizes (required)
//! activation               linear | relu (required)
//! lambda_h1                feature penalty (required)
//! lambda_w                 weight penalty for all layers (required)
//! lambda_w<i>              per-layer override, 1-based
//! lr, max_epochs           optimizer (required)
//! grad_tol                 stop when the gradient norm reaches this (default 1e-10)
//! eval_every               log cadence in epochs (default 1000)
//! init_std                 auto (= 1/sqrt(d)) or a number (default auto)
//! seed                     RNG seed (default 0)
//! probe_layers             comma list of layers to analyze (required)
//! analyses                 comma list or `all` (default all)
//! snapshot_epochs          comma list of checkpoint epochs (default none)
//! output_dir               where to write (default `out`)
//! outlier_tau_rel          bulk/outlier rule (default 1e-3)
//! outlier_abs_floor        bulk/outlier rule (default 1e-12)
//! tol_scale                multiplies verification tolerances (default 1)
//! ```

use super::ExperimentError;
use crate::analysis::OutlierRule;
use crate::model::{Activation, HyperConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Analysis {
    Hessian,
    Knockout,
    Align,
    GradAlign,
    WeightGram,
    GradCov,
    Backprop,
    FeatureGram,
    Frames,
    DncMetrics,
}

impl Analysis {
    pub const ALL: [Analysis; 10] = [
        Analysis::Hessian,
        Analysis::Knockout,
        Analysis::Align,
        Analysis::GradAlign,
        Analysis::WeightGram,
        Analysis::GradCov,
        Analysis::Backprop,
        Analysis::FeatureGram,
        Analysis::Frames,
        Analysis::DncMetrics,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Analysis::Hessian => "hessian",
            Analysis::Knockout => "knockout",
            Analysis::Align => "align",
            Analysis::GradAlign => "grad_align",
            Analysis::WeightGram => "weight_gram",
            Analysis::GradCov => "grad_cov",
            Analysis::Backprop => "backprop",
            Analysis::FeatureGram => "feature_gram",
            Analysis::Frames => "frames",
            Analysis::DncMetrics => "dnc_metrics",
        }
    }

    fn parse(s: &str) -> Result<Analysis, ExperimentError> {
        Analysis::ALL
            .iter()
            .find(|a| a.name() == s)
            .copied()
            .ok_or_else(|| ExperimentError::InvalidValue {
                key: "analyses".into(),
                message: format!("unknown analysis `{s}`"),
            })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub hyper: HyperConfig,
    pub probe_layers: Vec<usize>,
    pub analyses: Vec<Analysis>,
    pub snapshot_epochs: Vec<usize>,
    pub output_dir: PathBuf,
    pub outlier_rule: OutlierRule,
    pub tol_scale: f64,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ExperimentError::Malformed {
                    line: lineno + 1,
                    message: format!("expected key=value, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if map.insert(key.clone(), value).is_some() {
                return Err(ExperimentError::Malformed {
                    line: lineno + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self, ExperimentError> {
        fn take(map: &mut BTreeMap<String, String>, key: &str) -> Option<String> {
            map.remove(key)
        }
        fn require(map: &mut BTreeMap<String, String>, key: &str) -> Result<String, ExperimentError> {
            take(map, key).ok_or_else(|| ExperimentError::MissingKey { key: key.into() })
        }
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ExperimentError> {
            value.parse().map_err(|_| ExperimentError::InvalidValue {
                key: key.into(),
                message: format!("cannot parse `{value}`"),
            })
        }

        let k: usize = num("k", &require(&mut map, "k")?)?;
        let n: usize = num("n", &require(&mut map, "n")?)?;
        let d: usize = num("d", &require(&mut map, "d")?)?;
        let layers: usize = num("layers", &require(&mut map, "layers")?)?;
        let activation = match require(&mut map, "activation")?.as_str() {
            "linear" => Activation::Linear,
            "relu" => Activation::Relu,
            other => {
                return Err(ExperimentError::InvalidValue {
                    key: "activation".into(),
                    message: format!("expected linear|relu, got `{other}`"),
                })
            }
        };
        let lambda_h1: f64 = num("lambda_h1", &require(&mut map, "lambda_h1")?)?;
        let lambda_base: f64 = num("lambda_w", &require(&mut map, "lambda_w")?)?;
        let mut lambda_w = vec![lambda_base; layers];
        for l in 1..=layers {
            let key = format!("lambda_w{l}");
            if let Some(v) = take(&mut map, &key) {
                lambda_w[l - 1] = num(&key, &v)?;
            }
        }
        let lr: f64 = num("lr", &require(&mut map, "lr")?)?;
        let max_epochs: usize = num("max_epochs", &require(&mut map, "max_epochs")?)?;
        let grad_tol: f64 = match take(&mut map, "grad_tol") {
            Some(v) => num("grad_tol", &v)?,
            None => 1e-10,
        };
        let eval_every: usize = match take(&mut map, "eval_every") {
            Some(v) => num("eval_every", &v)?,
            None => 1000,
        };
        let init_std = match take(&mut map, "init_std") {
            None => 1.0 / (d as f64).sqrt(),
            Some(v) if v == "auto" => 1.0 / (d as f64).sqrt(),
            Some(v) => num("init_std", &v)?,
        };
        let seed: u64 = match take(&mut map, "seed") {
            Some(v) => num("seed", &v)?,
            None => 0,
        };

        let probe_layers: Vec<usize> = require(&mut map, "probe_layers")?
            .split(',')
            .map(|s| num("probe_layers", s.trim()))
            .collect::<Result<_, _>>()?;
        if probe_layers.is_empty() || probe_layers.iter().any(|l| *l < 1 || *l > layers) {
            return Err(ExperimentError::InvalidValue {
                key: "probe_layers".into(),
                message: format!("layers must lie in 1..={layers}"),
            });
        }
        let analyses: Vec<Analysis> = match take(&mut map, "analyses") {
            None => Analysis::ALL.to_vec(),
            Some(v) if v == "all" => Analysis::ALL.to_vec(),
            Some(v) => {
                let mut list: Vec<Analysis> = v
                    .split(',')
                    .map(|s| Analysis::parse(s.trim()))
                    .collect::<Result<_, _>>()?;
                list.sort();
                list.dedup();
                list
            }
        };
        let mut snapshot_epochs: Vec<usize> = match take(&mut map, "snapshot_epochs") {
            None => Vec::new(),
            Some(v) if v.trim().is_empty() => Vec::new(),
            Some(v) => v
                .split(',')
                .map(|s| num("snapshot_epochs", s.trim()))
                .collect::<Result<_, _>>()?,
        };
        snapshot_epochs.sort_unstable();
        snapshot_epochs.dedup();
        let output_dir = PathBuf::from(take(&mut map, "output_dir").unwrap_or_else(|| "out".into()));
        let tau_rel = match take(&mut map, "outlier_tau_rel") {
            Some(v) => num("outlier_tau_rel", &v)?,
            None => OutlierRule::default().tau_rel,
        };
        let abs_floor = match take(&mut map, "outlier_abs_floor") {
            Some(v) => num("outlier_abs_floor", &v)?,
            None => OutlierRule::default().abs_floor,
        };
        let tol_scale: f64 = match take(&mut map, "tol_scale") {
            Some(v) => num("tol_scale", &v)?,
            None => 1.0,
        };

        if let Some((key, _)) = map.into_iter().next() {
            return Err(ExperimentError::UnknownKey { key });
        }

        let hyper = HyperConfig {
            k,
            n,
            d,
            layers,
            lambda_h1,
            lambda_w,
            activation,
            lr,
            max_epochs,
            grad_tol,
            eval_every,
            init_std,
            seed,
        };
        hyper.validate()?;
        Ok(ExperimentConfig {
            hyper,
            probe_layers,
            analyses,
            snapshot_epochs,
            output_dir,
            outlier_rule: OutlierRule {
                tau_rel,
                abs_floor,
            },
            tol_scale,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Canonical serialization used for config echoes and hashing. Leaves
    /// `output_dir` out so relocated runs produce identical artifacts.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let h = &self.hyper;
        let _ = writeln!(s, "k={}", h.k);
        let _ = writeln!(s, "n={}", h.n);
        let _ = writeln!(s, "d={}", h.d);
        let _ = writeln!(s, "layers={}", h.layers);
        let _ = writeln!(s, "activation={}", h.activation.name());
        let _ = writeln!(s, "lambda_h1={}", h.lambda_h1);
        for (i, lam) in h.lambda_w.iter().enumerate() {
            let _ = writeln!(s, "lambda_w{}={}", i + 1, lam);
        }
        let _ = writeln!(s, "lr={}", h.lr);
        let _ = writeln!(s, "max_epochs={}", h.max_epochs);
        let _ = writeln!(s, "grad_tol={}", h.grad_tol);
        let _ = writeln!(s, "eval_every={}", h.eval_every);
        let _ = writeln!(s, "init_std={}", h.init_std);
        let _ = writeln!(s, "seed={}", h.seed);
        let _ = writeln!(s, "probe_layers={}", join_usizes(&self.probe_layers));
        let names: Vec<&str> = self.analyses.iter().map(|a| a.name()).collect();
        let _ = writeln!(s, "analyses={}", names.join(","));
        let _ = writeln!(s, "snapshot_epochs={}", join_usizes(&self.snapshot_epochs));
        let _ = writeln!(s, "outlier_tau_rel={}", self.outlier_rule.tau_rel);
        let _ = writeln!(s, "outlier_abs_floor={}", self.outlier_rule.abs_floor);
        let _ = writeln!(s, "tol_scale={}", self.tol_scale);
        s
    }

    /// FNV-1a hash of the canonical form, recorded in every CSV header.
    pub fn hash(&self) -> u64 {
        fnv1a(self.canonical().as_bytes())
    }
}

fn join_usizes(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
# sample configuration
k = 3
n = 40
d = 60
layers = 5
activation = linear
lambda_h1 = 5e-3
lambda_w = 5e-3
lr = 0.5
max_epochs = 1000
probe_layers = 3
";

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(cfg.hyper.k, 3);
        assert_eq!(cfg.hyper.lambda_w, vec![5e-3; 5]);
        assert_eq!(cfg.probe_layers, vec![3]);
        assert_eq!(cfg.analyses.len(), 10);
        assert!((cfg.hyper.init_std - 1.0 / 60f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_unknown_key_by_name() {
        let text = format!("{BASE}\nbogus_key = 1\n");
        match ExperimentConfig::parse(&text) {
            Err(ExperimentError::UnknownKey { key }) => assert_eq!(key, "bogus_key"),
            other => panic!("expected unknown-key error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_and_duplicate_keys() {
        let text = BASE.replace("lr = 0.5\n", "");
        assert!(matches!(
            ExperimentConfig::parse(&text),
            Err(ExperimentError::MissingKey { .. })
        ));
        let text = format!("{BASE}\nk = 4\n");
        assert!(matches!(
            ExperimentConfig::parse(&text),
            Err(ExperimentError::Malformed { .. })
        ));
    }

    #[test]
    fn per_layer_lambda_override() {
        let text = format!("{BASE}\nlambda_w3 = 1e-2\n");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg.hyper.lambda_w[2], 1e-2);
        assert_eq!(cfg.hyper.lambda_w[0], 5e-3);
    }

    #[test]
    fn probe_layers_validated() {
        let text = BASE.replace("probe_layers = 3", "probe_layers = 6");
        assert!(matches!(
            ExperimentConfig::parse(&text),
            Err(ExperimentError::InvalidValue { .. })
        ));
    }

    #[test]
    fn analyses_subset_and_snapshots() {
        let text = format!("{BASE}\nanalyses = hessian, dnc_metrics\nsnapshot_epochs = 500,100\n");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg.analyses, vec![Analysis::Hessian, Analysis::DncMetrics]);
        assert_eq!(cfg.snapshot_epochs, vec![100, 500]);
    }

    #[test]
    fn hash_ignores_output_dir_and_is_stable() {
        let a = ExperimentConfig::parse(BASE).unwrap();
        let b = ExperimentConfig::parse(&format!("{BASE}\noutput_dir = elsewhere\n")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse(&BASE.replace("seed", "# seed")).unwrap_or_else(|_| {
            // removing an optional key still parses
            ExperimentConfig::parse(BASE).unwrap()
        });
        assert_eq!(a.hash(), c.hash());
        let d = ExperimentConfig::parse(&format!("{BASE}\nseed = 7\n")).unwrap();
        assert_ne!(a.hash(), d.hash());
    }
}
