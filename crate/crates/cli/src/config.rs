//! Run configuration: built-in defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use umpire::baselines::{BaselineSelection, DEFAULT_EIGEN_JITTER};
use umpire::evaluate::EvalConfig;
use umpire::kernel::{KernelConfig, DEFAULT_EPSILON};
use umpire::pipeline::AlphaChoice;

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "UMPIRE_CONFIG";

/// `alpha` is a number or the string `"adaptive"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSetting {
    Fixed(f64),
    Keyword(AlphaKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaKeyword {
    Adaptive,
}

impl std::str::FromStr for AlphaSetting {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "adaptive" {
            return Ok(Self::Keyword(AlphaKeyword::Adaptive));
        }
        let a: f64 = s.parse().with_context(|| format!("alpha must be a number or 'adaptive', got '{s}'"))?;
        Ok(Self::Fixed(a))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSettings {
    pub epsilon: f64,
    pub alpha: AlphaSetting,
    /// Subset share for adaptive α.
    pub alpha_fraction: f64,
    pub length_normalized: bool,
}

impl Default for KernelSettings {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            alpha: AlphaSetting::Keyword(AlphaKeyword::Adaptive),
            alpha_fraction: 0.05,
            length_normalized: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSettings {
    /// Baseline names, `"all"` or `"none"`.
    pub enabled: Vec<String>,
    pub eigen_jitter: f64,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self { enabled: Vec::new(), eigen_jitter: DEFAULT_EIGEN_JITTER }
    }
}

/// Fully resolved settings; embedded in every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker count; `None` uses available parallelism.
    pub threads: Option<usize>,
    pub lenient: bool,
    pub kernel: KernelSettings,
    pub baselines: BaselineSettings,
    pub eval: EvalSettings,
    pub sweep_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub cpc_bins: usize,
    pub ece_bins: usize,
    pub dev_fraction: f64,
    pub fpr_levels: Vec<f64>,
    pub combined_weights: [f64; 3],
}

impl Default for EvalSettings {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            cpc_bins: e.cpc_bins,
            ece_bins: e.ece_bins,
            dev_fraction: e.dev_fraction,
            fpr_levels: e.fpr_levels,
            combined_weights: e.combined_weights,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            lenient: false,
            kernel: KernelSettings::default(),
            baselines: BaselineSettings::default(),
            eval: EvalSettings::default(),
            sweep_grid: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
        }
    }
}

/// Config file layout; every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    lenient: Option<bool>,
    kernel: Option<FileKernel>,
    baselines: Option<FileBaselines>,
    eval: Option<FileEval>,
    sweep: Option<FileSweep>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileKernel {
    epsilon: Option<f64>,
    alpha: Option<AlphaSetting>,
    alpha_fraction: Option<f64>,
    length_normalized: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileBaselines {
    enabled: Option<Vec<String>>,
    eigen_jitter: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEval {
    cpc_bins: Option<usize>,
    ece_bins: Option<usize>,
    dev_fraction: Option<f64>,
    fpr_levels: Option<Vec<f64>>,
    combined_weights: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSweep {
    grid: Option<Vec<f64>>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunConfig {
    /// Defaults overlaid with `path`, or with the file named by
    /// [`CONFIG_ENV`] when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let mut cfg = Self::default();
        if let Some(p) = path.map(Path::to_path_buf).or(env_path) {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading config {}", p.display()))?;
            let file: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            cfg.apply_file(file);
        }
        Ok(cfg)
    }

    fn apply_file(&mut self, f: FileConfig) {
        set(&mut self.seed, f.seed);
        if f.threads.is_some() {
            self.threads = f.threads;
        }
        set(&mut self.lenient, f.lenient);
        if let Some(k) = f.kernel {
            set(&mut self.kernel.epsilon, k.epsilon);
            set(&mut self.kernel.alpha, k.alpha);
            set(&mut self.kernel.alpha_fraction, k.alpha_fraction);
            set(&mut self.kernel.length_normalized, k.length_normalized);
        }
        if let Some(b) = f.baselines {
            set(&mut self.baselines.enabled, b.enabled);
            set(&mut self.baselines.eigen_jitter, b.eigen_jitter);
        }
        if let Some(e) = f.eval {
            set(&mut self.eval.cpc_bins, e.cpc_bins);
            set(&mut self.eval.ece_bins, e.ece_bins);
            set(&mut self.eval.dev_fraction, e.dev_fraction);
            set(&mut self.eval.fpr_levels, e.fpr_levels);
            set(&mut self.eval.combined_weights, e.combined_weights);
        }
        if let Some(s) = f.sweep {
            set(&mut self.sweep_grid, s.grid);
        }
    }

    pub fn kernel_config(&self) -> Result<KernelConfig> {
        let alpha = match self.kernel.alpha {
            AlphaSetting::Fixed(a) => a,
            AlphaSetting::Keyword(_) => 0.0,
        };
        Ok(KernelConfig::new(self.kernel.epsilon, alpha, self.kernel.length_normalized)?)
    }

    pub fn alpha_choice(&self) -> AlphaChoice {
        match self.kernel.alpha {
            AlphaSetting::Fixed(a) => AlphaChoice::Fixed(a),
            AlphaSetting::Keyword(AlphaKeyword::Adaptive) => {
                AlphaChoice::Adaptive { fraction: self.kernel.alpha_fraction, seed: self.seed }
            }
        }
    }

    pub fn baseline_selection(&self) -> Result<BaselineSelection> {
        let list = self.baselines.enabled.join(",");
        Ok(BaselineSelection::parse_list(&list, self.baselines.eigen_jitter)?)
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let e = &self.eval;
        let cfg = EvalConfig {
            cpc_bins: e.cpc_bins,
            ece_bins: e.ece_bins,
            dev_fraction: e.dev_fraction,
            fpr_levels: e.fpr_levels.clone(),
            combined_weights: e.combined_weights,
            rng_seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate_grid(&self) -> Result<()> {
        if self.sweep_grid.is_empty() {
            bail!("sweep grid is empty");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let mut cfg = RunConfig::default();
        let file: FileConfig = toml::from_str(
            "seed = 7\n[kernel]\nalpha = 2.5\n[eval]\ncpc_bins = 20\n[baselines]\nenabled = [\"eigenscore\"]\n",
        )
        .unwrap();
        cfg.apply_file(file);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.kernel.alpha, AlphaSetting::Fixed(2.5));
        assert_eq!(cfg.eval.cpc_bins, 20);
        assert_eq!(cfg.eval.ece_bins, 15);
        assert_eq!(cfg.baseline_selection().unwrap().names(), vec!["eigenscore"]);
    }

    #[test]
    fn adaptive_keyword_parses() {
        let file: FileConfig = toml::from_str("[kernel]\nalpha = \"adaptive\"\n").unwrap();
        assert_eq!(file.kernel.unwrap().alpha, Some(AlphaSetting::Keyword(AlphaKeyword::Adaptive)));
        assert!("adaptive".parse::<AlphaSetting>().is_ok());
        assert_eq!("1.5".parse::<AlphaSetting>().unwrap(), AlphaSetting::Fixed(1.5));
        assert!("often".parse::<AlphaSetting>().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("sed = 1\n").is_err());
        assert!(toml::from_str::<FileConfig>("[kernel]\nepsilon = 1e-6\nbeta = 2\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }
}
