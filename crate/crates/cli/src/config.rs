//! Run configuration: one versioned JSON document per experiment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gnn_linalg::fem::{DiffusionDataConfig, JacobiDataConfig};
use gnn_linalg::nn::ModelKind;
use gnn_linalg::train::{DiffusionTrainConfig, EigOptions, EigSolver, JacobiTrainConfig, ProbeKind};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSection {
    Jacobi {
        #[serde(default)]
        preset: Preset,
        n_y: Option<usize>,
        beta_min: Option<f64>,
        beta_max: Option<f64>,
        train: Option<usize>,
        val: Option<usize>,
        test: Option<usize>,
    },
    Diffusion {
        #[serde(default)]
        preset: Preset,
        n_min: Option<usize>,
        n_max: Option<usize>,
        theta_max: Option<u32>,
        train: Option<usize>,
        val: Option<usize>,
        test: Option<usize>,
    },
}

/// Optional checks on the model the run produces.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Option<Kind>,
    /// Expected trainable parameter count.
    pub parameters: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default)]
    pub preset: Preset,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub early_stop: Option<bool>,
    pub patience: Option<usize>,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub probes: Option<ProbeKind>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub split: Option<Split>,
    pub eig_k: Option<usize>,
    pub eig_tol: Option<f64>,
    pub eig_max_iters: Option<usize>,
    pub eig_solver: Option<EigSolver>,
    pub sweep_theta_max: Option<u32>,
    pub sweep_n: Option<usize>,
    pub stencil_n: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Jacobi,
    Diffusion,
}

impl Kind {
    pub fn model(self) -> ModelKind {
        match self {
            Kind::Jacobi => ModelKind::Jacobi,
            Kind::Diffusion => ModelKind::Diffusion,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Jacobi => "jacobi",
            Kind::Diffusion => "diffusion",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
}

/// Resolved dataset generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    Jacobi(JacobiDataConfig),
    Diffusion(DiffusionDataConfig),
}

impl DataConfig {
    pub fn kind(&self) -> Kind {
        match self {
            DataConfig::Jacobi(_) => Kind::Jacobi,
            DataConfig::Diffusion(_) => Kind::Diffusion,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if cfg.version != CONFIG_VERSION {
            bail!("{}: config version {} is not supported (expected {CONFIG_VERSION})", path.display(), cfg.version);
        }
        if let Some(k) = cfg.model.kind {
            if k != cfg.kind() {
                bail!("model kind {} does not match dataset kind {}", k.name(), cfg.kind().name());
            }
        }
        if cfg.kind() == Kind::Diffusion && (cfg.train.k.is_some() || cfg.train.m.is_some() || cfg.train.probes.is_some()) {
            bail!("train.k, train.m and train.probes apply to the jacobi experiment only");
        }
        Ok(cfg)
    }

    pub fn kind(&self) -> Kind {
        match self.dataset {
            DatasetSection::Jacobi { .. } => Kind::Jacobi,
            DatasetSection::Diffusion { .. } => Kind::Diffusion,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join("data")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.output_dir.join("train")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.output_dir.join("eval")
    }

    pub fn data_config(&self) -> DataConfig {
        let seed = self.seed;
        match self.dataset {
            DatasetSection::Jacobi { preset, n_y, beta_min, beta_max, train, val, test } => {
                let base = match preset {
                    Preset::Desk => JacobiDataConfig::desk(seed),
                    Preset::Paper => JacobiDataConfig::paper(seed),
                };
                DataConfig::Jacobi(JacobiDataConfig {
                    n_y: n_y.unwrap_or(base.n_y),
                    beta_min: beta_min.unwrap_or(base.beta_min),
                    beta_max: beta_max.unwrap_or(base.beta_max),
                    train: train.unwrap_or(base.train),
                    val: val.unwrap_or(base.val),
                    test: test.unwrap_or(base.test),
                    seed,
                })
            }
            DatasetSection::Diffusion { preset, n_min, n_max, theta_max, train, val, test } => {
                let base = match preset {
                    Preset::Desk => DiffusionDataConfig::desk(seed),
                    Preset::Paper => DiffusionDataConfig::paper(seed),
                };
                DataConfig::Diffusion(DiffusionDataConfig {
                    n_min: n_min.unwrap_or(base.n_min),
                    n_max: n_max.unwrap_or(base.n_max),
                    theta_max: theta_max.unwrap_or(base.theta_max),
                    train: train.unwrap_or(base.train),
                    val: val.unwrap_or(base.val),
                    test: test.unwrap_or(base.test),
                    seed,
                })
            }
        }
    }

    pub fn jacobi_train(&self) -> JacobiTrainConfig {
        let t = &self.train;
        let mut c = match t.preset {
            Preset::Desk => JacobiTrainConfig::desk(self.seed),
            Preset::Paper => JacobiTrainConfig::paper(self.seed),
        };
        self.apply_loop(&mut c.run);
        c.k = t.k.unwrap_or(c.k);
        c.m = t.m.unwrap_or(c.m);
        c.probes = t.probes.unwrap_or(c.probes);
        c
    }

    pub fn diffusion_train(&self) -> DiffusionTrainConfig {
        let mut c = match self.train.preset {
            Preset::Desk => DiffusionTrainConfig::desk(self.seed),
            Preset::Paper => DiffusionTrainConfig::paper(self.seed),
        };
        self.apply_loop(&mut c.run);
        c
    }

    fn apply_loop(&self, run: &mut gnn_linalg::train::LoopConfig) {
        let t = &self.train;
        run.epochs = t.epochs.unwrap_or(run.epochs);
        run.batch_size = t.batch_size.unwrap_or(run.batch_size);
        run.lr = t.lr.unwrap_or(run.lr);
        run.early_stop = t.early_stop.unwrap_or(run.early_stop);
        run.patience = t.patience.or(run.patience);
    }
}

impl EvalSection {
    pub fn eig_options(&self) -> EigOptions {
        let d = EigOptions::default();
        EigOptions {
            k: self.eig_k.unwrap_or(d.k),
            tol: self.eig_tol.unwrap_or(d.tol),
            max_iters: self.eig_max_iters.unwrap_or(d.max_iters),
            solver: self.eig_solver.unwrap_or(d.solver),
            dense_limit: d.dense_limit,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> serde_json::Result<RunConfig> {
        serde_json::from_str(s)
    }

    #[test]
    fn minimal_config_uses_desk_presets() {
        let c = parse(r#"{"version": 1, "seed": 3, "output_dir": "out", "dataset": {"kind": "jacobi"}}"#).unwrap();
        assert_eq!(c.data_config(), DataConfig::Jacobi(JacobiDataConfig::desk(3)));
        assert_eq!(c.jacobi_train(), JacobiTrainConfig::desk(3));
    }

    #[test]
    fn overrides_apply_on_top_of_presets() {
        let c = parse(
            r#"{"version": 1, "seed": 5, "output_dir": "o",
                "dataset": {"kind": "diffusion", "preset": "paper", "train": 7},
                "train": {"epochs": 2, "lr": 0.01}}"#,
        )
        .unwrap();
        let DataConfig::Diffusion(d) = c.data_config() else { panic!() };
        assert_eq!(d.train, 7);
        assert_eq!(d.n_min, DiffusionDataConfig::paper(5).n_min);
        let t = c.diffusion_train();
        assert_eq!((t.run.epochs, t.run.lr, t.run.seed), (2, 0.01, 5));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let base = r#""version": 1, "seed": 0, "output_dir": "o""#;
        assert!(parse(&format!(r#"{{{base}, "dataset": {{"kind": "jacobi"}}, "extra": 1}}"#)).is_err());
        assert!(parse(&format!(r#"{{{base}, "dataset": {{"kind": "jacobi", "n": 4}}}}"#)).is_err());
        assert!(parse(&format!(r#"{{{base}, "dataset": {{"kind": "jacobi"}}, "train": {{"epoch": 4}}}}"#)).is_err());
        assert!(parse(r#"{"seed": 0, "output_dir": "o", "dataset": {"kind": "jacobi"}}"#).is_err());
    }
}
