//! Run configuration files and append-only output directories.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{ExtrapolationConfig, LandscapeConfig};
use crate::error::{Error, Result};
use crate::model::MlpSpec;
use crate::pauli::HamiltonianFamily;
use crate::train::{DatasetShape, HarnessConfig, Schedule, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "HAMLEARN_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub family: HamiltonianFamily,
    pub num_sites: usize,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            family: HamiltonianFamily::Heisenberg,
            num_sites: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden widths; input and output are fixed by the chain length.
    pub hidden: Vec<usize>,
    pub weight_decay: f64,
    /// Ansatz-only learner.
    pub vanilla: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            weight_decay: 1e-3,
            vanilla: false,
        }
    }
}

impl ModelSection {
    pub fn mlp(&self, num_sites: usize) -> MlpSpec {
        MlpSpec::with_hidden(num_sites, &self.hidden, self.weight_decay)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub curriculum: Schedule,
    /// Highest polynomial order trained by Curriculum 2.
    pub max_order: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            curriculum: Schedule::Curriculum1,
            max_order: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSection {
    pub num_trials: usize,
    pub vanilla: bool,
    pub node: bool,
}

impl Default for HarnessSection {
    fn default() -> Self {
        Self {
            num_trials: 10,
            vanilla: true,
            node: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub curve: ExtrapolationConfig,
    pub fit_window: [f64; 2],
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            curve: ExtrapolationConfig::default(),
            fit_window: [1.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub k_values: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            k_values: vec![3, 10, 30, 100, 300, 1000],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vanilla,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeSection {
    pub model_kind: ModelKind,
    pub grid: LandscapeConfig,
}

impl Default for LandscapeSection {
    fn default() -> Self {
        Self {
            model_kind: ModelKind::Vanilla,
            grid: LandscapeConfig::default(),
        }
    }
}

/// Everything a command needs; missing sections take their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub system: SystemSection,
    pub dataset: DatasetShape,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub schedule: ScheduleSection,
    pub harness: HarnessSection,
    pub benchmark: BenchmarkSection,
    pub sweep: SweepSection,
    pub landscape: LandscapeSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if cfg.format_version == 0 {
            cfg.format_version = CONFIG_VERSION;
        }
        let seed = cfg.seed;
        let cfg = cfg.with_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn default_resolved() -> Self {
        Self {
            format_version: CONFIG_VERSION,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_VERSION {
            return Err(Error::Parse(format!(
                "unsupported config version {}",
                self.format_version
            )));
        }
        let n = self.system.num_sites;
        if n < self.system.family.min_sites() || n > 16 {
            return Err(Error::invalid(format!(
                "{n} sites is outside the supported range for {}",
                self.system.family
            )));
        }
        self.train.validate()?;
        if !self.model.vanilla {
            self.model.mlp(n).validate(n)?;
        }
        self.dataset.spec(self.system.family, n, self.seed).validate()?;
        Ok(())
    }

    /// Sets the global seed and propagates it to the sections that carry one.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.benchmark.curve.seed = seed;
        self.landscape.grid.seed = seed;
        self
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// SHA-256 of the resolved config, as hex. `out_dir` is excluded so that
    /// moving output does not change identity.
    pub fn hash(&self) -> Result<String> {
        let mut canon = self.clone();
        canon.out_dir = None;
        let bytes = serde_json::to_vec(&canon)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn short_hash(&self) -> Result<String> {
        Ok(self.hash()?[..12].to_string())
    }

    pub fn harness(&self) -> HarnessConfig {
        HarnessConfig {
            family: self.system.family,
            num_sites: self.system.num_sites,
            num_trials: self.harness.num_trials,
            seed: self.seed,
            dataset: self.dataset.clone(),
            train: self.train.clone(),
            mlp: Some(self.model.mlp(self.system.num_sites)),
            run_vanilla: self.harness.vanilla,
            run_node: self.harness.node,
        }
    }
}

/// A run directory whose files can be created once and never rewritten.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    /// Uses `dir` exactly; it may exist but files in it are never replaced.
    pub fn at(dir: impl Into<PathBuf>) -> Result<Self> {
        let root = dir.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    /// A fresh `<base>/<stem>`, or `<stem>-<k>` for the first free `k`.
    pub fn fresh(base: &Path, stem: &str) -> Result<Self> {
        fs::create_dir_all(base)?;
        for k in 0.. {
            let name = if k == 0 {
                stem.to_string()
            } else {
                format!("{stem}-{k}")
            };
            let candidate = base.join(name);
            match fs::create_dir(&candidate) {
                Ok(()) => return Ok(Self { root: candidate }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            }
        }
        unreachable!()
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Creates `name`; fails if it already exists.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::invalid(format!("refusing to overwrite {}", path.display()))
                } else {
                    e.into()
                }
            })?;
        f.write_all(bytes)?;
        f.sync_all()?;
        Ok(path)
    }
}

/// Comment line that opens every CSV artifact.
pub fn csv_preamble(command: &str, cfg: &RunConfig) -> Result<String> {
    Ok(format!(
        "# hamlearn {command} config_hash={} seed={} version={}\n",
        cfg.hash()?,
        cfg.seed,
        cfg.format_version
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default_resolved());
        assert_eq!(cfg.dataset.spec(cfg.system.family, 3, 0).cardinality(), 500_000);
    }

    #[test]
    fn sections_parse_and_round_trip() {
        let text = r#"
            seed = 11
            [system]
            family = "pxp"
            num_sites = 4
            [dataset]
            num_bases = 30
            [train]
            warmup_steps = 5
            [train.integrator]
            dt = 0.05
            [benchmark]
            fit_window = [1.0, 10.0]
            [benchmark.curve]
            t_max = 10.0
            [landscape]
            model_kind = "hybrid"
            [landscape.grid]
            resolution = 11
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.system.family, HamiltonianFamily::Pxp);
        assert_eq!(cfg.train.integrator.dt, 0.05);
        assert_eq!(cfg.benchmark.curve.t_max, 10.0);
        assert_eq!(cfg.landscape.grid.resolution, 11);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[system]\nfamily = \"ising\"\nnum_sites = 3").is_err());
        assert!(RunConfig::from_toml("[system]\nfamily = \"pxp\"\nnum_sites = 2").is_err());
        assert!(RunConfig::from_toml("[train]\nbeta1 = 1.0").is_err());
        assert!(RunConfig::from_toml("format_version = 9").is_err());
    }

    #[test]
    fn hash_tracks_content_not_location() {
        let a = RunConfig::default_resolved();
        let mut b = a.clone();
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), a.clone().with_seed(1).hash().unwrap());
    }

    #[test]
    fn output_dir_is_append_only() {
        let tmp = tempfile::tempdir().unwrap();
        let out = OutputDir::fresh(tmp.path(), "run").unwrap();
        out.write("a.txt", b"1").unwrap();
        assert!(out.write("a.txt", b"2").is_err());
        assert_eq!(fs::read(out.join("a.txt")).unwrap(), b"1");
        let second = OutputDir::fresh(tmp.path(), "run").unwrap();
        assert!(second.path().ends_with("run-1"));
    }
}
