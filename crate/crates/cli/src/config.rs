//! Pipeline configuration file (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use netimpute::{AggregationWindow, ImputeConfig, MatchConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// GeoJSON or CSV edge list.
    pub network: Option<PathBuf>,
    /// Dense inventory network carrying AADT.
    pub dense: Option<PathBuf>,
    pub stations: Option<PathBuf>,
    pub hourly: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregateSettings {
    /// Window labels `day:band:month`.
    pub windows: Vec<String>,
}

impl Default for AggregateSettings {
    fn default() -> Self {
        AggregateSettings {
            windows: vec![AggregationWindow::ALL.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub k: usize,
    pub seed: u64,
    /// Stations that stay observed in every fold.
    pub pinned_stations: Vec<String>,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            k: 10,
            seed: 0,
            pinned_stations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Inputs,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub impute: ImputeConfig,
    pub aggregate: AggregateSettings,
    pub cv: CvSettings,
    pub output: OutputSettings,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.inputs.network,
            &mut cfg.inputs.dense,
            &mut cfg.inputs.stations,
            &mut cfg.inputs.hourly,
        ]
        .into_iter()
        .flatten()
        {
            rebase(base, p);
        }
        rebase(base, &mut cfg.output.dir);
        Ok(cfg)
    }

    pub fn windows(&self) -> Result<Vec<AggregationWindow>> {
        if self.aggregate.windows.is_empty() {
            bail!("aggregate.windows is empty");
        }
        let mut out: Vec<AggregationWindow> = self
            .aggregate
            .windows
            .iter()
            .map(|w| w.parse().map_err(anyhow::Error::from))
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.impute.validate().context("[impute]")?;
        self.matching.validate().context("[match]")?;
        self.windows().context("[aggregate]")?;
        if self.cv.k < 2 {
            bail!("[cv] k must be at least 2, got {}", self.cv.k);
        }
        Ok(())
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        let p = path
            .as_deref()
            .with_context(|| format!("config is missing inputs.{key}"))?;
        if !p.exists() {
            bail!("inputs.{key} not found: {}", p.display());
        }
        Ok(p)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
