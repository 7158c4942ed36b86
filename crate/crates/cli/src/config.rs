use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ccopf::cases::{load_network, IEEE33_CASE, IEEE33_SIDECAR};
use ccopf::ccopf::CcOpfOptions;
use ccopf::model::Epsilons;
use ccopf::Network;

use crate::args::{GlobalArgs, IterationArgs, McArgs};

/// Everything a command needs besides its own file arguments.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub case_path: Option<PathBuf>,
    pub sidecar_path: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub scenarios: usize,
    pub bins: usize,
    pub slack: f64,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub deterministic: bool,
}

impl RunConfig {
    pub fn new(g: &GlobalArgs, it: Option<&IterationArgs>, mc: Option<&McArgs>) -> Result<Self> {
        let defaults = CcOpfOptions::default();
        let cfg = Self {
            case_path: g.case.clone(),
            sidecar_path: g.sidecar.clone(),
            epsilon: g.epsilon,
            delta: it.map_or(defaults.delta, |i| i.delta),
            max_iter: it.map_or(defaults.max_iter, |i| i.max_iter),
            seed: g.seed,
            scenarios: mc.map_or(1, |m| m.scenarios),
            bins: mc.map_or(1, |m| m.bins),
            slack: mc.map_or(0.0, |m| m.slack),
            out_dir: g.out.clone(),
            threads: g.threads,
            deterministic: g.deterministic,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        for p in [&self.case_path, &self.sidecar_path].into_iter().flatten() {
            if !p.is_file() {
                bail!("{} does not exist or is not a file", p.display());
            }
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e < 0.5) {
                bail!("--epsilon must lie in (0, 0.5), got {e}");
            }
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            bail!("--delta must be positive, got {}", self.delta);
        }
        if self.max_iter == 0 {
            bail!("--max-iter must be at least 1");
        }
        if self.scenarios == 0 {
            bail!("--scenarios must be at least 1");
        }
        if self.bins == 0 {
            bail!("--bins must be at least 1");
        }
        if !(self.slack >= 0.0 && self.slack.is_finite()) {
            bail!("--slack must be non-negative, got {}", self.slack);
        }
        if self.threads == Some(0) {
            bail!("--threads must be at least 1");
        }
        Ok(())
    }

    pub fn ccopf_options(&self) -> CcOpfOptions {
        CcOpfOptions { delta: self.delta, max_iter: self.max_iter, ..CcOpfOptions::default() }
    }

    /// Loads the case and sidecar (bundled when not given) and applies overrides.
    pub fn load_network(&self) -> Result<Network> {
        let case = read_or(self.case_path.as_deref(), IEEE33_CASE)?;
        let sidecar = read_or(self.sidecar_path.as_deref(), IEEE33_SIDECAR)?;
        let net = load_network(&case, &sidecar).context("loading case")?;
        match self.epsilon {
            Some(e) => Ok(net.with_epsilons(Epsilons { p: e, q: e, v: e, omega: e })?),
            None => Ok(net),
        }
    }

    pub fn case_label(&self) -> String {
        self.case_path.as_ref().map_or("bundled:ieee33.m".into(), |p| p.display().to_string())
    }

    pub fn sidecar_label(&self) -> String {
        self.sidecar_path.as_ref().map_or("bundled:ieee33.sidecar.json".into(), |p| p.display().to_string())
    }
}

fn read_or(path: Option<&Path>, bundled: &str) -> Result<String> {
    match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(bundled.to_string()),
    }
}
