//! Run configuration (TOML, `format = 1`). Input paths are resolved relative
//! to the configuration file's directory; the output directory relative to
//! the working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compliance::{CouplingLaw, CouplingParams};
use crate::error::{Error, FormatError, Result};
use crate::format::parse_versioned;
use crate::retarget::RetargetParams;

pub const CONFIG_FORMAT: u32 = 1;

/// Environment variable naming the directory searched for `--config`
/// paths that do not exist relative to the working directory.
pub const CONFIG_DIR_ENV: &str = "MEDTELEOP_CONFIG_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gains {
    pub lambda: f64,
    pub beta_damp: f64,
    pub dt: f64,
    pub retarget_alpha: f64,
    pub retarget_beta: f64,
    pub coupling_law: CouplingLaw,
}

impl Default for Gains {
    fn default() -> Self {
        let c = CouplingParams::default();
        let r = RetargetParams::default();
        Gains {
            lambda: c.lambda,
            beta_damp: c.beta_damp,
            dt: c.dt,
            retarget_alpha: r.alpha,
            retarget_beta: r.smoothness,
            coupling_law: CouplingLaw::default(),
        }
    }
}

impl Gains {
    pub fn coupling(&self) -> CouplingParams {
        CouplingParams {
            lambda: self.lambda,
            beta_damp: self.beta_damp,
            dt: self.dt,
        }
    }

    pub fn retarget(&self) -> RetargetParams {
        RetargetParams {
            alpha: self.retarget_alpha,
            smoothness: self.retarget_beta,
            ..RetargetParams::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Replay(PathBuf),
    Live { port: u16 },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeSpec {
    replay: Option<PathBuf>,
    live_port: Option<u16>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    format: u32,
    scenario: PathBuf,
    templates: Option<PathBuf>,
    chains: Option<PathBuf>,
    hand_model: Option<PathBuf>,
    #[serde(default = "default_control_rate")]
    control_rate_hz: f64,
    #[serde(default = "default_snapshot_rate")]
    snapshot_rate_hz: f64,
    #[serde(default)]
    seed: u64,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    gains: Gains,
    #[serde(default)]
    mode: ModeSpec,
}

fn default_control_rate() -> f64 {
    100.0
}

fn default_snapshot_rate() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: PathBuf,
    /// `None` selects the built-in library / model.
    pub templates: Option<PathBuf>,
    pub chains: Option<PathBuf>,
    pub hand_model: Option<PathBuf>,
    pub control_rate_hz: f64,
    pub snapshot_rate_hz: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub gains: Gains,
    pub mode: Option<Mode>,
}

fn config_error(e: FormatError) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let f: ConfigFile = parse_versioned(text, CONFIG_FORMAT).map_err(config_error)?;
        let resolve = |p: &Path| base_dir.join(p);
        let mode = match (f.mode.replay, f.mode.live_port) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("mode: set either `replay` or `live_port`, not both".into()))
            }
            (Some(p), None) => Some(Mode::Replay(resolve(&p))),
            (None, Some(port)) => Some(Mode::Live { port }),
            (None, None) => None,
        };
        let cfg = RunConfig {
            scenario: resolve(&f.scenario),
            templates: f.templates.as_deref().map(resolve),
            chains: f.chains.as_deref().map(resolve),
            hand_model: f.hand_model.as_deref().map(resolve),
            control_rate_hz: f.control_rate_hz,
            snapshot_rate_hz: f.snapshot_rate_hz,
            seed: f.seed,
            output_dir: f.output_dir.unwrap_or_else(|| PathBuf::from("out")),
            gains: f.gains,
            mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Finds a config path, falling back to `$MEDTELEOP_CONFIG_DIR/<path>`
    /// for relative paths missing from the working directory.
    pub fn locate(path: &Path, config_dir: Option<&Path>) -> PathBuf {
        if path.exists() || path.is_absolute() {
            return path.to_path_buf();
        }
        match config_dir {
            Some(dir) if dir.join(path).exists() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.control_rate_hz) || !positive(self.snapshot_rate_hz) {
            return Err(Error::Config("control and snapshot rates must be positive".into()));
        }
        self.gains
            .coupling()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.gains
            .retarget()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if (self.gains.dt * self.control_rate_hz - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "gains.dt = {} does not match the control period 1/{} s",
                self.gains.dt, self.control_rate_hz
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate_hz
    }

    /// Control ticks between snapshots (at least the configured rate).
    pub fn ticks_per_snapshot(&self) -> u64 {
        ((self.control_rate_hz / self.snapshot_rate_hz).floor() as u64).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "format = 1\nscenario = \"s.toml\"\n";

    #[test]
    fn defaults_and_relative_paths() {
        let c = RunConfig::parse(BASE, Path::new("/cfg")).unwrap();
        assert_eq!(c.scenario, PathBuf::from("/cfg/s.toml"));
        assert_eq!(c.control_rate_hz, 100.0);
        assert_eq!(c.gains, Gains::default());
        assert_eq!(c.mode, None);
        assert_eq!(c.ticks_per_snapshot(), 3);
    }

    #[test]
    fn both_modes_rejected() {
        let text = format!("{BASE}[mode]\nreplay = \"a.session\"\nlive_port = 9000\n");
        assert!(matches!(RunConfig::parse(&text, Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn mismatched_dt_rejected() {
        let text = format!("{BASE}control_rate_hz = 50\n");
        assert!(matches!(RunConfig::parse(&text, Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn bad_rate_rejected() {
        let text = format!("{BASE}control_rate_hz = 0\n");
        let err = RunConfig::parse(&text, Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
