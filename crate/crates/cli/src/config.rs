//! Flat `key = value` configuration: an optional file, then `--set`
//! overrides, applied in order on top of the defaults.

use std::path::Path;

use geodeg::diffusion::{LossKind, Mode, Scheme};
use geodeg::training::{default_loss, CoveragePolicy, Task, TrainConfig, TrainMode};

use crate::CliError;

/// Every accepted key with its default, shown by `--help`.
pub const KEYS_HELP: &str = "\
Configuration keys (file lines `key = value`, `#` starts a comment; \
--set overrides the file):
  k = 4                        maximum junction-tree degree of the meta grammar
  max_size = 10                largest meta tree in the geometry
  d = 32                       diffusion state width
  fingerprint_dim = 64         leaf fingerprint length
  fingerprint_radius = 2       leaf fingerprint refinement rounds
  T = 1                        diffusion time
  steps = 16                   integrator steps
  scheme = rk4                 euler | rk4
  diffusivity = attention      attention | uniform
  mode = transductive          transductive | inductive
  task = regression            regression | classification
  loss_kind = mse              mse | mae | bce (default bce for classification)
  policy = exclude             exclude | error, for molecules the geometry misses
  lr_theta = 0.01              grammar learning rate
  lr_diffusion = 0.001         diffusion learning rate
  outer_epochs = 10            grammar updates
  inner_epochs = 50            diffusion updates per grammar update
  N = 4                        sampled decompositions per molecule and update
  baseline = true              running-mean baseline for the grammar gradient
  split_ratio = 0.8            train fraction of each seeded split
  seeds = 0,1,2,3,4            one run per seed (GEODEG_SEED=s gives s..s+4)
  reset_inner = false          re-initialize diffusion before each inner loop
  theta_init_scale = 0.5       grammar weight initialization half-width
  theta_init_bias = 1          grammar output bias at initialization";

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub k: usize,
    pub max_size: usize,
    pub train: TrainConfig,
    seeds_set: bool,
    loss_set: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self { k: 4, max_size: 10, train: TrainConfig::default(), seeds_set: false, loss_set: false }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T, String> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|&(_, v)| v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|o| o.0).collect();
            format!("invalid value {value:?} for {key}, expected one of {}", names.join(", "))
        })
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.train;
        let d = &mut t.diffusion;
        match key {
            "k" => self.k = parse(key, value)?,
            "max_size" => self.max_size = parse(key, value)?,
            "d" => d.d = parse(key, value)?,
            "fingerprint_dim" => d.fingerprint_dim = parse(key, value)?,
            "fingerprint_radius" => d.fingerprint_radius = parse(key, value)?,
            "T" => d.time = parse(key, value)?,
            "steps" => d.steps = parse(key, value)?,
            "scheme" => d.scheme = choice(key, value, &[("euler", Scheme::Euler), ("rk4", Scheme::Rk4)])?,
            "diffusivity" => {
                d.mode = choice(key, value, &[("attention", Mode::Attention), ("uniform", Mode::Uniform)])?
            }
            "mode" => {
                t.mode = choice(
                    key,
                    value,
                    &[("transductive", TrainMode::Transductive), ("inductive", TrainMode::Inductive)],
                )?
            }
            "task" => {
                t.task = choice(
                    key,
                    value,
                    &[("regression", Task::Regression), ("classification", Task::Classification)],
                )?
            }
            "loss_kind" => {
                d.loss = choice(key, value, &[("mse", LossKind::Mse), ("mae", LossKind::Mae), ("bce", LossKind::Bce)])?;
                self.loss_set = true;
            }
            "policy" => {
                t.policy = choice(
                    key,
                    value,
                    &[("exclude", CoveragePolicy::Exclude), ("error", CoveragePolicy::Error)],
                )?
            }
            "lr_theta" => t.lr_theta = parse(key, value)?,
            "lr_diffusion" => t.lr_diffusion = parse(key, value)?,
            "outer_epochs" => t.outer_epochs = parse(key, value)?,
            "inner_epochs" => t.inner_epochs = parse(key, value)?,
            "N" => t.n_reinforce_samples = parse(key, value)?,
            "baseline" => t.baseline = parse(key, value)?,
            "split_ratio" => t.split_ratio = parse(key, value)?,
            "seeds" => {
                t.seeds = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_, _>>()?;
                self.seeds_set = true;
            }
            "reset_inner" => t.reset_inner = parse(key, value)?,
            "theta_init_scale" => t.theta_init_scale = parse(key, value)?,
            "theta_init_bias" => t.theta_init_bias = parse(key, value)?,
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; errors name the line.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |m: String| CliError::Usage(format!("{origin} line {}: {m}", i + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| fail("expected key = value".into()))?;
            self.set(key.trim(), value.trim()).map_err(fail)?;
        }
        Ok(())
    }

    /// Defaults, then the file, then each `key=value` override.
    pub fn load(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = Config::default();
        if let Some(path) = file {
            let text = crate::read_text(path)?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {item:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(CliError::Usage)?;
        }
        if !cfg.seeds_set {
            if let Some(s) = seed {
                cfg.train.seeds = (0..5).map(|i| s.wrapping_add(i)).collect();
            }
        }
        if !cfg.loss_set {
            cfg.train.diffusion.loss = default_loss(cfg.train.task);
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_lists_the_defaults() {
        let mut cfg = Config::default();
        let body = KEYS_HELP.split_once('\n').unwrap().1;
        for line in body.lines() {
            let (key, rest) = line.trim().split_once(" = ").unwrap();
            let value = rest.split_whitespace().next().unwrap();
            cfg.set(key, value).unwrap();
        }
        cfg.seeds_set = false;
        cfg.loss_set = false;
        assert_eq!(cfg, Config::default());
        assert_eq!(body.lines().count(), 24);
    }

    #[test]
    fn overrides_and_rejections() {
        let cfg = Config::load(None, &["T=2.5".into(), "scheme=euler".into(), "seeds=3, 9".into()], Some(7)).unwrap();
        assert_eq!(cfg.train.diffusion.time, 2.5);
        assert_eq!(cfg.train.diffusion.scheme, Scheme::Euler);
        assert_eq!(cfg.train.seeds, vec![3, 9]);
        let env = Config::load(None, &[], Some(7)).unwrap();
        assert_eq!(env.train.seeds, vec![7, 8, 9, 10, 11]);
        let cls = Config::load(None, &["task=classification".into()], None).unwrap();
        assert_eq!(cls.train.diffusion.loss, LossKind::Bce);
        for bad in ["bogus=1", "d=x", "scheme=midpoint", "noequals"] {
            assert!(matches!(Config::load(None, &[bad.into()], None), Err(CliError::Usage(_))), "{bad}");
        }
        let mut c = Config::default();
        let err = c.apply_text("# comment\nk = 3\n\nwhat = 1\n", "f.cfg").unwrap_err();
        assert!(err.to_string().contains("f.cfg line 4"), "{err}");
        assert_eq!(c.k, 3);
    }
}
