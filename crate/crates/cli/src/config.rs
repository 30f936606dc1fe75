//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use stencilseer::datagen::GenConfig;
use stencilseer::model::{ModelConfig, TrainConfig};
use stencilseer::Family;

pub const KEYS: [&str; 17] = [
    "family",
    "W",
    "H",
    "n_samples",
    "seed",
    "depth",
    "widths",
    "coupling",
    "lambda_zs",
    "lambda_rec",
    "decoder",
    "epochs",
    "steps_per_epoch",
    "stop_threshold",
    "alpha",
    "cfl",
    "out_dir",
];

/// Values set by a config file or on the command line, before defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings(BTreeMap<&'static str, String>);

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let key = KEYS
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| format!("unknown config key {key:?}"))?;
        self.0.insert(key, value.trim().to_string());
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Settings, String> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key=value", i + 1))?;
            s.set(k.trim(), v).map_err(|e| format!("config line {}: {e}", i + 1))?;
        }
        Ok(s)
    }

    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.0 {
            self.0.insert(k, v.clone());
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, String> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| format!("bad value for {key}: {v:?}")),
        }
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool, String> {
        match self.0.get(key).map(String::as_str) {
            None => Ok(default),
            Some("1" | "true" | "on" | "yes") => Ok(true),
            Some("0" | "false" | "off" | "no") => Ok(false),
            Some(v) => Err(format!("bad value for {key}: {v:?}")),
        }
    }

    pub fn resolve(&self) -> Result<RunConfig, String> {
        let family: Family = self
            .get("family", Family::Hyperbolic.name().to_string())?
            .parse()
            .map_err(|_| format!("unknown family {:?}", self.0["family"]))?;
        let base = ModelConfig::for_family(family);
        let widths = match (self.0.get("widths"), self.0.get("depth")) {
            (Some(w), _) => w
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| format!("bad value for widths: {w:?}"))?,
            (None, Some(_)) => {
                let depth: usize = self.get("depth", 0)?;
                if depth == base.depth() {
                    base.widths.clone()
                } else {
                    let mut w = vec![base.widths[0]; depth.saturating_sub(1)];
                    w.push(family.channels());
                    w
                }
            }
            (None, None) => base.widths.clone(),
        };
        let depth: usize = self.get("depth", widths.len())?;
        if depth != widths.len() {
            return Err(format!("depth={depth} but {} widths", widths.len()));
        }
        let decoder = self.flag("decoder", false)?;
        let gen_default = GenConfig::new(family);
        let train_default = TrainConfig::default();
        let cfg = RunConfig {
            family,
            width: self.get("W", gen_default.width)?,
            height: self.get("H", gen_default.height)?,
            n_samples: self.get("n_samples", gen_default.n_samples)?,
            seed: self.get("seed", 0)?,
            widths,
            coupling: self.flag("coupling", base.coupling)?,
            lambda_zs: self.get("lambda_zs", base.lambda_zs)?,
            lambda_rec: self.get("lambda_rec", if decoder { 1.0 } else { 0.0 })?,
            decoder,
            epochs: self.get("epochs", train_default.epochs)?,
            steps_per_epoch: self.get("steps_per_epoch", train_default.steps_per_epoch)?,
            stop_threshold: self.get("stop_threshold", train_default.stop_threshold)?,
            alpha: self.get("alpha", gen_default.alpha)?,
            cfl: self.get("cfl", gen_default.cfl)?,
            out_dir: PathBuf::from(self.get("out_dir", "out".to_string())?),
        };
        cfg.model_config()
            .validate()
            .and_then(|()| cfg.gen_config().validate())
            .map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub family: Family,
    pub width: usize,
    pub height: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub widths: Vec<usize>,
    pub coupling: bool,
    pub lambda_zs: f64,
    pub lambda_rec: f64,
    pub decoder: bool,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub stop_threshold: f64,
    pub alpha: f64,
    pub cfl: f64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            width: self.width,
            height: self.height,
            n_samples: self.n_samples,
            seed: self.seed,
            alpha: self.alpha,
            cfl: self.cfl,
            ..GenConfig::new(self.family)
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            widths: self.widths.clone(),
            coupling: self.coupling,
            lambda_zs: self.lambda_zs,
            lambda_rec: self.lambda_rec,
            decoder: self.decoder,
            ..ModelConfig::for_family(self.family)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            stop_threshold: self.stop_threshold,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    /// Every key with its resolved value, in a form [`Settings::parse`] accepts.
    pub fn to_text(&self) -> String {
        let widths: Vec<String> = self.widths.iter().map(usize::to_string).collect();
        let mut s = String::new();
        for (k, v) in [
            ("family", self.family.to_string()),
            ("W", self.width.to_string()),
            ("H", self.height.to_string()),
            ("n_samples", self.n_samples.to_string()),
            ("seed", self.seed.to_string()),
            ("depth", self.widths.len().to_string()),
            ("widths", widths.join(",")),
            ("coupling", u8::from(self.coupling).to_string()),
            ("lambda_zs", format!("{:e}", self.lambda_zs)),
            ("lambda_rec", format!("{:e}", self.lambda_rec)),
            ("decoder", u8::from(self.decoder).to_string()),
            ("epochs", self.epochs.to_string()),
            ("steps_per_epoch", self.steps_per_epoch.to_string()),
            ("stop_threshold", format!("{:e}", self.stop_threshold)),
            ("alpha", format!("{:e}", self.alpha)),
            ("cfl", format!("{:e}", self.cfl)),
            ("out_dir", self.out_dir.display().to_string()),
        ] {
            writeln!(s, "{k}={v}").expect("write to String");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_family() {
        let mut s = Settings::default();
        s.set("family", "coupled").unwrap();
        let c = s.resolve().unwrap();
        assert_eq!(c.widths, vec![2, 2]);
        assert!(c.coupling);
        assert_eq!((c.width, c.height, c.n_samples), (50, 50, 101));
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(Settings::parse("famly=elliptic").is_err());
        assert!(Settings::parse("family elliptic").is_err());
        let s = Settings::parse("epochs=ten").unwrap();
        assert!(s.resolve().is_err());
        let s = Settings::parse("family=elliptic\ndepth=3\nwidths=1,1").unwrap();
        assert!(s.resolve().is_err());
    }

    #[test]
    fn resolved_text_round_trips() {
        let s = Settings::parse("# elliptic depth ablation\nfamily = elliptic # inline\ndepth=3\nseed=7\n")
            .unwrap();
        let c = s.resolve().unwrap();
        assert_eq!(c.widths, vec![1, 1, 1]);
        let again = Settings::parse(&c.to_text()).unwrap().resolve().unwrap();
        assert_eq!(again, c);
    }
}
