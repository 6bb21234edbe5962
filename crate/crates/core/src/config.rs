//! Named settings for the fitting configuration.

use std::str::FromStr;

use crate::fit::FitConfig;
use crate::{Error, Result};

/// Every key accepted by [`FitConfig::set`].
pub const KEYS: &[&str] = &[
    "mode",
    "beta1",
    "beta2",
    "beta3",
    "beta4",
    "beta5",
    "eta",
    "lambda_c",
    "lambda_f",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "decay_window",
    "decay_factor",
    "lr_floor",
    "batch_size",
    "steps",
    "seed",
    "components",
    "reparam_rounds",
    "z_prune",
    "z_split",
    "reparam_batch_fraction",
    "reparam_noise",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Invalid(format!("bad value `{value}` for `{key}`")))
}

impl FitConfig {
    /// Sets one field by name from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = |v: &str| parse::<f64>(key, v);
        let u = |v: &str| parse::<usize>(key, v);
        match key {
            "mode" => self.render.mode = parse(key, value)?,
            "beta1" => self.render.beta[0] = f(value)?,
            "beta2" => self.render.beta[1] = f(value)?,
            "beta3" => self.render.beta[2] = f(value)?,
            "beta4" => self.render.beta[3] = f(value)?,
            "beta5" => self.render.beta[4] = f(value)?,
            "eta" => self.render.eta = f(value)?,
            "lambda_c" => self.weights.lambda_c = f(value)?,
            "lambda_f" => self.weights.lambda_f = f(value)?,
            "lr" => self.adam.lr = f(value)?,
            "adam_beta1" => self.adam.beta1 = f(value)?,
            "adam_beta2" => self.adam.beta2 = f(value)?,
            "adam_eps" => self.adam.eps = f(value)?,
            "decay_window" => self.decay.window = u(value)?,
            "decay_factor" => self.decay.factor = f(value)?,
            "lr_floor" => self.decay.floor = f(value)?,
            "batch_size" => self.batch_size = u(value)?,
            "steps" => self.max_steps = u(value)?,
            "seed" => self.seed = parse(key, value)?,
            "components" => self.components = u(value)?,
            "reparam_rounds" => self.reparam_rounds = u(value)?,
            "z_prune" => self.reparam.z_prune = f(value)?,
            "z_split" => self.reparam.z_split = f(value)?,
            "reparam_batch_fraction" => self.reparam.batch_fraction = f(value)?,
            "reparam_noise" => self.reparam.noise_sigma = f(value)?,
            _ => {
                return Err(Error::Invalid(format!(
                    "unknown setting `{key}` (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Textual value of one setting; [`FitConfig::set`] reads it back exactly.
    pub fn get(&self, key: &str) -> Result<String> {
        let f = |x: f64| format!("{x:?}");
        Ok(match key {
            "mode" => self.render.mode.to_string(),
            "beta1" => f(self.render.beta[0]),
            "beta2" => f(self.render.beta[1]),
            "beta3" => f(self.render.beta[2]),
            "beta4" => f(self.render.beta[3]),
            "beta5" => f(self.render.beta[4]),
            "eta" => f(self.render.eta),
            "lambda_c" => f(self.weights.lambda_c),
            "lambda_f" => f(self.weights.lambda_f),
            "lr" => f(self.adam.lr),
            "adam_beta1" => f(self.adam.beta1),
            "adam_beta2" => f(self.adam.beta2),
            "adam_eps" => f(self.adam.eps),
            "decay_window" => self.decay.window.to_string(),
            "decay_factor" => f(self.decay.factor),
            "lr_floor" => f(self.decay.floor),
            "batch_size" => self.batch_size.to_string(),
            "steps" => self.max_steps.to_string(),
            "seed" => self.seed.to_string(),
            "components" => self.components.to_string(),
            "reparam_rounds" => self.reparam_rounds.to_string(),
            "z_prune" => f(self.reparam.z_prune),
            "z_split" => f(self.reparam.z_split),
            "reparam_batch_fraction" => f(self.reparam.batch_fraction),
            "reparam_noise" => f(self.reparam.noise_sigma),
            _ => return Err(Error::Invalid(format!("unknown setting `{key}`"))),
        })
    }

    /// All settings as `key = value` lines, readable as TOML.
    pub fn to_toml(&self) -> String {
        KEYS.iter()
            .map(|k| {
                let v = self.get(k).expect("known key");
                if *k == "mode" {
                    format!("{k} = \"{v}\"\n")
                } else {
                    format!("{k} = {v}\n")
                }
            })
            .collect()
    }

    /// Applies `key=value` assignments in order, then validates.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k.trim(), v)?;
        }
        self.validate()
    }
}

/// Splits `key=value`.
pub fn split_assignment(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Invalid(format!("expected key=value, got `{s}`")))
}
