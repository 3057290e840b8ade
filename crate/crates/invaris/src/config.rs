//! Runtime configuration: every tunable of the engine and the solver in
//! one place, loadable from a flat `key=value` file with CLI overrides.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("bad config line '{0}': expected key=value")]
    BadLine(String),
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("bad value '{value}' for '{key}'")]
    BadValue { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AisConfig {
    /// Master seed; every random draw in the pipeline derives from it.
    pub seed: u64,
    /// Memory pool capacity.
    pub capacity: usize,
    /// Clone count scale for the response loop.
    pub clone_factor: u32,
    /// Base per-slot mutation probability; the effective rate is
    /// `base_rate * (1 - affinity)`.
    pub base_rate: f64,
    /// Generation budget per fragment.
    pub max_generations: u32,
    /// Fruitless generations before a receptor edit fires.
    pub stall: u32,
    /// Random valuations per oracle call.
    pub oracle_trials: u32,
    /// Iterations checked per oracle valuation.
    pub oracle_horizon: u32,
    /// Include fragments whose update term is a constant in the shape.
    pub include_constant_updates: bool,
    /// Traces added per stabilization step of the solver.
    pub trace_batch: usize,
    /// Hard cap on traces consumed by the solver.
    pub max_traces: usize,
    /// Held-out traces used to re-check instantiated invariants.
    pub holdout_traces: usize,
    /// Inclusive sampling range for program inputs.
    pub input_range: (i64, i64),
    /// Interpreter step budget per run.
    pub fuel: u64,
    /// Largest exponent the solver will evaluate; over-cap rows are skipped.
    pub exponent_cap: u64,
}

impl Default for AisConfig {
    fn default() -> Self {
        AisConfig {
            seed: 42,
            capacity: 64,
            clone_factor: 8,
            base_rate: 0.3,
            max_generations: 500,
            stall: 10,
            oracle_trials: 20,
            oracle_horizon: 12,
            include_constant_updates: false,
            trace_batch: 5,
            max_traces: 100,
            holdout_traces: 10,
            input_range: (0, 5),
            fuel: 1_000_000,
            exponent_cap: 64,
        }
    }
}

impl AisConfig {
    /// Applies `key=value` lines (blank lines and `#` comments allowed).
    pub fn apply_kv_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::BadLine(line.to_string()))?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "capacity" => self.capacity = parse(key, value)?,
            "clone_factor" => self.clone_factor = parse(key, value)?,
            "base_rate" => self.base_rate = parse(key, value)?,
            "max_generations" => self.max_generations = parse(key, value)?,
            "stall" => self.stall = parse(key, value)?,
            "oracle_trials" => self.oracle_trials = parse(key, value)?,
            "oracle_horizon" => self.oracle_horizon = parse(key, value)?,
            "include_constant_updates" => self.include_constant_updates = parse(key, value)?,
            "trace_batch" => self.trace_batch = parse(key, value)?,
            "max_traces" => self.max_traces = parse(key, value)?,
            "holdout_traces" => self.holdout_traces = parse(key, value)?,
            "input_range" => self.input_range = parse_range(key, value)?,
            "fuel" => self.fuel = parse(key, value)?,
            "exponent_cap" => self.exponent_cap = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.capacity == 0
            || self.clone_factor == 0
            || self.max_generations == 0
            || self.stall == 0
            || self.oracle_trials == 0
            || self.oracle_horizon == 0
            || self.trace_batch == 0
            || self.max_traces == 0
            || self.fuel == 0
        {
            return Err(ConfigError::Invalid(
                "numeric fields must be positive".into(),
            ));
        }
        if !(self.base_rate > 0.0 && self.base_rate <= 1.0) {
            return Err(ConfigError::Invalid("base_rate must be in (0, 1]".into()));
        }
        if self.input_range.0 > self.input_range.1 {
            return Err(ConfigError::Invalid("input_range is empty".into()));
        }
        Ok(())
    }
}

fn parse_range(key: &str, value: &str) -> Result<(i64, i64), ConfigError> {
    let bad = || ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    };
    let (lo, hi) = value.split_once(',').ok_or_else(bad)?;
    Ok((
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_text_overrides_defaults() {
        let mut cfg = AisConfig::default();
        cfg.apply_kv_text(
            "# comment\nseed=7\n\nbase_rate=0.5\ninput_range=1,8\ninclude_constant_updates=true\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.base_rate, 0.5);
        assert_eq!(cfg.input_range, (1, 8));
        assert!(cfg.include_constant_updates);
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_keys_and_values_are_rejected() {
        let mut cfg = AisConfig::default();
        assert!(matches!(
            cfg.apply_kv("nope", "1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            cfg.apply_kv("seed", "abc"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            cfg.apply_kv_text("just a line"),
            Err(ConfigError::BadLine(_))
        ));
    }

    #[test]
    fn validation_catches_out_of_range_rates() {
        let mut cfg = AisConfig {
            base_rate: 0.0,
            ..AisConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.base_rate = 1.5;
        assert!(cfg.validate().is_err());
        cfg.base_rate = 1.0;
        assert!(cfg.validate().is_ok());
        cfg.input_range = (5, 4);
        assert!(cfg.validate().is_err());
    }
}
