use std::path::Path;

use molalign_core::fragment::Scheme;
use molalign_core::train::TrainConfig;

use crate::CliError;

/// Options from a `key = value` file; command-line flags override them.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub scheme: Option<Scheme>,
    pub theta: Option<f64>,
    pub workers: Option<usize>,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<RunConfig, String> {
        let mut c = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| format!("line {}: {m}", n + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "scheme" => c.scheme = Some(value.parse().map_err(|e| at(format!("{e}")))?),
                "theta" => c.theta = Some(value.parse().map_err(|_| at(format!("invalid theta {value:?}")))?),
                "workers" => c.workers = Some(value.parse().map_err(|_| at(format!("invalid workers {value:?}")))?),
                _ => c.train.set(key, value).map_err(at)?,
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixes_run_and_training_keys() {
        let c = RunConfig::parse("scheme = recap\ntheta = 0.4\nlr = 0.001\nseed = 9\n").unwrap();
        assert_eq!(c.scheme, Some(Scheme::Recap));
        assert_eq!(c.theta, Some(0.4));
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.train.seed, 9);
        assert!(RunConfig::parse("scheme = other").unwrap_err().starts_with("line 1"));
        assert!(RunConfig::parse("\n\nfoo = 1").unwrap_err().starts_with("line 3"));
    }
}
