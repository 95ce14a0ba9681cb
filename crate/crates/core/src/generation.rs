use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 256;

/// Sampling controls sent to a generation endpoint.
///
/// Sampling is switched off whenever temperature or top-p is zero; this is
/// enforced by every constructor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    temperature: f64,
    top_p: f64,
    do_sample: bool,
    max_new_tokens: u32,
}

impl GenerationParams {
    pub fn new(temperature: f64, top_p: f64, max_new_tokens: u32) -> Result<Self> {
        if !(0.0..=2.0).contains(&temperature) {
            return Err(Error::domain(format!(
                "temperature must be in [0, 2], got {temperature}"
            )));
        }
        if !(0.0..=1.0).contains(&top_p) {
            return Err(Error::domain(format!("top-p must be in [0, 1], got {top_p}")));
        }
        if max_new_tokens == 0 {
            return Err(Error::domain("max-new-tokens must be at least 1"));
        }
        Ok(GenerationParams {
            temperature,
            top_p,
            do_sample: temperature != 0.0 && top_p != 0.0,
            max_new_tokens,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn top_p(&self) -> f64 {
        self.top_p
    }

    pub fn do_sample(&self) -> bool {
        self.do_sample
    }

    pub fn max_new_tokens(&self) -> u32 {
        self.max_new_tokens
    }
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams::new(0.7, 0.9, DEFAULT_MAX_NEW_TOKENS).unwrap()
    }
}

pub fn normalize_params(temperature: f64, top_p: f64) -> Result<GenerationParams> {
    GenerationParams::new(temperature, top_p, DEFAULT_MAX_NEW_TOKENS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn do_sample_rule() {
        assert!(normalize_params(0.7, 0.9).unwrap().do_sample());
        assert!(!normalize_params(0.0, 0.9).unwrap().do_sample());
        assert!(!normalize_params(0.7, 0.0).unwrap().do_sample());
        assert!(!normalize_params(0.0, 0.0).unwrap().do_sample());
    }

    #[test]
    fn ranges() {
        assert!(normalize_params(2.5, 0.5).is_err());
        assert!(normalize_params(-0.1, 0.5).is_err());
        assert!(normalize_params(0.5, 1.01).is_err());
        assert!(normalize_params(f64::NAN, 0.5).is_err());
        assert!(GenerationParams::new(0.5, 0.5, 0).is_err());
    }
}
