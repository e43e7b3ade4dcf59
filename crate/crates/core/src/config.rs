//! Line-based `key=value` deployment configuration shared by dealer, parties and clients.

use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::field::{Field, PRODUCTION_MODULUS};
use crate::preproc::comparison_bits;
use crate::sharing::{Mode, ProtocolConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: missing required key {0}")]
    Missing(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    pub modulus: u128,
    pub n_bits: u16,
    pub n_treatments: u16,
    pub threshold_b: u64,
    pub kappa: u32,
    pub mode: Mode,
    pub max_queries_per_client: u64,
    pub timeout_secs: u64,
    /// Client-side: party endpoints, identity and mask file.
    pub party0: Option<String>,
    pub party1: Option<String>,
    pub client_id: u8,
    pub mask_file: Option<PathBuf>,
}

impl Config {
    /// A configuration with defaults for everything but the database shape.
    pub fn new(n_bits: u16, n_treatments: u16, threshold_b: u64) -> Config {
        Config {
            modulus: PRODUCTION_MODULUS,
            n_bits,
            n_treatments,
            threshold_b,
            kappa: 40,
            mode: Mode::SemiHonest,
            max_queries_per_client: 100,
            timeout_secs: 30,
            party0: None,
            party1: None,
            client_id: 0,
            mask_file: None,
        }
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut modulus = PRODUCTION_MODULUS;
        let (mut n_bits, mut n_treatments, mut threshold_b) = (None, None, None);
        let mut cfg = Config::new(0, 0, 0);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap().trim();
            if l.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Parse { line, msg };
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {l:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            fn num<T: std::str::FromStr>(v: &str, line: usize, k: &str) -> Result<T, ConfigError> {
                v.parse().map_err(|_| ConfigError::Parse {
                    line,
                    msg: format!("{k}: cannot parse {v:?}"),
                })
            }
            match k {
                "modulus" => modulus = num(v, line, k)?,
                "n_bits" => n_bits = Some(num(v, line, k)?),
                "n_treatments" => n_treatments = Some(num(v, line, k)?),
                "threshold_b" => threshold_b = Some(num(v, line, k)?),
                "kappa" => cfg.kappa = num(v, line, k)?,
                "mode" => cfg.mode = v.parse().map_err(|e: crate::sharing::ShareError| err(e.to_string()))?,
                "max_queries_per_client" => cfg.max_queries_per_client = num(v, line, k)?,
                "timeout_secs" => cfg.timeout_secs = num(v, line, k)?,
                "party0" => cfg.party0 = Some(v.to_string()),
                "party1" => cfg.party1 = Some(v.to_string()),
                "client_id" => cfg.client_id = num(v, line, k)?,
                "mask_file" => cfg.mask_file = Some(PathBuf::from(v)),
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.modulus = modulus;
        cfg.n_bits = n_bits.ok_or(ConfigError::Missing("n_bits"))?;
        cfg.n_treatments = n_treatments.ok_or(ConfigError::Missing("n_treatments"))?;
        cfg.threshold_b = threshold_b.ok_or(ConfigError::Missing("threshold_b"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let mut cfg = Config::parse(&std::fs::read_to_string(path)?)?;
        // relative mask paths are resolved against the config file
        if let (Some(m), Some(dir)) = (&cfg.mask_file, path.parent()) {
            if m.is_relative() {
                cfg.mask_file = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "modulus={}\nn_bits={}\nn_treatments={}\nthreshold_b={}\nkappa={}\nmode={}\nmax_queries_per_client={}\ntimeout_secs={}\n",
            self.modulus,
            self.n_bits,
            self.n_treatments,
            self.threshold_b,
            self.kappa,
            self.mode,
            self.max_queries_per_client,
            self.timeout_secs
        );
        if let Some(p) = &self.party0 {
            s += &format!("party0={p}\n");
        }
        if let Some(p) = &self.party1 {
            s += &format!("party1={p}\n");
        }
        if self.client_id != 0 {
            s += &format!("client_id={}\n", self.client_id);
        }
        if let Some(m) = &self.mask_file {
            s += &format!("mask_file={}\n", m.display());
        }
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = self.field()?;
        if self.n_bits == 0 || self.n_treatments == 0 {
            return Err(ConfigError::Invalid("n_bits and n_treatments must be positive".into()));
        }
        if self.threshold_b > self.n_bits as u64 {
            return Err(ConfigError::Invalid(format!(
                "threshold_b {} exceeds n_bits {}",
                self.threshold_b, self.n_bits
            )));
        }
        let p = ProtocolConfig::new(field, self.mode, self.kappa).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        p.check_comparison_bound(self.ell())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn field(&self) -> Result<Field, ConfigError> {
        Field::new(self.modulus).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn protocol(&self) -> ProtocolConfig {
        let field = Field::new_unchecked(self.modulus);
        ProtocolConfig::new(field, self.mode, self.kappa).expect("validated config")
    }

    /// Bit length of the similarity comparison.
    pub fn ell(&self) -> u32 {
        comparison_bits(self.n_bits as u64)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_full_and_defaults() {
        let text = "# deployment\nmodulus=2305843009213693951\nn_bits=128\nn_treatments=16\nthreshold_b=20\nkappa=40\nmode=authenticated\nmax_queries_per_client=5\ntimeout_secs=3\nparty0=127.0.0.1:7000 # p0\nparty1=127.0.0.1:7001\n";
        let c = Config::parse(text).unwrap();
        assert_eq!(c.modulus, crate::field::TEST_MODULUS);
        assert_eq!(c.mode, Mode::Authenticated);
        assert_eq!(c.max_queries_per_client, 5);
        assert_eq!(c.party0.as_deref(), Some("127.0.0.1:7000"));
        assert_eq!(c.ell(), 8);
        assert_eq!(Config::parse(&c.render()).unwrap(), c);

        let d = Config::parse("n_bits=8\nn_treatments=2\nthreshold_b=2\n").unwrap();
        assert_eq!(d.modulus, PRODUCTION_MODULUS);
        assert_eq!((d.kappa, d.max_queries_per_client, d.timeout_secs), (40, 100, 30));
        assert_eq!(d.mode, Mode::SemiHonest);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(Config::parse("n_bits=8\n"), Err(ConfigError::Missing("n_treatments"))));
        assert!(matches!(
            Config::parse("n_bits=8\nn_treatments=2\nthreshold_b=2\ncolour=blue"),
            Err(ConfigError::Parse { line: 4, .. })
        ));
        assert!(Config::parse("n_bits=8\nn_treatments=2\nthreshold_b=9").is_err());
        assert!(Config::parse("modulus=100\nn_bits=8\nn_treatments=2\nthreshold_b=2").is_err());
        // 2^61-1 is too small for ell=8 with kappa=60
        assert!(Config::parse("modulus=2305843009213693951\nkappa=60\nn_bits=128\nn_treatments=2\nthreshold_b=2").is_err());
    }
}
