//! Run configuration: a `key = value` file merged with command-line overrides.
//!
//! Recognized keys (file and flag names agree, `-` and `_` are interchangeable):
//!
//! | key             | meaning                                              | default        |
//! |-----------------|------------------------------------------------------|----------------|
//! | `model`         | `sar` or `ar1`                                       | `sar`          |
//! | `n`             | AR(1) sample size                                    | `16`           |
//! | `lattice`       | lattice shape `RxC` for built-in SAR weights         | `4x4`          |
//! | `criterion`     | `queen` or `rook`                                    | `queen`        |
//! | `normalization` | `binary` or `row`                                    | `binary`       |
//! | `weights`       | weights file (`.mtx` Matrix Market, else edge list)  | lattice        |
//! | `design`        | headerless CSV design, or `intercept`                | `intercept`    |
//! | `test`          | `co`, `lbi`, `poi` or `ee`                           | `co` / `lbi`   |
//! | `rho_bar`       | POI alternative as a fraction of `a`                 | `0.5`          |
//! | `alpha`         | level                                                | `0.05`         |
//! | `eps`           | comma-separated enhancement offsets, may be empty    | `0.002,0.006,0.01` |
//! | `grid_n`        | number of grid points                                | `60`           |
//! | `grid_max`      | largest grid point as a fraction of `a`              | `0.9999`       |
//! | `mc_reps`       | Monte Carlo replications                             | `1000000`      |
//! | `seed`          | Monte Carlo seed                                     | `1`            |
//! | `out`           | output directory                                     | `zpt-out`      |
//! | `k`             | regressors per random design in `scan`               | `2`            |
//! | `reps`          | random designs in `scan`                             | `200`          |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

use zpt_core::io;
use zpt_core::model::{build_lattice_weights, CovarianceModel, Criterion, DesignMatrix, Normalization, WeightsMatrix};

pub const KEYS: [&str; 18] = [
    "model",
    "n",
    "lattice",
    "criterion",
    "normalization",
    "weights",
    "design",
    "test",
    "rho_bar",
    "alpha",
    "eps",
    "grid_n",
    "grid_max",
    "mc_reps",
    "seed",
    "out",
    "k",
    "reps",
];

pub const MIN_MC_REPS: usize = 10_000;

/// Unresolved settings, in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

fn canonical_key(key: &str) -> Result<String> {
    let k = key.trim().replace('-', "_");
    if KEYS.contains(&k.as_str()) {
        Ok(k)
    } else {
        Err(anyhow!("unknown configuration key `{}`", key.trim()))
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            let key = canonical_key(k).with_context(|| format!("line {}", i + 1))?;
            cfg.values.insert(key, v.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        self.values.insert(canonical_key(key)?, value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| anyhow!("invalid `{key}` = `{v}`: {e}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Ar1 { n: usize },
    Lattice { rows: usize, cols: usize, criterion: Criterion, normalization: Normalization },
    WeightsFile { path: PathBuf, normalization: Normalization },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DesignSource {
    Intercept,
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestChoice {
    CliffOrd,
    Lbi,
    Poi { fraction: f64 },
    Ee,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub design: DesignSource,
    pub test: TestChoice,
    pub alpha: f64,
    pub eps: Vec<f64>,
    pub grid_n: usize,
    pub grid_max: f64,
    pub mc_reps: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub scan_k: usize,
    pub scan_reps: usize,
}

fn parse_criterion(s: &str) -> Result<Criterion> {
    match s.to_ascii_lowercase().as_str() {
        "queen" => Ok(Criterion::Queen),
        "rook" => Ok(Criterion::Rook),
        _ => bail!("criterion must be `queen` or `rook`, got `{s}`"),
    }
}

fn parse_normalization(s: &str) -> Result<Normalization> {
    match s.to_ascii_lowercase().as_str() {
        "binary" => Ok(Normalization::Binary),
        "row" | "row_standardized" | "rowstandardized" => Ok(Normalization::RowStandardized),
        _ => bail!("normalization must be `binary` or `row`, got `{s}`"),
    }
}

fn parse_lattice(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s
        .to_ascii_lowercase()
        .split_once('x')
        .map(|(r, c)| (r.trim().to_string(), c.trim().to_string()))
        .ok_or_else(|| anyhow!("lattice must look like `4x4`, got `{s}`"))?;
    Ok((r.parse()?, c.parse()?))
}

pub fn parse_eps(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| anyhow!("invalid epsilon `{t}`: {e}")))
        .collect()
}

fn fmt_normalization(n: Normalization) -> &'static str {
    match n {
        Normalization::Binary => "binary",
        Normalization::RowStandardized => "row",
    }
}

impl RunConfig {
    pub fn resolve(raw: &RawConfig) -> Result<Self> {
        let family = raw.get("model").unwrap_or("sar").to_ascii_lowercase();
        let normalization = parse_normalization(raw.get("normalization").unwrap_or("binary"))?;
        let model = match family.as_str() {
            "ar1" => ModelSpec::Ar1 { n: raw.parsed("n", 16usize)? },
            "sar" => match raw.get("weights") {
                Some(p) => ModelSpec::WeightsFile { path: PathBuf::from(p), normalization },
                None => {
                    let (rows, cols) = parse_lattice(raw.get("lattice").unwrap_or("4x4"))?;
                    let criterion = parse_criterion(raw.get("criterion").unwrap_or("queen"))?;
                    ModelSpec::Lattice { rows, cols, criterion, normalization }
                }
            },
            other => bail!("model must be `sar` or `ar1`, got `{other}`"),
        };
        let design = match raw.get("design") {
            None => DesignSource::Intercept,
            Some(s) if s.eq_ignore_ascii_case("intercept") => DesignSource::Intercept,
            Some(p) => DesignSource::File(PathBuf::from(p)),
        };
        let default_test = if matches!(model, ModelSpec::Ar1 { .. }) { "lbi" } else { "co" };
        let test = match raw.get("test").unwrap_or(default_test).to_ascii_lowercase().as_str() {
            "co" | "cliff_ord" | "clifford" => TestChoice::CliffOrd,
            "lbi" => TestChoice::Lbi,
            "poi" => TestChoice::Poi { fraction: raw.parsed("rho_bar", 0.5)? },
            "ee" => TestChoice::Ee,
            other => bail!("test must be one of co, lbi, poi, ee; got `{other}`"),
        };
        if let TestChoice::Poi { fraction } = test {
            if !(fraction > 0.0 && fraction < 1.0) {
                bail!("rho_bar is a fraction of a and must lie in (0, 1), got {fraction}");
            }
        }
        let alpha: f64 = raw.parsed("alpha", 0.05)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            bail!("alpha must lie in (0, 1), got {alpha}");
        }
        let eps = match raw.get("eps") {
            Some(s) => parse_eps(s)?,
            None => vec![0.002, 0.006, 0.01],
        };
        let grid_n = raw.parsed("grid_n", 60usize)?;
        let grid_max = raw.parsed("grid_max", 0.9999f64)?;
        if grid_n < 2 {
            bail!("grid_n must be at least 2");
        }
        if !(grid_max > 0.0 && grid_max < 1.0) {
            bail!("grid_max is a fraction of a and must lie in (0, 1), got {grid_max}");
        }
        let mc_reps = raw.parsed("mc_reps", 1_000_000usize)?;
        if mc_reps < MIN_MC_REPS {
            bail!("mc_reps must be at least {MIN_MC_REPS}, got {mc_reps}");
        }
        Ok(Self {
            model,
            design,
            test,
            alpha,
            eps,
            grid_n,
            grid_max,
            mc_reps,
            seed: raw.parsed("seed", 1u64)?,
            out: PathBuf::from(raw.get("out").unwrap_or("zpt-out")),
            scan_k: raw.parsed("k", 2usize)?,
            scan_reps: raw.parsed("reps", 200usize)?,
        })
    }

    /// Resolved settings as `key = value` lines, the input of the config fingerprint.
    pub fn lines(&self) -> Vec<String> {
        let mut v = Vec::new();
        match &self.model {
            ModelSpec::Ar1 { n } => {
                v.push("model = ar1".to_string());
                v.push(format!("n = {n}"));
            }
            ModelSpec::Lattice { rows, cols, criterion, normalization } => {
                v.push("model = sar".to_string());
                v.push(format!("lattice = {rows}x{cols}"));
                v.push(format!("criterion = {}", if *criterion == Criterion::Queen { "queen" } else { "rook" }));
                v.push(format!("normalization = {}", fmt_normalization(*normalization)));
            }
            ModelSpec::WeightsFile { path, normalization } => {
                v.push("model = sar".to_string());
                v.push(format!("weights = {}", path.display()));
                v.push(format!("normalization = {}", fmt_normalization(*normalization)));
            }
        }
        v.push(match &self.design {
            DesignSource::Intercept => "design = intercept".to_string(),
            DesignSource::File(p) => format!("design = {}", p.display()),
        });
        v.push(match self.test {
            TestChoice::CliffOrd => "test = co".to_string(),
            TestChoice::Lbi => "test = lbi".to_string(),
            TestChoice::Poi { fraction } => format!("test = poi\nrho_bar = {fraction}"),
            TestChoice::Ee => "test = ee".to_string(),
        });
        v.push(format!("alpha = {}", self.alpha));
        let eps: Vec<String> = self.eps.iter().map(|e| e.to_string()).collect();
        v.push(format!("eps = {}", eps.join(",")));
        v.push(format!("grid_n = {}", self.grid_n));
        v.push(format!("grid_max = {}", self.grid_max));
        v.push(format!("mc_reps = {}", self.mc_reps));
        v.push(format!("seed = {}", self.seed));
        v.push(format!("k = {}", self.scan_k));
        v.push(format!("reps = {}", self.scan_reps));
        v.into_iter().flat_map(|s| s.lines().map(str::to_string).collect::<Vec<_>>()).collect()
    }

    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for line in self.lines() {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        let mut s = String::new();
        for b in hasher.finalize() {
            let _ = write!(s, "{b:02x}");
        }
        s
    }

    /// Epsilons for the enhanced tests; each must lie strictly between 0 and alpha.
    pub fn checked_eps(&self) -> Result<&[f64]> {
        if let Some(bad) = self.eps.iter().find(|&&e| !(e > 0.0 && e < self.alpha)) {
            bail!("every epsilon must lie in (0, alpha = {}), got {bad}", self.alpha);
        }
        Ok(&self.eps)
    }

    pub fn build_model(&self) -> Result<CovarianceModel> {
        Ok(match &self.model {
            ModelSpec::Ar1 { n } => CovarianceModel::ar1(*n)?,
            ModelSpec::Lattice { rows, cols, criterion, normalization } => {
                CovarianceModel::sar(build_lattice_weights(*rows, *cols, *criterion, *normalization)?)
            }
            ModelSpec::WeightsFile { path, normalization } => {
                let mut m = io::load_weights(path).with_context(|| format!("loading weights {}", path.display()))?;
                if *normalization == Normalization::RowStandardized {
                    for mut row in m.row_iter_mut() {
                        let s: f64 = row.sum();
                        if s > 0.0 {
                            row /= s;
                        }
                    }
                }
                CovarianceModel::sar(WeightsMatrix::new(m)?)
            }
        })
    }

    pub fn build_design(&self, n: usize) -> Result<DesignMatrix> {
        match &self.design {
            DesignSource::Intercept => Ok(DesignMatrix::intercept(n)?),
            DesignSource::File(p) => {
                let m = io::load_design(p).with_context(|| format!("loading design {}", p.display()))?;
                if m.nrows() != n {
                    bail!("design has {} rows but the model has n = {n}", m.nrows());
                }
                Ok(DesignMatrix::new(m)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<RunConfig> {
        RunConfig::resolve(&RawConfig::parse(text)?)
    }

    #[test]
    fn defaults_and_fingerprint() {
        let a = resolve("").unwrap();
        assert_eq!(a.alpha, 0.05);
        assert_eq!(a.eps, vec![0.002, 0.006, 0.01]);
        assert_eq!(a.fingerprint(), resolve("# nothing\n").unwrap().fingerprint());
        assert_ne!(a.fingerprint(), resolve("alpha = 0.1").unwrap().fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(resolve("colour = blue").is_err());
        assert!(resolve("alpha = 1.5").is_err());
        assert!(resolve("mc_reps = 100").is_err());
        assert!(resolve("grid_max = 1").is_err());
        assert!(resolve("eps = 0.2").unwrap().checked_eps().is_err());
        assert!(resolve("eps = ").unwrap().checked_eps().unwrap().is_empty());
    }

    #[test]
    fn dash_and_underscore_keys_agree() {
        let a = resolve("grid-n = 7").unwrap();
        let b = resolve("grid_n = 7").unwrap();
        assert_eq!(a.grid_n, 7);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }
}
