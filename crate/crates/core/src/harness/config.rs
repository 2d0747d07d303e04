//! Flat `key = value` experiment configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Measures are written
//! `gaussian:<mean>[,<mean>]:<variance>` or `csv:<path>`; relative paths are
//! resolved against the configuration file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::costs::CostFn;
use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::fp_forward::Flux;
use crate::measures::{from_density, gaussian_density, DiscreteMeasure, Grid};

/// Every key accepted by [`ExperimentConfig::parse`].
pub const KEYS: &[&str] = &[
    "drift",
    "lambda",
    "cost",
    "mu1",
    "mu2",
    "grid.L",
    "grid.n",
    "grid.dim",
    "dt",
    "T",
    "t0",
    "checkpoints",
    "ladder.n",
    "ladder.m",
    "out_dir",
    "seed",
    "cfl",
    "n_max",
    "uniqueness",
    "flux",
];

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureSpec {
    Gaussian { mean: Vec<f64>, var: f64 },
    Csv(PathBuf),
}

impl MeasureSpec {
    pub fn parse(key: &str, value: &str, base: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Config {
            key: key.to_string(),
            msg,
        };
        if let Some(rest) = value.strip_prefix("gaussian:") {
            let (mean, var) = rest
                .rsplit_once(':')
                .ok_or_else(|| bad(format!("expected gaussian:<mean>:<var>, got `{value}`")))?;
            let mean = parse_list(key, mean)?;
            let var: f64 = parse_num(key, var)?;
            if !(var > 0.0) || mean.is_empty() || mean.len() > 2 {
                return Err(bad(format!("invalid gaussian `{value}`")));
            }
            Ok(MeasureSpec::Gaussian { mean, var })
        } else if let Some(path) = value.strip_prefix("csv:") {
            Ok(MeasureSpec::Csv(resolve(base, path)))
        } else {
            Err(bad(format!("unknown measure `{value}`")))
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            MeasureSpec::Gaussian { mean, .. } => Some(mean.len()),
            MeasureSpec::Csv(_) => None,
        }
    }

    /// The measure as a histogram on `grid`.
    pub fn build(&self, grid: &Grid) -> Result<DiscreteMeasure> {
        match self {
            MeasureSpec::Gaussian { mean, var } => {
                if mean.len() != grid.dim() {
                    return Err(Error::invalid("gaussian mean and grid dimensions differ"));
                }
                from_density(gaussian_density(mean.clone(), *var), grid)
            }
            MeasureSpec::Csv(path) => {
                let mu = DiscreteMeasure::load_csv(path)?;
                deposit(&mu, grid)
            }
        }
    }
}

/// Assigns every support point of `mu` to the grid cell containing it.
pub fn deposit(mu: &DiscreteMeasure, grid: &Grid) -> Result<DiscreteMeasure> {
    if mu.dim() != grid.dim() {
        return Err(Error::invalid("measure and grid dimensions differ"));
    }
    let n = grid.cells_per_axis();
    let l = grid.half_extent();
    let cell = |c: f64| -> Result<usize> {
        if c < -l || c > l {
            return Err(Error::OutsideGrid(format!("{c} not in [{}, {l}]", -l)));
        }
        Ok((((c + l) / grid.dx()).floor() as usize).min(n - 1))
    };
    let mut w = vec![0.0; grid.len()];
    for i in 0..mu.len() {
        let p = mu.point(i);
        let k = if grid.dim() == 1 {
            cell(p[0])?
        } else {
            grid.flat(cell(p[0])?, cell(p[1])?)
        };
        w[k] += mu.weights()[i];
    }
    let total: f64 = w.iter().sum();
    DiscreteMeasure::on_grid(grid, w.iter().map(|x| x / total).collect())
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub drift: String,
    pub lambda: f64,
    pub cost: String,
    pub mu1: MeasureSpec,
    pub mu2: MeasureSpec,
    pub dim: usize,
    pub half_extent: f64,
    pub cells: usize,
    pub dt: Option<f64>,
    pub t_final: f64,
    /// Start of the decay fit for invariant-measure runs.
    pub t0: f64,
    pub checkpoints: Vec<f64>,
    pub ladder_n: Vec<usize>,
    pub ladder_m: Vec<usize>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub cfl: f64,
    /// Support budget per marginal for 2D transport problems.
    pub n_max: usize,
    pub uniqueness: bool,
    /// `upwind` or `exponential` (default).
    pub flux: Flux,
    base: PathBuf,
}

fn config_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| config_err(key, format!("cannot parse `{}`", v.trim())))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p.trim());
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Parses configuration text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                config_err(line, format!("line {}: expected key = value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(config_err(k, "unknown key"));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(config_err(k, "duplicate key"));
            }
        }
        let get = |k: &str| -> Result<&String> {
            map.get(k)
                .ok_or_else(|| config_err(k, "missing required key"))
        };
        let opt = |k: &str| map.get(k).map(String::as_str);

        let mu1 = MeasureSpec::parse("mu1", get("mu1")?, base)?;
        let mu2 = MeasureSpec::parse("mu2", get("mu2")?, base)?;
        let dim = match opt("grid.dim") {
            Some(v) => parse_num("grid.dim", v)?,
            None => mu1.dim().or(mu2.dim()).unwrap_or(1),
        };
        let t_final: f64 = parse_num("T", get("T")?)?;
        let checkpoints = match opt("checkpoints") {
            Some(v) => parse_list("checkpoints", v)?,
            None => vec![t_final],
        };
        let dt = match opt("dt") {
            None | Some("auto") => None,
            Some(v) => Some(parse_num("dt", v)?),
        };
        let cost = get("cost")?.clone();
        let cost = match cost.strip_prefix("samples:") {
            Some(p) => format!("samples:{}", resolve(base, p).display()),
            None => cost,
        };
        let cfg = Self {
            drift: get("drift")?.clone(),
            lambda: parse_num("lambda", opt("lambda").unwrap_or("0"))?,
            cost,
            mu1,
            mu2,
            dim,
            half_extent: parse_num("grid.L", get("grid.L")?)?,
            cells: parse_num("grid.n", get("grid.n")?)?,
            dt,
            t_final,
            t0: parse_num("t0", opt("t0").unwrap_or("0"))?,
            checkpoints,
            ladder_n: parse_list("ladder.n", opt("ladder.n").unwrap_or("4,16,64"))?,
            ladder_m: parse_list("ladder.m", opt("ladder.m").unwrap_or("8,32"))?,
            out_dir: resolve(base, opt("out_dir").unwrap_or("out")),
            seed: parse_num("seed", opt("seed").unwrap_or("0"))?,
            cfl: parse_num("cfl", opt("cfl").unwrap_or("0.9"))?,
            n_max: parse_num("n_max", opt("n_max").unwrap_or("512"))?,
            uniqueness: parse_num("uniqueness", opt("uniqueness").unwrap_or("true"))?,
            flux: match opt("flux").unwrap_or("exponential") {
                "upwind" => Flux::Upwind,
                "exponential" => Flux::ExponentialFitting,
                other => {
                    return Err(config_err(
                        "flux",
                        format!("expected upwind or exponential, got `{other}`"),
                    ))
                }
            },
            base: base.to_path_buf(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.dim == 1 || self.dim == 2) {
            return Err(config_err("grid.dim", "must be 1 or 2"));
        }
        if !(self.t_final > 0.0) {
            return Err(config_err("T", "must be positive"));
        }
        if self.checkpoints.is_empty() {
            return Err(config_err("checkpoints", "empty list"));
        }
        if let Some(t) = self
            .checkpoints
            .iter()
            .find(|t| !(**t >= 0.0 && **t <= self.t_final))
        {
            return Err(config_err("checkpoints", format!("{t} outside [0, T]")));
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("checkpoints", "must be strictly increasing"));
        }
        if !(self.t0 >= 0.0 && self.t0 < self.t_final) {
            return Err(config_err("t0", "must lie in [0, T)"));
        }
        if self.ladder_n.is_empty()
            || self.ladder_m.is_empty()
            || self.ladder_n.contains(&0)
            || self.ladder_m.contains(&0)
        {
            return Err(config_err("ladder.n", "ladder levels must be positive"));
        }
        if self.n_max < 2 {
            return Err(config_err("n_max", "must be at least 2"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(config_err("dt", "must be positive or `auto`"));
            }
        }
        self.grid()
            .map_err(|e| config_err("grid.n", e.to_string()))?;
        self.drift_spec()
            .map_err(|e| config_err("drift", e.to_string()))?;
        self.cost_fn()
            .map_err(|e| config_err("cost", e.to_string()))?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.half_extent, self.cells)
    }

    /// The drift preset; fails if `lambda` exceeds its certificate.
    pub fn drift_spec(&self) -> Result<DriftSpec> {
        DriftSpec::preset(&self.drift, self.dim, self.lambda)
    }

    pub fn cost_fn(&self) -> Result<CostFn> {
        CostFn::parse(&self.cost)
    }

    /// Directory against which relative paths were resolved.
    pub fn base_dir(&self) -> &Path {
        &self.base
    }

    /// All `(n, m)` pairs of the ladder, `n` varying fastest.
    pub fn ladder_pairs(&self) -> Vec<(usize, usize)> {
        self.ladder_m
            .iter()
            .flat_map(|&m| self.ladder_n.iter().map(move |&n| (n, m)))
            .collect()
    }

    /// Canonical `key = value` rendering.
    pub fn render(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let joinu = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let meas = |m: &MeasureSpec| match m {
            MeasureSpec::Gaussian { mean, var } => format!("gaussian:{}:{}", join(mean), var),
            MeasureSpec::Csv(p) => format!("csv:{}", p.display()),
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("drift", self.drift.clone());
        kv("lambda", self.lambda.to_string());
        kv("cost", self.cost.clone());
        kv("mu1", meas(&self.mu1));
        kv("mu2", meas(&self.mu2));
        kv("grid.dim", self.dim.to_string());
        kv("grid.L", self.half_extent.to_string());
        kv("grid.n", self.cells.to_string());
        kv("dt", self.dt.map_or("auto".into(), |d| d.to_string()));
        kv("T", self.t_final.to_string());
        kv("t0", self.t0.to_string());
        kv("checkpoints", join(&self.checkpoints));
        kv("ladder.n", joinu(&self.ladder_n));
        kv("ladder.m", joinu(&self.ladder_m));
        kv("seed", self.seed.to_string());
        kv("cfl", self.cfl.to_string());
        kv("n_max", self.n_max.to_string());
        kv("uniqueness", self.uniqueness.to_string());
        kv(
            "flux",
            match self.flux {
                Flux::Upwind => "upwind",
                Flux::ExponentialFitting => "exponential",
            }
            .into(),
        );
        s
    }
}
