//! Flat `dotted.key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Shape;
use crate::weights::WeightPreset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Solve,
    Continue,
    CheckWeight,
    Sweep,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Continue => "continue",
            Mode::CheckWeight => "check_weight",
            Mode::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsPreset {
    Constant,
    GaussianBump,
    Checker,
}

impl RhsPreset {
    pub fn name(self) -> &'static str {
        match self {
            RhsPreset::Constant => "constant",
            RhsPreset::GaussianBump => "gaussian_bump",
            RhsPreset::Checker => "checker",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub dim: usize,
    pub shape: Shape,
    pub resolution: usize,
    pub weight: WeightPreset,
    pub rhs: RhsPreset,
    pub rhs_scale: f64,
    pub q: f64,
    /// Fixed exponent for `solve`; optional elsewhere.
    pub p: Option<f64>,
    /// Depth of the default schedule `1 + 2^{-k}`.
    pub k_max: Option<usize>,
    pub epsilon0: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub strict_h0: bool,
    pub seed: u64,
    pub sweep_rhs_scales: Vec<f64>,
}

const KEYS: &[&str] = &[
    "mode",
    "domain.dim",
    "domain.shape",
    "domain.resolution",
    "weight.preset",
    "weight.c",
    "weight.k",
    "weight.r0",
    "rhs.preset",
    "rhs.scale",
    "exponents.q",
    "exponents.p",
    "exponents.k_max",
    "solver.epsilon0",
    "solver.tol",
    "solver.max_iter",
    "output.csv",
    "output.json",
    "strict_h0",
    "seed",
    "sweep.rhs_scales",
];

/// Raw `key -> (value, line)` table; line 0 marks a command-line override.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = split_pair(body, line_no)?;
            if raw.entries.contains_key(key) {
                return Err(bad(key, line_no, "duplicate key"));
            }
            raw.insert(key, value, line_no)?;
        }
        Ok(raw)
    }

    /// Applies `key=value`, replacing any earlier value.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (key, value) = split_pair(pair.trim(), 0)?;
        self.insert(key, value, 0)
    }

    fn insert(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(bad(key, line, "unknown key"));
        }
        self.entries.insert(key.to_string(), (value.to_string(), line));
        Ok(())
    }

    fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn required(&self, key: &str) -> Result<(&str, usize)> {
        self.get(key).ok_or_else(|| Error::MissingKey { key: key.to_string() })
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<(T, usize)>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(|x| Some((x, line))).map_err(|e| bad(key, line, &e.to_string())),
        }
    }

    fn required_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<(T, usize)>
    where
        T::Err: std::fmt::Display,
    {
        self.parsed(key)?.ok_or_else(|| Error::MissingKey { key: key.to_string() })
    }

    pub fn build(&self) -> Result<RunConfig> {
        let (mode_s, mode_line) = self.required("mode")?;
        let mode = match mode_s {
            "solve" => Mode::Solve,
            "continue" => Mode::Continue,
            "check_weight" => Mode::CheckWeight,
            "sweep" => Mode::Sweep,
            _ => return Err(bad("mode", mode_line, "expected solve, continue, check_weight or sweep")),
        };

        let (dim, dim_line) = self.required_parsed::<usize>("domain.dim")?;
        if !(1..=3).contains(&dim) {
            return Err(bad("domain.dim", dim_line, "dimension must be 1, 2 or 3"));
        }
        let (shape, shape_line) = self.required_parsed::<Shape>("domain.shape")?;
        let shape_ok = match shape {
            Shape::Interval => dim == 1,
            Shape::Square => dim >= 2,
            Shape::Disk => dim == 2,
        };
        if !shape_ok {
            return Err(bad("domain.shape", shape_line, &format!("{} does not fit dimension {dim}", shape.name())));
        }
        let (resolution, res_line) = self.required_parsed::<usize>("domain.resolution")?;
        if resolution < 4 {
            return Err(bad("domain.resolution", res_line, "resolution must be at least 4"));
        }

        let weight = self.weight()?;

        let (rhs_s, rhs_line) = self.required("rhs.preset")?;
        let rhs = match rhs_s {
            "constant" => RhsPreset::Constant,
            "gaussian_bump" => RhsPreset::GaussianBump,
            "checker" => RhsPreset::Checker,
            _ => return Err(bad("rhs.preset", rhs_line, "expected constant, gaussian_bump or checker")),
        };
        let rhs_scale = self.finite("rhs.scale")?.unwrap_or(1.0);

        let (q, q_line) = self.required_parsed::<f64>("exponents.q")?;
        if !(q > 1.0 && q.is_finite()) {
            return Err(bad("exponents.q", q_line, "q must exceed 1"));
        }
        let p = match self.parsed::<f64>("exponents.p")? {
            Some((p, line)) if !(p > 1.0 && p.is_finite()) => return Err(bad("exponents.p", line, "p must exceed 1")),
            other => other.map(|x| x.0),
        };
        let k_max = match self.parsed::<usize>("exponents.k_max")? {
            Some((k, line)) if !(1..=52).contains(&k) => {
                return Err(bad("exponents.k_max", line, "k_max must lie in 1..=52"))
            }
            other => other.map(|x| x.0),
        };
        match mode {
            Mode::Solve if p.is_none() => return Err(Error::MissingKey { key: "exponents.p".into() }),
            Mode::Continue | Mode::Sweep if k_max.is_none() => {
                return Err(Error::MissingKey { key: "exponents.k_max".into() })
            }
            Mode::CheckWeight if p.is_none() && k_max.is_none() => {
                return Err(Error::MissingKey { key: "exponents.p".into() })
            }
            _ => {}
        }

        let epsilon0 = self.finite("solver.epsilon0")?.unwrap_or(1e-2);
        if epsilon0 < 0.0 {
            return Err(bad("solver.epsilon0", self.line("solver.epsilon0"), "epsilon0 must be >= 0"));
        }
        let tol = self.finite("solver.tol")?.unwrap_or(1e-9);
        if tol <= 0.0 {
            return Err(bad("solver.tol", self.line("solver.tol"), "tol must be positive"));
        }
        let max_iter = match self.parsed::<usize>("solver.max_iter")? {
            Some((0, line)) => return Err(bad("solver.max_iter", line, "max_iter must be positive")),
            other => other.map(|x| x.0).unwrap_or(200),
        };

        let csv = self.path("output.csv")?;
        let json = self.path("output.json")?;
        let strict_h0 = self.parsed::<bool>("strict_h0")?.map(|x| x.0).unwrap_or(false);
        let seed = self.parsed::<u64>("seed")?.map(|x| x.0).unwrap_or(0);

        let sweep_rhs_scales = match self.get("sweep.rhs_scales") {
            None if mode == Mode::Sweep => return Err(Error::MissingKey { key: "sweep.rhs_scales".into() }),
            None => Vec::new(),
            Some((v, line)) => {
                let list = v
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| bad("sweep.rhs_scales", line, &e.to_string()))?;
                if list.is_empty() || list.iter().any(|x| !x.is_finite()) {
                    return Err(bad("sweep.rhs_scales", line, "need a comma-separated list of finite reals"));
                }
                list
            }
        };

        Ok(RunConfig {
            mode,
            dim,
            shape,
            resolution,
            weight,
            rhs,
            rhs_scale,
            q,
            p,
            k_max,
            epsilon0,
            tol,
            max_iter,
            csv,
            json,
            strict_h0,
            seed,
            sweep_rhs_scales,
        })
    }

    fn line(&self, key: &str) -> usize {
        self.get(key).map(|x| x.1).unwrap_or(0)
    }

    fn finite(&self, key: &str) -> Result<Option<f64>> {
        match self.parsed::<f64>(key)? {
            Some((v, line)) if !v.is_finite() => Err(bad(key, line, "value must be finite")),
            other => Ok(other.map(|x| x.0)),
        }
    }

    fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.get(key) {
            None => Ok(None),
            Some(("", line)) => Err(bad(key, line, "empty path")),
            Some((v, _)) => Ok(Some(PathBuf::from(v))),
        }
    }

    fn weight(&self) -> Result<WeightPreset> {
        let (name, line) = self.required("weight.preset")?;
        let c = || self.finite("weight.c")?.ok_or_else(|| Error::MissingKey { key: "weight.c".into() });
        let preset = match name {
            "constant" => WeightPreset::Constant { c: c()? },
            "parabola" => WeightPreset::Parabola { c: c()? },
            "ring" => WeightPreset::Ring {
                c: c()?,
                k: self.finite("weight.k")?.ok_or_else(|| Error::MissingKey { key: "weight.k".into() })?,
                r0: self.finite("weight.r0")?.ok_or_else(|| Error::MissingKey { key: "weight.r0".into() })?,
            },
            _ => return Err(bad("weight.preset", line, "expected constant, parabola or ring")),
        };
        let negative = match preset {
            WeightPreset::Constant { c } | WeightPreset::Parabola { c } => c < 0.0,
            WeightPreset::Ring { c, k, r0 } => c < 0.0 || k < 0.0 || r0 < 0.0,
        };
        if negative {
            return Err(bad("weight.c", self.line("weight.c"), "weight parameters must be nonnegative"));
        }
        Ok(preset)
    }
}

fn split_pair(body: &str, line: usize) -> Result<(&str, &str)> {
    let Some((k, v)) = body.split_once('=') else {
        return Err(bad(body, line, "expected `key = value`"));
    };
    Ok((k.trim(), v.trim()))
}

fn bad(key: &str, line: usize, reason: &str) -> Error {
    Error::BadValue { key: key.to_string(), line, reason: reason.to_string() }
}

/// Parses the flat format; unknown and duplicate keys are errors.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    RawConfig::parse(text)?.build()
}

impl RunConfig {
    /// Renders the config in the flat format; `parse_config` reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("mode", self.mode.name().into());
        put("domain.dim", self.dim.to_string());
        put("domain.shape", self.shape.name().into());
        put("domain.resolution", self.resolution.to_string());
        put("weight.preset", self.weight.name().into());
        match self.weight {
            WeightPreset::Constant { c } | WeightPreset::Parabola { c } => put("weight.c", format!("{c:?}")),
            WeightPreset::Ring { c, k, r0 } => {
                put("weight.c", format!("{c:?}"));
                put("weight.k", format!("{k:?}"));
                put("weight.r0", format!("{r0:?}"));
            }
        }
        put("rhs.preset", self.rhs.name().into());
        put("rhs.scale", format!("{:?}", self.rhs_scale));
        put("exponents.q", format!("{:?}", self.q));
        if let Some(p) = self.p {
            put("exponents.p", format!("{p:?}"));
        }
        if let Some(k) = self.k_max {
            put("exponents.k_max", k.to_string());
        }
        put("solver.epsilon0", format!("{:?}", self.epsilon0));
        put("solver.tol", format!("{:?}", self.tol));
        put("solver.max_iter", self.max_iter.to_string());
        if let Some(p) = &self.csv {
            put("output.csv", p.display().to_string());
        }
        if let Some(p) = &self.json {
            put("output.json", p.display().to_string());
        }
        put("strict_h0", self.strict_h0.to_string());
        put("seed", self.seed.to_string());
        if !self.sweep_rhs_scales.is_empty() {
            let list: Vec<String> = self.sweep_rhs_scales.iter().map(|x| format!("{x:?}")).collect();
            put("sweep.rhs_scales", list.join(", "));
        }
        s
    }
}
