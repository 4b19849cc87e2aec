//! `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bips_core::bips::{ClusterInit, CmpoMethod, PipelineConfig};
use bips_core::QNum;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

pub const KEYS: &[&str] = &[
    "model",
    "fcidump",
    "sites",
    "t_intra",
    "t_inter",
    "u",
    "v_nn",
    "fragments",
    "fragment_sizes",
    "n_elec",
    "two_sz",
    "n_roots",
    "m",
    "n_state",
    "m_tilde",
    "model_sweeps",
    "cluster_sweeps",
    "dmrg_sweeps",
    "sv_cutoff",
    "weight_threshold",
    "init",
    "cmpo_method",
    "threshold",
    "seed",
    "output",
    "scan_t_intra",
    "scan_t_inter",
    "scan_reference",
];

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Fcidump(PathBuf),
    /// Dimerized chain with optional nearest-neighbour repulsion.
    Hubbard { sites: usize, t_intra: f64, t_inter: f64, u: f64, v_nn: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Fragments {
    File(PathBuf),
    Sizes(Vec<usize>),
    Unset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    Fci,
    Dmrg,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub source: Source,
    pub fragments: Fragments,
    pub n_elec: Option<usize>,
    pub two_sz: Option<i32>,
    pub dmrg_sweeps: usize,
    pub pipeline: PipelineConfig,
    pub threshold: f64,
    pub output: Option<PathBuf>,
    pub scan_t_intra: Vec<f64>,
    pub scan_t_inter: Vec<f64>,
    pub scan_reference: Reference,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            source: Source::Hubbard { sites: 4, t_intra: 1.0, t_inter: 1.0, u: 4.0, v_nn: 0.0 },
            fragments: Fragments::Unset,
            n_elec: None,
            two_sz: None,
            dmrg_sweeps: 16,
            pipeline: PipelineConfig::default(),
            threshold: 0.1,
            output: None,
            scan_t_intra: Vec::new(),
            scan_t_inter: Vec::new(),
            scan_reference: Reference::Fci,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| ConfigError::Value { key: key.into(), msg: format!("`{v}`: {e}") })
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn positive(key: &str, x: usize) -> Result<usize> {
    if x == 0 {
        return Err(ConfigError::Value { key: key.into(), msg: "must be positive".into() });
    }
    Ok(x)
}

fn resolve(base: &Path, v: &str) -> PathBuf {
    let p = PathBuf::from(v);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    if v.is_empty() {
        return "none".into();
    }
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() || v.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if !KEYS.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey { line: i + 1, key: k });
            }
            if pairs.iter().any(|p| p.1 == k) {
                return Err(ConfigError::Duplicate { line: i + 1, key: k });
            }
            pairs.push((i + 1, k, v));
        }
        let get = |k: &str| pairs.iter().find(|p| p.1 == k).map(|p| p.2.as_str());

        let mut c = RunConfig::default();
        let model = get("model").unwrap_or(if get("fcidump").is_some() { "fcidump" } else { "hubbard" });
        c.source = match model {
            "fcidump" => {
                let p = get("fcidump").ok_or_else(|| ConfigError::Invalid("model = fcidump needs `fcidump = <path>`".into()))?;
                let p = resolve(base, p);
                if !p.is_file() {
                    return Err(ConfigError::Value { key: "fcidump".into(), msg: format!("no such file {}", p.display()) });
                }
                Source::Fcidump(p)
            }
            "hubbard" => {
                if get("fcidump").is_some() {
                    return Err(ConfigError::Invalid("`fcidump` given with model = hubbard".into()));
                }
                let f = |k: &str, d: f64| get(k).map_or(Ok(d), |v| num::<f64>(k, v));
                let t_intra = f("t_intra", 1.0)?;
                Source::Hubbard {
                    sites: positive("sites", get("sites").map_or(Ok(4), |v| num("sites", v))?)?,
                    t_intra,
                    t_inter: f("t_inter", t_intra)?,
                    u: f("u", 4.0)?,
                    v_nn: f("v_nn", 0.0)?,
                }
            }
            other => {
                return Err(ConfigError::Value { key: "model".into(), msg: format!("`{other}` is not hubbard or fcidump") })
            }
        };
        if matches!(c.source, Source::Fcidump(_)) {
            for k in ["sites", "t_intra", "t_inter", "u", "v_nn"] {
                if get(k).is_some() {
                    return Err(ConfigError::Invalid(format!("`{k}` only applies to model = hubbard")));
                }
            }
        }
        c.fragments = match (get("fragments"), get("fragment_sizes")) {
            (Some(_), Some(_)) => return Err(ConfigError::Invalid("give `fragments` or `fragment_sizes`, not both".into())),
            (Some(p), None) => {
                let p = resolve(base, p);
                if !p.is_file() {
                    return Err(ConfigError::Value { key: "fragments".into(), msg: format!("no such file {}", p.display()) });
                }
                Fragments::File(p)
            }
            (None, Some(v)) => {
                let sizes: Vec<usize> = list("fragment_sizes", v)?;
                if sizes.iter().any(|&s| s == 0) {
                    return Err(ConfigError::Value { key: "fragment_sizes".into(), msg: "sizes must be positive".into() });
                }
                Fragments::Sizes(sizes)
            }
            (None, None) => Fragments::Unset,
        };
        if let Some(v) = get("n_elec") {
            c.n_elec = Some(num("n_elec", v)?);
        }
        if let Some(v) = get("two_sz") {
            c.two_sz = Some(num("two_sz", v)?);
        }

        let p = &mut c.pipeline;
        let count = |k: &str, d: usize| -> Result<usize> { positive(k, get(k).map_or(Ok(d), |v| num(k, v))?) };
        p.n_roots = count("n_roots", p.n_roots)?;
        p.m = count("m", p.m)?;
        p.n_state = count("n_state", p.n_state)?;
        if let Some(v) = get("m_tilde") {
            p.m_tilde = Some(positive("m_tilde", num("m_tilde", v)?)?);
        }
        p.model_sweeps = count("model_sweeps", p.model_sweeps)?;
        p.cluster_sweeps = count("cluster_sweeps", p.cluster_sweeps)?;
        c.dmrg_sweeps = count("dmrg_sweeps", c.dmrg_sweeps)?;
        let nonneg = |k: &str, d: f64| -> Result<f64> {
            let x = get(k).map_or(Ok(d), |v| num::<f64>(k, v))?;
            if !(x >= 0.0) {
                return Err(ConfigError::Value { key: k.into(), msg: "must be non-negative".into() });
            }
            Ok(x)
        };
        p.sv_cutoff = nonneg("sv_cutoff", p.sv_cutoff)?;
        p.weight_threshold = nonneg("weight_threshold", p.weight_threshold)?;
        p.init = match get("init").unwrap_or("random") {
            "random" => ClusterInit::RandomQn,
            "products" => ClusterInit::LowEnergyProducts,
            o => return Err(ConfigError::Value { key: "init".into(), msg: format!("`{o}` is not random or products") }),
        };
        p.method = match get("cmpo_method").unwrap_or("deferred") {
            "deferred" => CmpoMethod::DeferredIntegrals,
            "direct" => CmpoMethod::Direct,
            o => {
                return Err(ConfigError::Value { key: "cmpo_method".into(), msg: format!("`{o}` is not deferred or direct") })
            }
        };
        if let Some(v) = get("seed") {
            p.seed = num("seed", v)?;
        }
        c.threshold = nonneg("threshold", c.threshold)?;
        if !(c.threshold > 0.0 && c.threshold <= 1.0) {
            return Err(ConfigError::Value { key: "threshold".into(), msg: "must lie in (0, 1]".into() });
        }
        c.output = get("output").map(|v| resolve(base, v));
        if let Some(v) = get("scan_t_intra") {
            c.scan_t_intra = list("scan_t_intra", v)?;
        }
        if let Some(v) = get("scan_t_inter") {
            c.scan_t_inter = list("scan_t_inter", v)?;
        }
        c.scan_reference = match get("scan_reference").unwrap_or("fci") {
            "fci" => Reference::Fci,
            "dmrg" => Reference::Dmrg,
            o => return Err(ConfigError::Value { key: "scan_reference".into(), msg: format!("`{o}` is not fci or dmrg") }),
        };
        if let (Some(ne), Some(sz)) = (c.n_elec, c.two_sz) {
            if (ne as i32 - sz) % 2 != 0 || sz.unsigned_abs() as usize > ne {
                return Err(ConfigError::Invalid(format!("two_sz = {sz} is incompatible with n_elec = {ne}")));
            }
        }
        Ok(c)
    }

    pub fn target(&self) -> Option<QNum> {
        match (self.n_elec, self.two_sz) {
            (Some(n), Some(s)) => Some(QNum::new(n as i32, s)),
            _ => None,
        }
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.source {
            Source::Fcidump(p) => {
                put("model", "fcidump".into());
                put("fcidump", p.display().to_string());
            }
            Source::Hubbard { sites, t_intra, t_inter, u, v_nn } => {
                put("model", "hubbard".into());
                put("sites", sites.to_string());
                put("t_intra", t_intra.to_string());
                put("t_inter", t_inter.to_string());
                put("u", u.to_string());
                put("v_nn", v_nn.to_string());
            }
        }
        match &self.fragments {
            Fragments::File(p) => put("fragments", p.display().to_string()),
            Fragments::Sizes(v) => put("fragment_sizes", fmt_list(v)),
            Fragments::Unset => put("fragment_sizes", "unset".into()),
        }
        put("n_elec", self.n_elec.map_or("from integrals".into(), |x| x.to_string()));
        put("two_sz", self.two_sz.map_or("from integrals".into(), |x| x.to_string()));
        let p = &self.pipeline;
        put("n_roots", p.n_roots.to_string());
        put("m", p.m.to_string());
        put("n_state", p.n_state.to_string());
        put("m_tilde", p.cluster_bond().to_string());
        put("model_sweeps", p.model_sweeps.to_string());
        put("cluster_sweeps", p.cluster_sweeps.to_string());
        put("dmrg_sweeps", self.dmrg_sweeps.to_string());
        put("sv_cutoff", format!("{:e}", p.sv_cutoff));
        put("weight_threshold", format!("{:e}", p.weight_threshold));
        put(
            "init",
            match p.init {
                ClusterInit::RandomQn => "random",
                ClusterInit::LowEnergyProducts => "products",
            }
            .into(),
        );
        put(
            "cmpo_method",
            match p.method {
                CmpoMethod::DeferredIntegrals => "deferred",
                CmpoMethod::Direct => "direct",
            }
            .into(),
        );
        put("threshold", self.threshold.to_string());
        put("seed", p.seed.to_string());
        put("output", self.output.as_ref().map_or("none".into(), |p| p.display().to_string()));
        put("scan_t_intra", fmt_list(&self.scan_t_intra));
        put("scan_t_inter", fmt_list(&self.scan_t_inter));
        put(
            "scan_reference",
            match self.scan_reference {
                Reference::Fci => "fci",
                Reference::Dmrg => "dmrg",
            }
            .into(),
        );
        s
    }
}
