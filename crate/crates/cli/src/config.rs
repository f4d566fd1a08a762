//! Settings layering: built-in defaults, then an optional `key = value`
//! config file, then command-line flags.

use std::path::Path;

use restoretime::features::{CodeEncoding, FeatureSpec};
use restoretime::ingest::parse_utc_offset;
use restoretime::kv::KvFile;
use restoretime::pipeline::PipelineConfig;
use restoretime::sdesc::{SpectralPath, XiChoice};
use restoretime::synth::SynthSpec;
use restoretime::{Error, Result};

/// Every key a config file may set.
pub const KEYS: &[&str] = &[
    "seed",
    "rows",
    "days",
    "corrupt_fraction",
    "burst_probability",
    "ceiling_min",
    "timezone",
    "features",
    "code_encoding",
    "k_range",
    "xi",
    "target_atoms",
    "gamma",
    "beta",
    "s_nonzeros",
    "spectral_path",
    "kmeans_restarts",
    "perplexity",
    "tsne_iters",
    "tsne_max_points",
    "hidden",
    "max_epochs",
    "transfer",
    "filter_pct",
];

/// File entries followed by flag entries, so flags win on lookup.
pub fn layered(config: Option<&Path>, flags: KvFile) -> Result<KvFile> {
    let mut kv = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            KvFile::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => KvFile::default(),
    };
    if let Some((k, _)) = kv.entries.iter().find(|(k, _)| !KEYS.contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown config key `{k}`; known keys: {}", KEYS.join(", "))));
    }
    kv.entries.extend(flags.entries);
    Ok(kv)
}

fn parsed<T: std::str::FromStr>(kv: &KvFile, key: &str) -> Result<Option<T>> {
    kv.get(key)
        .map(|v| v.parse::<T>().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))))
        .transpose()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

/// Inclusive range written `2..8` or `2..=8`.
pub fn parse_k_range(v: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("k range `{v}` must look like 2..8"));
    let (a, b) = v.split_once("..").ok_or_else(bad)?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let lo = a.trim().parse().map_err(|_| bad())?;
    let hi = b.trim().parse().map_err(|_| bad())?;
    Ok((lo, hi))
}

pub fn seed(kv: &KvFile) -> Result<u64> {
    Ok(parsed(kv, "seed")?.unwrap_or(0))
}

pub fn utc_offset(kv: &KvFile) -> Result<Option<i64>> {
    kv.get("timezone").map(parse_utc_offset).transpose()
}

pub fn synth_spec(kv: &KvFile) -> Result<SynthSpec> {
    let mut spec = SynthSpec { seed: seed(kv)?, ..Default::default() };
    spec.rows = parsed(kv, "rows")?;
    if let Some(d) = parsed(kv, "days")? {
        spec.horizon_days = d;
    }
    if let Some(f) = parsed(kv, "corrupt_fraction")? {
        spec.corrupt_fraction = f;
    }
    if let Some(p) = parsed(kv, "burst_probability")? {
        spec.burst.probability_per_day = p;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn pipeline_config(kv: &KvFile) -> Result<PipelineConfig> {
    let mut c = PipelineConfig { seed: seed(kv)?, ..Default::default() };
    if let Some(list) = kv.get("features") {
        c.features.features = FeatureSpec::parse_list(list)?;
    }
    if let Some(e) = kv.get("code_encoding") {
        c.features.code_encoding = match e {
            "ordinal" => CodeEncoding::Ordinal,
            "onehot" | "one-hot" => CodeEncoding::OneHot,
            _ => return Err(Error::Config(format!("`code_encoding`: expected ordinal or onehot, got `{e}`"))),
        };
    }
    if let Some(off) = utc_offset(kv)? {
        c.features.utc_offset_secs = off;
    }

    let s = &mut c.sdesc;
    if let Some(r) = kv.get("k_range") {
        (s.k_min, s.k_max) = parse_k_range(r)?;
    }
    if let Some(xi) = kv.get("xi") {
        s.xi = if xi == "auto" {
            XiChoice::DEFAULT_AUTO
        } else {
            XiChoice::Fixed(xi.parse().map_err(|_| Error::Config(format!("`xi`: expected a number or auto, got `{xi}`")))?)
        };
    }
    if let Some(t) = parsed(kv, "target_atoms")? {
        match &mut s.xi {
            XiChoice::Auto { target_atoms, .. } => *target_atoms = t,
            XiChoice::Fixed(_) => return Err(Error::Config("`target_atoms` only applies with xi = auto".into())),
        }
    }
    if let Some(g) = parsed(kv, "gamma")? {
        s.gamma = g;
    }
    if let Some(b) = parsed(kv, "beta")? {
        s.beta = b;
    }
    if let Some(n) = parsed(kv, "s_nonzeros")? {
        s.s_nonzeros = n;
    }
    if let Some(p) = kv.get("spectral_path") {
        s.path = p.parse::<SpectralPath>()?;
    }
    if let Some(r) = parsed(kv, "kmeans_restarts")? {
        s.kmeans_restarts = r;
    }
    s.validate()?;

    if let Some(p) = parsed(kv, "perplexity")? {
        c.tsne.perplexity = p;
    }
    if let Some(n) = parsed(kv, "tsne_iters")? {
        c.tsne.n_iter = n;
    }
    if let Some(n) = parsed(kv, "tsne_max_points")? {
        c.tsne.max_points = n;
    }
    c.tsne.validate()?;

    let cmp = &mut c.comparison;
    if let Some(h) = kv.get("hidden") {
        cmp.hidden_sizes = h
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| Error::Config(format!("`hidden`: bad layer size `{v}`"))))
            .collect::<Result<_>>()?;
    }
    if let Some(e) = parsed(kv, "max_epochs")? {
        cmp.lm.max_epochs = e;
    }
    if let Some(t) = kv.get("transfer") {
        cmp.transfer = parse_bool("transfer", t)?;
    }
    if let Some(p) = parsed(kv, "filter_pct")? {
        cmp.filter_percentile = p;
    }
    cmp.lm.validate()?;
    Ok(c)
}
