//! Experiment manifest: config echo, input and split hashes, artifact paths
//! and every metric table, as `key = value` lines under a version line.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::artifact;
use crate::error::{Error, Result};
use crate::eval::{EvalReport, Metrics, Split};
use crate::ingest::fmt_f64;
use crate::kv::KvFile;
use crate::pipeline::PipelineConfig;

pub const KIND: &str = "manifest";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of an index list written as comma-separated decimals.
pub fn hash_indices(idx: &[usize]) -> String {
    let text = idx.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    sha256_hex(text.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputFile {
    pub name: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub inputs: Vec<InputFile>,
    /// `(part, row count, hash)` for train, validation and test.
    pub splits: Vec<(String, usize, String)>,
    pub artifacts: Vec<(String, String)>,
    /// Flattened metric tables, values in round-trip decimal form.
    pub metrics: Vec<(String, String)>,
}

fn push_metrics(out: &mut Vec<(String, String)>, prefix: &str, m: &Metrics) {
    out.push((format!("{prefix}.n"), m.n.to_string()));
    out.push((format!("{prefix}.mape_pct"), fmt_f64(m.mape_pct)));
    out.push((format!("{prefix}.mape_excluded"), m.mape_excluded.to_string()));
    out.push((format!("{prefix}.pred_range_min"), fmt_f64(m.pred_range_min)));
    out.push((format!("{prefix}.pct_within_30"), fmt_f64(m.pct_within_30)));
    out.push((format!("{prefix}.pct_within_60"), fmt_f64(m.pct_within_60)));
    out.push((format!("{prefix}.pct_within_90"), fmt_f64(m.pct_within_90)));
}

/// Every number in the report's tables, keyed `metric.<variant>.<cluster|all>.<field>`
/// and `improvement.<base>.<new>.<cluster|all>.<ratio_pct|difference>`.
pub fn metric_lines(report: &EvalReport) -> Vec<(String, String)> {
    let mut out = Vec::new();
    out.push(("primary".to_string(), report.primary.clone()));
    for (name, v) in &report.comparison {
        for (c, m) in &v.per_cluster {
            push_metrics(&mut out, &format!("metric.{name}.{c}"), m);
        }
        if let Some(m) = &v.overall {
            push_metrics(&mut out, &format!("metric.{name}.all"), m);
        }
        if let Some(f) = &v.failure {
            out.push((format!("metric.{name}.failure"), f.replace('\n', " ")));
        }
    }
    for i in &report.improvements {
        let c = i.cluster.map_or("all".to_string(), |c| c.to_string());
        out.push((format!("improvement.{}.{}.{c}.ratio_pct", i.base, i.new), fmt_f64(i.ratio_pct)));
        out.push((format!("improvement.{}.{}.{c}.difference", i.base, i.new), fmt_f64(i.difference)));
    }
    out
}

pub fn split_lines(split: &Split) -> Vec<(String, usize, String)> {
    [("train", &split.train), ("validation", &split.validation), ("test", &split.test)]
        .into_iter()
        .map(|(n, v)| (n.to_string(), v.len(), hash_indices(v)))
        .collect()
}

impl Manifest {
    pub fn render(&self) -> Result<String> {
        let mut kv = KvFile::default();
        kv.push("tool_version", &self.tool_version);
        kv.push("seed", self.config.seed);
        kv.push("config", serde_json::to_string(&self.config)?);
        for f in &self.inputs {
            kv.push(format!("input.{}.path", f.name), &f.path);
            kv.push(format!("input.{}.sha256", f.name), &f.sha256);
        }
        for (part, n, hash) in &self.splits {
            kv.push(format!("split.{part}.rows"), n);
            kv.push(format!("split.{part}.sha256"), hash);
        }
        for (name, path) in &self.artifacts {
            kv.push(format!("artifact.{name}"), path);
        }
        for (k, v) in &self.metrics {
            kv.push(k.clone(), v);
        }
        Ok(format!("{}\n{}", artifact::version_line(KIND), kv.render()))
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let (header, body) = text.split_once('\n').ok_or_else(|| Error::Artifact("empty manifest".into()))?;
        artifact::check_version_line(KIND, header)?;
        let kv = KvFile::parse(body)?;
        let need = |k: &str| kv.get(k).ok_or_else(|| Error::Artifact(format!("manifest is missing `{k}`")));
        let config: PipelineConfig = serde_json::from_str(need("config")?)?;
        let seed: u64 = need("seed")?.parse().map_err(|_| Error::Artifact("manifest seed is not an integer".into()))?;
        if seed != config.seed {
            return Err(Error::Artifact(format!("manifest seed {seed} disagrees with its config ({})", config.seed)));
        }
        let mut m = Manifest {
            tool_version: need("tool_version")?.to_string(),
            config,
            inputs: Vec::new(),
            splits: Vec::new(),
            artifacts: Vec::new(),
            metrics: Vec::new(),
        };
        for (k, v) in &kv.entries {
            if let Some(name) = k.strip_prefix("input.").and_then(|r| r.strip_suffix(".path")) {
                let sha = need(&format!("input.{name}.sha256"))?;
                m.inputs.push(InputFile { name: name.into(), path: v.clone(), sha256: sha.into() });
            } else if let Some(part) = k.strip_prefix("split.").and_then(|r| r.strip_suffix(".rows")) {
                let n = v.parse().map_err(|_| Error::Artifact(format!("bad row count for split {part}")))?;
                m.splits.push((part.into(), n, need(&format!("split.{part}.sha256"))?.into()));
            } else if let Some(name) = k.strip_prefix("artifact.") {
                m.artifacts.push((name.into(), v.clone()));
            } else if k == "primary" || k.starts_with("metric.") || k.starts_with("improvement.") {
                m.metrics.push((k.clone(), v.clone()));
            }
        }
        Ok(m)
    }

    /// Keys whose values differ between two metric listings, including keys
    /// present on one side only.
    pub fn metric_differences(&self, other: &[(String, String)]) -> Vec<String> {
        let mut diffs = Vec::new();
        let find = |list: &[(String, String)], k: &str| list.iter().find(|(a, _)| a == k).map(|(_, v)| v.clone());
        for (k, v) in &self.metrics {
            match find(other, k) {
                Some(w) if &w == v => {}
                Some(w) => diffs.push(format!("{k}: {v} -> {w}")),
                None => diffs.push(format!("{k}: missing on replay")),
            }
        }
        for (k, _) in other {
            if find(&self.metrics, k).is_none() {
                diffs.push(format!("{k}: new on replay"));
            }
        }
        diffs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(hash_indices(&[1, 2, 3]), sha256_hex(b"1,2,3"));
    }

    #[test]
    fn render_parse_round_trip() {
        let m = Manifest {
            tool_version: "0.1.0".into(),
            config: PipelineConfig { seed: 9, ..Default::default() },
            inputs: vec![InputFile { name: "cleaned".into(), path: "a/b.csv".into(), sha256: "00".into() }],
            splits: vec![("train".into(), 7, "ff".into())],
            artifacts: vec![("report".into(), "r.json".into())],
            metrics: vec![("metric.global.all.mape_pct".into(), "12.5".into())],
        };
        let text = m.render().unwrap();
        assert!(text.starts_with("restoretime-manifest v1\n"));
        assert_eq!(Manifest::parse(&text).unwrap(), m);
        assert!(m.metric_differences(&m.metrics).is_empty());
        let other = vec![("metric.global.all.mape_pct".to_string(), "12.6".to_string())];
        assert_eq!(m.metric_differences(&other).len(), 1);
    }
}
