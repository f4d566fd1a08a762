use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use restoretime::classify::{fit_tsne, TsneMap};
use restoretime::features::build_matrix;
use restoretime::ingest::{
    clean, join_weather, parse_outage_csv, parse_weather_csv, read_cleaned_csv, write_cleaned_csv,
    write_raw_outage_csv, write_rejections_csv, write_weather_csv, SchemaMap, DEFAULT_CEILING_MIN,
};
use restoretime::kv::KvFile;
use restoretime::manifest::{metric_lines, sha256_file, split_lines, InputFile, Manifest};
use restoretime::pipeline::{cluster_rows, route_rows, run_experiment, train_cluster_models, ClusterModels};
use restoretime::sdesc::{assign_summary, ClusterSummary, SdescModel};
use restoretime::synth::{generate, write_labels_csv};
use restoretime::{artifact, Error, FeatureTransform, OutageRecord, Result};

use crate::config;

const FEATURES: &str = "features.json";
const SDESC: &str = "sdesc.model";
const ASSIGNMENTS: &str = "assignments.csv";
const TSNE: &str = "tsne.map";
const MODELS: &str = "models.json";

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn read_records(path: &Path) -> Result<Vec<OutageRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let records = read_cleaned_csv(std::io::BufReader::new(file))?;
    if records.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no outage rows", path.display())));
    }
    Ok(records)
}

pub fn synth(kv: &KvFile, dir: &Path) -> Result<()> {
    let spec = config::synth_spec(kv)?;
    let data = generate(&spec)?;
    out_dir(dir)?;
    write_with(&dir.join("outages.csv"), |w| write_raw_outage_csv(w, &data.rows))?;
    write_with(&dir.join("weather.csv"), |w| write_weather_csv(w, &data.weather))?;
    write_with(&dir.join("labels.csv"), |w| write_labels_csv(w, &data.labels))?;
    let corrupted = data.labels.iter().filter(|l| l.corruption.is_some()).count();
    println!(
        "wrote {} outages ({corrupted} corrupted) and {} weather hours to {}",
        data.rows.len(),
        data.weather.len(),
        dir.display()
    );
    Ok(())
}

pub fn ingest(kv: &KvFile, outages: &Path, weather: &Path, schema: Option<&Path>, dir: &Path) -> Result<()> {
    let mut schema = match schema {
        Some(p) => SchemaMap::load(p)?,
        None => SchemaMap::default(),
    };
    if let Some(off) = config::utc_offset(kv)? {
        schema.time.utc_offset_secs = off;
    }
    let ceiling = match kv.get("ceiling_min") {
        Some(v) => v.parse().map_err(|_| Error::Config(format!("`ceiling_min`: cannot parse `{v}`")))?,
        None => DEFAULT_CEILING_MIN,
    };
    let parsed = parse_outage_csv(outages, &schema)?;
    let weather_rows = parse_weather_csv(weather, &schema.time)?;
    let cleaned = clean(&parsed.rows, ceiling)?;
    let joined = join_weather(&cleaned.retained, &weather_rows)?;
    out_dir(dir)?;
    write_with(&dir.join("cleaned.csv"), |w| write_cleaned_csv(w, &joined.records))?;
    write_with(&dir.join("rejections.csv"), |w| {
        write_rejections_csv(w, &parsed.diagnostics, &cleaned.rejected, &joined.errors)
    })?;
    println!(
        "kept {} of {} rows; rejected {} unparseable, {} by cleaning, {} without weather",
        joined.records.len(),
        parsed.rows.len() + parsed.diagnostics.len(),
        parsed.diagnostics.len(),
        cleaned.rejected.len(),
        joined.errors.len()
    );
    Ok(())
}

fn write_summary(path: &Path, summary: &[ClusterSummary]) -> Result<()> {
    write_with(path, |w| {
        let io = io_at(path);
        writeln!(w, "cluster,count,avg_customers,avg_restoration_min").map_err(&io)?;
        for s in summary {
            writeln!(w, "{},{},{:?},{:?}", s.cluster, s.count, s.avg_customers, s.avg_restoration_min).map_err(&io)?;
        }
        Ok(())
    })
}

fn write_dbi_curve(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    write_with(path, |w| {
        let io = io_at(path);
        writeln!(w, "k,dbi").map_err(&io)?;
        for (k, d) in curve {
            writeln!(w, "{k},{d:?}").map_err(&io)?;
        }
        Ok(())
    })
}

fn print_summary(k: usize, summary: &[ClusterSummary]) {
    println!("k = {k}");
    println!("{:>8} {:>8} {:>14} {:>16}", "cluster", "count", "avg_customers", "avg_restoration");
    for s in summary {
        println!("{:>8} {:>8} {:>14.1} {:>16.1}", s.cluster, s.count, s.avg_customers, s.avg_restoration_min);
    }
}

fn customers(records: &[OutageRecord]) -> Vec<f64> {
    records.iter().map(|r| r.outage.customers_interrupted as f64).collect()
}

pub fn cluster(kv: &KvFile, input: &Path, dir: &Path) -> Result<()> {
    let cfg = config::pipeline_config(kv)?.seeded();
    let records = read_records(input)?;
    let matrix = build_matrix(&records, &cfg.features)?;
    let model = cluster_rows(matrix.values.view(), &matrix.target, &cfg.sdesc)?;
    let summary = assign_summary(&model.assignments, model.k, &customers(&records), &matrix.target)?;

    out_dir(dir)?;
    artifact::save(&dir.join(FEATURES), "features", &matrix.fitted())?;
    fs::write(dir.join("features.sidecar"), matrix.sidecar()).map_err(io_at(&dir.join("features.sidecar")))?;
    artifact::save(&dir.join(SDESC), "sdesc", &model)?;
    write_summary(&dir.join("summary.csv"), &summary)?;
    write_dbi_curve(&dir.join("dbi_curve.csv"), &model.dbi_curve)?;
    let path = dir.join(ASSIGNMENTS);
    write_with(&path, |w| {
        let io = io_at(&path);
        writeln!(w, "id,cluster").map_err(&io)?;
        for (id, c) in matrix.record_ids.iter().zip(&model.assignments) {
            writeln!(w, "{id},{c}").map_err(&io)?;
        }
        Ok(())
    })?;
    print_summary(model.k, &summary);
    Ok(())
}

/// `(id, cluster)` rows of an assignments file.
fn read_assignments(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let bad = || Error::InvalidInput(format!("{}: bad line `{l}`", path.display()));
            let (a, b) = l.split_once(',').ok_or_else(bad)?;
            Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

pub fn train(kv: &KvFile, input: &Path, dir: &Path) -> Result<()> {
    let cfg = config::pipeline_config(kv)?.seeded();
    let transform: FeatureTransform = artifact::load(&dir.join(FEATURES), "features")?;
    let model: SdescModel = artifact::load(&dir.join(SDESC), "sdesc")?;
    let assigned = read_assignments(&dir.join(ASSIGNMENTS))?;
    let records = read_records(input)?;
    if records.len() != assigned.len() || records.iter().zip(&assigned).any(|(r, (id, _))| r.outage.id != *id) {
        return Err(Error::InvalidInput(format!(
            "{} is not the file that was clustered into {} (row ids differ)",
            input.display(),
            dir.display()
        )));
    }
    let x = transform.apply(&records)?;
    let y: Vec<f64> = records.iter().map(|r| r.outage.restoration_time_min).collect();

    let map = fit_tsne(x.view(), &model.assignments, &cfg.tsne)?;
    artifact::save(&dir.join(TSNE), "tsne", &map)?;
    write_with(&dir.join("plot.csv"), |w| map.write_plot_csv(w))?;
    info!("routing map has {} points", map.len());

    let models = train_cluster_models(x.view(), &y, &model.assignments, model.k, &cfg.comparison)?;
    artifact::save(&dir.join(MODELS), "models", &models)?;
    write_provenance(&dir.join("provenance.csv"), &models)?;
    for (c, m) in &models.models {
        let p = &m.provenance;
        println!(
            "cluster {c}: {:?} from {:?}, {} epochs, sse {:.4}",
            p.trained_from, p.source_cluster, p.epochs_run, p.final_sse
        );
    }
    if let Some((c, msg)) = &models.failure {
        return Err(Error::Numerical(format!("training stopped at cluster {c}: {msg}")));
    }
    Ok(())
}

fn write_provenance(path: &Path, models: &ClusterModels) -> Result<()> {
    write_with(path, |w| {
        let io = io_at(path);
        writeln!(w, "cluster,trained_from,source_cluster,omega,rows_removed,epochs,final_sse,stop").map_err(&io)?;
        for (c, m) in &models.models {
            let p = &m.provenance;
            let removed = models.steps.iter().find(|s| s.cluster == *c).map_or(0, |s| s.rows_removed);
            writeln!(
                w,
                "{c},{:?},{},{},{removed},{},{:?},{:?}",
                p.trained_from,
                p.source_cluster.map_or(String::new(), |s| s.to_string()),
                p.omega.map_or(String::new(), |o| format!("{o:?}")),
                p.epochs_run,
                p.final_sse,
                p.stop
            )
            .map_err(&io)?;
        }
        Ok(())
    })
}

pub fn predict(input: &Path, dir: &Path, out: &Path) -> Result<()> {
    let transform: FeatureTransform = artifact::load(&dir.join(FEATURES), "features")?;
    let map: TsneMap = artifact::load(&dir.join(TSNE), "tsne")?;
    let models: ClusterModels = artifact::load(&dir.join(MODELS), "models")?;
    let records = read_records(input)?;
    let x = transform.apply(&records)?;
    let routed = route_rows(&map, x.view())?;
    let mut missing = 0;
    let predictions = x
        .rows()
        .into_iter()
        .zip(&routed)
        .map(|(row, c)| match models.models.get(c) {
            Some(m) => m.predict_row(&row.to_vec()),
            None => {
                missing += 1;
                Ok(f64::NAN)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    if missing > 0 {
        warn!("{missing} rows were routed to clusters without a trained model");
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(parent)?;
    }
    write_with(out, |w| {
        let io = io_at(out);
        writeln!(w, "id,cluster,predicted_min,actual_min").map_err(&io)?;
        for ((r, c), p) in records.iter().zip(&routed).zip(&predictions) {
            let p = if p.is_nan() { String::new() } else { format!("{p:?}") };
            writeln!(w, "{},{c},{p},{:?}", r.outage.id, r.outage.restoration_time_min).map_err(&io)?;
        }
        Ok(())
    })?;
    println!("wrote {} predictions to {}", predictions.len(), out.display());
    Ok(())
}

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|e| Error::io(path, e))
}

pub fn eval(kv: &KvFile, input: &Path, dir: &Path) -> Result<()> {
    let cfg = config::pipeline_config(kv)?;
    let records = read_records(input)?;
    let exp = run_experiment(&records, &cfg)?;
    out_dir(dir)?;

    let mut artifacts = Vec::new();
    let mut record = |name: &str, file: &str| artifacts.push((name.to_string(), file.to_string()));
    artifact::save(&dir.join("report.json"), "report", &exp.report)?;
    record("report", "report.json");
    let table = exp.report.to_table();
    fs::write(dir.join("report.txt"), &table).map_err(io_at(&dir.join("report.txt")))?;
    record("table", "report.txt");
    write_with(&dir.join("predictions.csv"), |w| exp.report.write_predictions_csv(w))?;
    record("predictions", "predictions.csv");
    write_summary(&dir.join("summary.csv"), &exp.summary)?;
    record("summary", "summary.csv");
    write_dbi_curve(&dir.join("dbi_curve.csv"), &exp.sdesc.dbi_curve)?;
    record("dbi_curve", "dbi_curve.csv");
    write_with(&dir.join("plot.csv"), |w| exp.map.write_plot_csv(w))?;
    record("plot", "plot.csv");

    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg,
        inputs: vec![InputFile {
            name: "cleaned".into(),
            path: absolute(input)?.display().to_string(),
            sha256: sha256_file(input)?,
        }],
        splits: split_lines(&exp.split),
        artifacts,
        metrics: metric_lines(&exp.report),
    };
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest.render()?).map_err(io_at(&path))?;
    print_summary(exp.sdesc.k, &exp.summary);
    println!("{table}");
    println!("manifest: {}", path.display());
    Ok(())
}

pub fn replay(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = Manifest::parse(&text)?;
    if manifest.tool_version != env!("CARGO_PKG_VERSION") {
        warn!("manifest was written by version {}, replaying with {}", manifest.tool_version, env!("CARGO_PKG_VERSION"));
    }
    let input = manifest
        .inputs
        .iter()
        .find(|f| f.name == "cleaned")
        .ok_or_else(|| Error::Artifact("manifest lists no cleaned input".into()))?;
    let input_path = Path::new(&input.path);
    let sha = sha256_file(input_path)?;
    if sha != input.sha256 {
        return Err(Error::InvalidInput(format!(
            "{} changed since the manifest was written (sha256 {sha}, expected {})",
            input.path, input.sha256
        )));
    }
    let records = read_records(input_path)?;
    let exp = run_experiment(&records, &manifest.config)?;
    if split_lines(&exp.split) != manifest.splits {
        return Err(Error::Numerical("replayed split differs from the manifest".into()));
    }
    let metrics = metric_lines(&exp.report);
    let diffs = manifest.metric_differences(&metrics);
    if !diffs.is_empty() {
        return Err(Error::Numerical(format!(
            "{} metric values differ on replay:\n  {}",
            diffs.len(),
            diffs.join("\n  ")
        )));
    }
    println!("replay matched all {} metric values", metrics.len());
    Ok(())
}
