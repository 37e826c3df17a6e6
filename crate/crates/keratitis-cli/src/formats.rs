//! Delimited-text file formats: dataset manifests with payload files,
//! prediction records, fold assignments, thresholds, logs and exports.
//!
//! Prediction scores are serialized with 17 significant digits so the
//! round-trip is exact; other reals use the shortest representation that
//! parses back to the same value.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use keratitis_core::data::{
    AgeBin, Case, DatasetManifest, LabelVector, ManifestMeta, ManifestSource, Payload,
    PredictionRecord, Sex, SplitRole,
};
use keratitis_core::eval::RocCurve;
use keratitis_core::image::ImageTensor;
use keratitis_core::model::EpochRecord;
use keratitis_core::split::FoldAssignment;

use crate::error::{CliError, Result};

pub const MANIFEST_HEADER: &str =
    "case_id,group_id,payload_ref,bacteria,fungi,amoeba,sex,age_bin,mirrored";
pub const PREDICTIONS_HEADER: &str = "case_id,fold,split_role,score_bacteria,score_fungi,\
score_amoeba,score_sex,probs_age_0,probs_age_1,probs_age_2,probs_age_3";
pub const ASSIGNMENT_HEADER: &str = "group_id,fold";

/// High-precision score formatting: 17 significant digits round-trip `f64`
/// exactly and satisfy the 9-digit floor.
pub fn fmt_score(v: f64) -> String {
    format!("{v:.16e}")
}

/// Shortest exact representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| CliError::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn parse_err(path: &Path, row: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}:{row}: {msg}", path.display()))
}

fn parse_f64(path: &Path, row: usize, field: &str, raw: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(path, row, format!("field `{field}`: bad real `{raw}`")))
}

fn parse_bit(path: &Path, row: usize, field: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(parse_err(
            path,
            row,
            format!("field `{field}` must be 0 or 1, got `{other}`"),
        )),
    }
}

// ---------------------------------------------------------------------------
// payload files

fn payload_file_name(case_id: &str, payload: &Payload) -> String {
    match payload {
        Payload::Features(_) => format!("payloads/{case_id}.txt"),
        Payload::Image(_) => format!("payloads/{case_id}.imgtxt"),
    }
}

fn write_payload(path: &Path, payload: &Payload) -> Result<()> {
    let mut out = String::new();
    match payload {
        Payload::Features(values) => {
            for v in values {
                out.push_str(&fmt_f64(*v));
                out.push('\n');
            }
        }
        Payload::Image(img) => {
            out.push_str(&format!("IMG {} {}\n", img.height(), img.width()));
            for v in img.data() {
                out.push_str(&fmt_f64(*v));
                out.push('\n');
            }
        }
    }
    write_file(path, &out)
}

/// Load a payload file: the text image format, a PPM (P3/P6) import, or a
/// one-real-per-line feature vector.
pub fn read_payload(path: &Path) -> Result<Payload> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(b"P6") || bytes.starts_with(b"P3") {
        return read_ppm(path, &bytes);
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Validation(format!("{}: not valid UTF-8", path.display())))?;
    let mut lines = text.lines();
    let first = lines
        .next()
        .ok_or_else(|| CliError::Validation(format!("{}: empty payload file", path.display())))?;
    if let Some(dims) = first.strip_prefix("IMG ") {
        let parts: Vec<&str> = dims.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(parse_err(path, 1, "image header needs `IMG <h> <w>`"));
        }
        let h: usize = parts[0]
            .parse()
            .map_err(|_| parse_err(path, 1, "bad image height"))?;
        let w: usize = parts[1]
            .parse()
            .map_err(|_| parse_err(path, 1, "bad image width"))?;
        let mut data = Vec::with_capacity(h * w * 3);
        for (i, line) in lines.enumerate() {
            data.push(parse_f64(path, i + 2, "pixel", line)?);
        }
        let img = ImageTensor::from_data(h, w, data)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Ok(Payload::Image(img))
    } else {
        let mut values = vec![first
            .trim()
            .parse::<f64>()
            .map_err(|_| parse_err(path, 1, format!("bad real `{first}`")))?];
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            values.push(parse_f64(path, i + 2, "value", line)?);
        }
        Ok(Payload::Features(values))
    }
}

fn read_ppm(path: &Path, bytes: &[u8]) -> Result<Payload> {
    // whitespace-delimited header tokens: magic, width, height, maxval
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens.len() < 4 {
        return Err(CliError::Validation(format!(
            "{}: truncated PPM header",
            path.display()
        )));
    }
    let magic = tokens[0].clone();
    let w: usize = tokens[1]
        .parse()
        .map_err(|_| parse_err(path, 1, "bad PPM width"))?;
    let h: usize = tokens[2]
        .parse()
        .map_err(|_| parse_err(path, 1, "bad PPM height"))?;
    let maxval: f64 = tokens[3]
        .parse()
        .map_err(|_| parse_err(path, 1, "bad PPM maxval"))?;
    let mut data = Vec::with_capacity(h * w * 3);
    match magic.as_str() {
        "P6" => {
            pos += 1; // single whitespace byte after maxval
            let need = h * w * 3;
            if bytes.len() < pos + need {
                return Err(CliError::Validation(format!(
                    "{}: truncated P6 pixel data",
                    path.display()
                )));
            }
            for &b in &bytes[pos..pos + need] {
                data.push(b as f64 / maxval);
            }
        }
        "P3" => {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            for tok in text.split_whitespace().take(h * w * 3) {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| parse_err(path, 1, format!("bad P3 value `{tok}`")))?;
                data.push(v / maxval);
            }
        }
        other => {
            return Err(CliError::Validation(format!(
                "{}: unsupported PPM magic `{other}`",
                path.display()
            )))
        }
    }
    if data.len() != h * w * 3 {
        return Err(CliError::Validation(format!(
            "{}: expected {} pixel values, got {}",
            path.display(),
            h * w * 3,
            data.len()
        )));
    }
    let img = ImageTensor::from_data(h, w, data)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(Payload::Image(img))
}

// ---------------------------------------------------------------------------
// manifest

/// Write a manifest: the CSV, one payload file per case under `payloads/`,
/// and a small metadata sidecar.
pub fn write_manifest(manifest: &DatasetManifest, csv_path: &Path) -> Result<()> {
    let dir = csv_path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for case in &manifest.cases {
        if case.case_id.contains(',') || case.group_id.contains(',') {
            return Err(CliError::Validation(format!(
                "case `{}`: ids must not contain commas",
                case.case_id
            )));
        }
        let payload_ref = payload_file_name(&case.case_id, &case.payload);
        write_payload(&dir.join(&payload_ref), &case.payload)?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            case.case_id,
            case.group_id,
            payload_ref,
            case.labels.bacteria as u8,
            case.labels.fungi as u8,
            case.labels.amoeba as u8,
            case.sex.as_u8(),
            case.age_bin.as_u8(),
            case.mirrored as u8,
        ));
    }
    write_file(csv_path, &out)?;

    let meta = &manifest.meta;
    let sidecar = serde_json::json!({
        "source": meta.source.name(),
        "seed": meta.seed,
        "feature_dim": meta.feature_dim,
        "image_size": meta.image_size,
    });
    write_file(
        &csv_path.with_extension("meta.json"),
        &format!("{}\n", serde_json::to_string_pretty(&sidecar).unwrap()),
    )
}

/// Read and validate a manifest. The `age_bin` column may instead be a raw
/// `age` column in years, converted through the standard bins.
pub fn read_manifest(csv_path: &Path) -> Result<DatasetManifest> {
    let text = read_file(csv_path)?;
    let dir = csv_path.parent().unwrap_or_else(|| Path::new("."));
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(csv_path, 1, "empty manifest"))?;
    let raw_age = match header.trim() {
        h if h == MANIFEST_HEADER => false,
        "case_id,group_id,payload_ref,bacteria,fungi,amoeba,sex,age,mirrored" => true,
        other => {
            return Err(parse_err(
                csv_path,
                1,
                format!("unrecognized manifest header `{other}`"),
            ))
        }
    };

    let mut cases = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(parse_err(
                csv_path,
                row,
                format!("expected 9 fields, got {}", fields.len()),
            ));
        }
        let payload = read_payload(&dir.join(fields[2].trim()))?;
        let age_bin = if raw_age {
            let years: u32 = fields[7].trim().parse().map_err(|_| {
                parse_err(csv_path, row, format!("bad age `{}`", fields[7]))
            })?;
            AgeBin::from_age(years)
        } else {
            let bin: u8 = fields[7].trim().parse().map_err(|_| {
                parse_err(csv_path, row, format!("bad age_bin `{}`", fields[7]))
            })?;
            AgeBin::new(bin)
                .map_err(|e| parse_err(csv_path, row, e))?
        };
        let case = Case {
            case_id: fields[0].trim().to_string(),
            group_id: fields[1].trim().to_string(),
            payload,
            labels: LabelVector::new(
                parse_bit(csv_path, row, "bacteria", fields[3])?,
                parse_bit(csv_path, row, "fungi", fields[4])?,
                parse_bit(csv_path, row, "amoeba", fields[5])?,
            ),
            sex: if parse_bit(csv_path, row, "sex", fields[6])? {
                Sex::Female
            } else {
                Sex::Male
            },
            age_bin,
            mirrored: parse_bit(csv_path, row, "mirrored", fields[8])?,
        };
        case.validate()
            .map_err(|e| parse_err(csv_path, row, e))?;
        cases.push(case);
    }

    let meta = read_manifest_meta(csv_path, &cases);
    DatasetManifest::new(cases, meta).map_err(CliError::from)
}

fn read_manifest_meta(csv_path: &Path, cases: &[Case]) -> ManifestMeta {
    let derive = || {
        let mut meta = ManifestMeta::external();
        if let Some(case) = cases.first() {
            match &case.payload {
                Payload::Features(v) => meta.feature_dim = Some(v.len()),
                Payload::Image(img) => meta.image_size = Some(img.height()),
            }
        }
        meta
    };
    let sidecar = csv_path.with_extension("meta.json");
    let Ok(text) = fs::read_to_string(&sidecar) else {
        return derive();
    };
    let Ok(value) = serde_json::from_str::<serde_json::Value>(&text) else {
        return derive();
    };
    let mut meta = derive();
    if value["source"].as_str() == Some("synthetic") {
        meta.source = ManifestSource::Synthetic;
    }
    meta.seed = value["seed"].as_u64();
    if let Some(d) = value["feature_dim"].as_u64() {
        meta.feature_dim = Some(d as usize);
    }
    if let Some(s) = value["image_size"].as_u64() {
        meta.image_size = Some(s as usize);
    }
    meta
}

// ---------------------------------------------------------------------------
// predictions

pub fn write_predictions(records: &[PredictionRecord], path: &Path) -> Result<()> {
    let mut out = String::from(PREDICTIONS_HEADER);
    out.push('\n');
    for record in records {
        record.validate()?;
        let sex = record
            .score_sex
            .map(fmt_score)
            .unwrap_or_default();
        let age = match &record.probs_age {
            Some(p) => p.iter().map(|v| fmt_score(*v)).collect::<Vec<_>>(),
            None => vec![String::new(); 4],
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            record.case_id,
            record.fold,
            record.role.name(),
            fmt_score(record.scores[0]),
            fmt_score(record.scores[1]),
            fmt_score(record.scores[2]),
            sex,
            age[0],
            age[1],
            age[2],
            age[3],
        ));
    }
    write_file(path, &out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty predictions file"))?;
    if header.trim() != PREDICTIONS_HEADER {
        return Err(parse_err(path, 1, "unrecognized predictions header"));
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(parse_err(
                path,
                row,
                format!("expected 11 fields, got {}", fields.len()),
            ));
        }
        let fold: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, row, format!("bad fold `{}`", fields[1])))?;
        let role = SplitRole::from_name(fields[2].trim())
            .ok_or_else(|| parse_err(path, row, format!("bad split_role `{}`", fields[2])))?;
        let scores = [
            parse_f64(path, row, "score_bacteria", fields[3])?,
            parse_f64(path, row, "score_fungi", fields[4])?,
            parse_f64(path, row, "score_amoeba", fields[5])?,
        ];
        let score_sex = if fields[6].trim().is_empty() {
            None
        } else {
            Some(parse_f64(path, row, "score_sex", fields[6])?)
        };
        let age_blank = fields[7..11].iter().all(|f| f.trim().is_empty());
        let probs_age = if age_blank {
            None
        } else {
            Some([
                parse_f64(path, row, "probs_age_0", fields[7])?,
                parse_f64(path, row, "probs_age_1", fields[8])?,
                parse_f64(path, row, "probs_age_2", fields[9])?,
                parse_f64(path, row, "probs_age_3", fields[10])?,
            ])
        };
        let record = PredictionRecord {
            case_id: fields[0].trim().to_string(),
            fold,
            role,
            scores,
            score_sex,
            probs_age,
        };
        record.validate().map_err(|e| parse_err(path, row, e))?;
        records.push(record);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// fold assignment

pub fn write_assignment(assignment: &FoldAssignment, path: &Path) -> Result<()> {
    let mut out = String::from(ASSIGNMENT_HEADER);
    out.push('\n');
    for (group, fold) in assignment.group_folds() {
        out.push_str(&format!("{group},{fold}\n"));
    }
    write_file(path, &out)
}

pub fn read_assignment(path: &Path, k: usize) -> Result<FoldAssignment> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty assignment file"))?;
    if header.trim() != ASSIGNMENT_HEADER {
        return Err(parse_err(path, 1, "unrecognized assignment header"));
    }
    let mut folds = BTreeMap::new();
    for (idx, line) in lines {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (group, fold) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, row, "expected `group_id,fold`"))?;
        let fold: usize = fold
            .trim()
            .parse()
            .map_err(|_| parse_err(path, row, format!("bad fold `{fold}`")))?;
        if fold >= k {
            return Err(parse_err(path, row, format!("fold {fold} out of range for k={k}")));
        }
        if folds.insert(group.trim().to_string(), fold).is_some() {
            return Err(parse_err(path, row, format!("duplicate group `{group}`")));
        }
    }
    Ok(FoldAssignment::from_group_folds(k, &folds))
}

// ---------------------------------------------------------------------------
// training logs, thresholds, ROC, stats

pub fn write_train_log(log: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,frozen\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch,
            fmt_score(e.train_loss),
            fmt_score(e.val_loss),
            e.frozen as u8
        ));
    }
    write_file(path, &out)
}

pub fn write_thresholds(thresholds: &BTreeMap<usize, [f64; 3]>, path: &Path) -> Result<()> {
    let mut out = String::from("round,bacteria,fungi,amoeba\n");
    for (round, t) in thresholds {
        out.push_str(&format!(
            "{round},{},{},{}\n",
            fmt_score(t[0]),
            fmt_score(t[1]),
            fmt_score(t[2])
        ));
    }
    write_file(path, &out)
}

pub fn read_thresholds(path: &Path) -> Result<BTreeMap<usize, [f64; 3]>> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty thresholds file"))?;
    if header.trim() != "round,bacteria,fungi,amoeba" {
        return Err(parse_err(path, 1, "unrecognized thresholds header"));
    }
    let mut out = BTreeMap::new();
    for (idx, line) in lines {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(path, row, "expected 4 fields"));
        }
        let round: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, row, "bad round"))?;
        out.insert(
            round,
            [
                parse_f64(path, row, "bacteria", fields[1])?,
                parse_f64(path, row, "fungi", fields[2])?,
                parse_f64(path, row, "amoeba", fields[3])?,
            ],
        );
    }
    Ok(out)
}

/// Export ROC curves as `task,threshold,tpr,fpr` rows (plot-ready).
pub fn write_roc(curves: &BTreeMap<String, RocCurve>, path: &Path) -> Result<()> {
    let mut out = String::from("task,threshold,tpr,fpr\n");
    for (task, curve) in curves {
        for p in &curve.points {
            let threshold = if p.threshold == f64::INFINITY {
                "inf".to_string()
            } else if p.threshold == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                fmt_f64(p.threshold)
            };
            out.push_str(&format!(
                "{task},{threshold},{},{}\n",
                fmt_f64(p.tpr),
                fmt_f64(p.fpr)
            ));
        }
    }
    write_file(path, &out)
}
