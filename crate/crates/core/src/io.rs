//! Artifact formats: trace and curve CSVs, JSON checkpoints and reports.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::controller::{PidCoeffs, Policy};
use crate::dataset::{Norm, WindowSpec};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::sim::{CurveRow, SimModel};

pub const SCHEMA_VERSION: u32 = 1;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.display().to_string()),
        _ => e.into(),
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.display().to_string()),
        _ => e.into(),
    })?;
    Ok(csv::Reader::from_reader(file))
}

fn check_header(reader: &mut csv::Reader<fs::File>, expected: &[&str], path: &Path) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::structural(format!(
            "{}: header {:?}, expected {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, path: &Path) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::structural(format!("{}: cannot parse {field:?}", path.display())))
}

/// Writes `t,u,p` rows, `t` being the step index.
pub fn write_trace_csv(path: &Path, controls: &[f64], pressures: &[f64]) -> Result<()> {
    if controls.len() != pressures.len() {
        return Err(Error::structural("control and pressure traces differ in length"));
    }
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "u", "p"])?;
    for (t, (u, p)) in controls.iter().zip(pressures).enumerate() {
        w.write_record([t.to_string(), u.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `t,u,p` file back into `(controls, pressures)`.
pub fn read_trace_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = open_csv(path)?;
    check_header(&mut r, &["t", "u", "p"], path)?;
    let mut controls = Vec::new();
    let mut pressures = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 || parse::<usize>(&rec[0], path)? != i {
            return Err(Error::structural(format!("{}: bad row {i}", path.display())));
        }
        controls.push(parse(&rec[1], path)?);
        pressures.push(parse(&rec[2], path)?);
    }
    Ok((controls, pressures))
}

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for r in rows {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = open_csv(path)?;
    check_header(&mut r, &["epoch", "train_loss", "val_loss"], path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(CurveRow {
                epoch: parse(&rec[0], path)?,
                train_loss: parse(&rec[1], path)?,
                val_loss: parse(&rec[2], path)?,
            })
        })
        .collect()
}

/// Network checkpoint: layer sizes, seed and the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub schema_version: u32,
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl NetCheckpoint {
    pub fn new(net: &Mlp, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            sizes: net.sizes().to_vec(),
            seed,
            params: net.params().to_vec(),
        }
    }

    pub fn into_mlp(self) -> Result<Mlp> {
        check_schema(self.schema_version)?;
        Mlp::from_params(&self.sizes, self.params)
    }
}

/// Simulator checkpoint: network plus window layout and normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCheckpoint {
    pub schema_version: u32,
    pub sizes: Vec<usize>,
    pub window: WindowSpec,
    pub norm: Norm,
    pub boot: f64,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl SimCheckpoint {
    pub fn new(model: &SimModel, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            sizes: model.net.sizes().to_vec(),
            window: model.spec,
            norm: model.norm.clone(),
            boot: model.boot,
            seed,
            params: model.net.params().to_vec(),
        }
    }

    pub fn into_model(self) -> Result<SimModel> {
        check_schema(self.schema_version)?;
        let model = SimModel {
            net: Mlp::from_params(&self.sizes, self.params)?,
            spec: self.window,
            norm: self.norm,
            boot: self.boot,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Policy checkpoint: PID gains, lambda and the optional correction network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub schema_version: u32,
    pub seed: u64,
    pub pid: PidCoeffs,
    pub lambda: f64,
    pub feature_history: usize,
    pub correction: Option<NetCheckpoint>,
}

impl PolicyCheckpoint {
    pub fn new(policy: &Policy, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            pid: policy.pid,
            lambda: policy.lambda,
            feature_history: policy.feature_history,
            correction: policy.correction.as_ref().map(|n| NetCheckpoint::new(n, seed)),
        }
    }

    pub fn into_policy(self) -> Result<Policy> {
        check_schema(self.schema_version)?;
        let policy = Policy {
            pid: self.pid,
            correction: self.correction.map(NetCheckpoint::into_mlp).transpose()?,
            lambda: self.lambda,
            feature_history: self.feature_history,
        };
        policy.validate()?;
        Ok(policy)
    }
}

fn check_schema(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::structural(format!("artifact schema_version {v}, expected {SCHEMA_VERSION}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn trace_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let u = vec![0.0, 1.0 / 3.0, 100.0];
        let p = vec![5.0, 5.123456789012345, -0.1];
        write_trace_csv(&path, &u, &p).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,u,p\n0,0,5\n"));
        assert_eq!(read_trace_csv(&path).unwrap(), (u, p));
    }

    #[test]
    fn curve_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let rows = vec![
            CurveRow { epoch: 0, train_loss: 2.5, val_loss: 2.75 },
            CurveRow { epoch: 1, train_loss: 0.1, val_loss: 0.3 },
        ];
        write_curve_csv(&path, &rows).unwrap();
        assert!(fs::read_to_string(&path).unwrap().starts_with("epoch,train_loss,val_loss\n"));
        assert_eq!(read_curve_csv(&path).unwrap(), rows);
    }

    #[test]
    fn wrong_header_is_structural() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "a,b,c\n0,1,2\n").unwrap();
        assert!(matches!(read_trace_csv(&path), Err(Error::Structural(_))));
    }

    #[test]
    fn missing_file_is_reported() {
        let r: Result<NetCheckpoint> = read_json(Path::new("/nonexistent/ckpt.json"));
        assert!(matches!(r, Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn policy_checkpoint_round_trip() {
        let net = Mlp::init(&[12, 4, 1], &mut SeedStream::new(3).rng("n")).unwrap();
        let policy = Policy {
            pid: PidCoeffs::new(1.0, 0.5, 0.1, 40).unwrap(),
            correction: Some(net),
            lambda: 0.2,
            feature_history: 5,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        write_json(&path, &PolicyCheckpoint::new(&policy, 9)).unwrap();
        let back: PolicyCheckpoint = read_json(&path).unwrap();
        assert_eq!(back.into_policy().unwrap(), policy);
    }
}
