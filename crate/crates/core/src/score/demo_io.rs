//! Demo sets on disk: one CSV per demo (`t,ch0,ch1,...`) plus a JSON
//! manifest naming the files and the shared shape. Paths in the manifest are
//! relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoManifest {
    pub horizon: usize,
    pub channels: usize,
    pub demos: Vec<PathBuf>,
}

/// Writes `demos` into `dir` and returns the manifest path.
pub fn save_demo_set(dir: &Path, demos: &[Trajectory]) -> Result<PathBuf> {
    let first = demos
        .first()
        .ok_or_else(|| Error::invalid("cannot save an empty demo set"))?;
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(demos.len());
    for (k, demo) in demos.iter().enumerate() {
        if demo.shape() != first.shape() {
            return Err(Error::invalid(format!("demo {k} has a different shape")));
        }
        let name = PathBuf::from(format!("demo_{k:05}.csv"));
        let mut w = csv::Writer::from_path(dir.join(&name))?;
        let mut header = vec!["t".to_string()];
        header.extend((0..demo.channels()).map(|c| format!("ch{c}")));
        w.write_record(&header)?;
        for (t, row) in demo.rows().enumerate() {
            let mut rec = vec![t.to_string()];
            // `{:?}` prints the shortest string that round-trips exactly.
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        names.push(name);
    }
    let manifest = DemoManifest {
        horizon: first.horizon(),
        channels: first.channels(),
        demos: names,
    };
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

pub fn load_demo_set(manifest_path: &Path) -> Result<Vec<Trajectory>> {
    let manifest: DemoManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .demos
        .iter()
        .map(|p| read_demo(&base.join(p), manifest.horizon, manifest.channels))
        .collect()
}

fn read_demo(path: &Path, horizon: usize, channels: usize) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() != channels + 1 || &header[0] != "t" {
        return Err(Error::invalid(format!(
            "{}: expected header t,ch0..ch{}",
            path.display(),
            channels.saturating_sub(1)
        )));
    }
    let mut values = Vec::with_capacity(horizon * channels);
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        let t: usize = rec[0]
            .parse()
            .map_err(|_| Error::invalid(format!("{}: bad time index", path.display())))?;
        if t != rows {
            return Err(Error::invalid(format!("{}: rows out of order", path.display())));
        }
        for field in rec.iter().skip(1) {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("{}: bad value `{field}`", path.display())))?,
            );
        }
        rows += 1;
    }
    if rows != horizon {
        return Err(Error::Shape {
            expected: format!("{horizon} rows"),
            actual: format!("{rows} in {}", path.display()),
        });
    }
    Trajectory::new(horizon, channels, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let demos = vec![
            Trajectory::new(3, 2, vec![0.1, 1.0 / 3.0, -2.5e-7, 4.0, 1e300, -0.0]).unwrap(),
            Trajectory::new(3, 2, vec![std::f64::consts::PI; 6]).unwrap(),
        ];
        let manifest = save_demo_set(dir.path(), &demos).unwrap();
        let back = load_demo_set(&manifest).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in demos.iter().zip(&back) {
            let bits = |t: &Trajectory| t.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }
}
