//! Trajectory CSV files and dataset manifests.
//!
//! A trajectory file has the header `t,<species...>,T` and one row per
//! sample. Values are written with Rust's shortest round-trip float
//! formatting, so writing and reading back is bit-exact. A manifest is a JSON
//! document listing the files of one dataset with their provenance.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dataset::{NormalizationSpec, Provenance, Split, Trajectory, TrajectoryDataset};
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Reject rows whose species columns do not sum to 1 within this
    /// tolerance (mass-fraction data only).
    pub mass_fraction_tolerance: Option<f64>,
    pub constant_temperature: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            mass_fraction_tolerance: None,
            constant_temperature: false,
        }
    }
}

impl IngestOptions {
    pub fn mass_fractions() -> Self {
        Self {
            mass_fraction_tolerance: Some(1e-3),
            constant_temperature: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the manifest.
    pub file: String,
    #[serde(default = "clean")]
    pub provenance: Provenance,
    /// Noise-free parent of a noisy file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_file: Option<String>,
    /// Held out of training by the generator.
    #[serde(default)]
    pub withheld: bool,
    #[serde(default)]
    pub conditions: BTreeMap<String, f64>,
}

fn clean() -> Provenance {
    Provenance::Clean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub species: Vec<String>,
    pub split: Split,
    #[serde(default)]
    pub constant_temperature: bool,
    /// Whether species columns are mass fractions that must sum to one.
    #[serde(default)]
    pub mass_fractions: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationSpec>,
    pub files: Vec<ManifestEntry>,
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

pub fn write_trajectory_csv(path: &Path, species: &[String], traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(species.iter().cloned());
    header.push("T".into());
    w.write_record(&header)?;
    for (t, row) in traj.times.iter().zip(&traj.states) {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads and validates one trajectory file against the expected species
/// order. Row numbers in errors count data rows from 1.
pub fn read_trajectory_csv(path: &Path, species: &[String], opts: &IngestOptions) -> Result<Trajectory> {
    let name = source_name(path);
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut expected = vec!["t".to_string()];
    expected.extend(species.iter().cloned());
    expected.push("T".into());
    if header != expected {
        return Err(Error::invalid_data(
            name,
            None,
            format!("header {header:?} does not match schema {expected:?}"),
        ));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let values = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::invalid_data(&name, Some(row), format!("unparsable number: {e}")))?;
        if values.len() != expected.len() {
            return Err(Error::invalid_data(&name, Some(row), "wrong number of columns"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_data(&name, Some(row), "non-finite value"));
        }
        if let Some(&prev) = times.last() {
            if !(values[0] > prev) {
                return Err(Error::invalid_data(
                    &name,
                    Some(row),
                    format!("time {} does not increase past {prev}", values[0]),
                ));
            }
        }
        if let Some(tol) = opts.mass_fraction_tolerance {
            let sum: f64 = values[1..=species.len()].iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::invalid_data(
                    &name,
                    Some(row),
                    format!("mass fractions sum to {sum}, outside 1 +/- {tol}"),
                ));
            }
        }
        times.push(values[0]);
        states.push(values[1..].to_vec());
    }
    if times.is_empty() {
        return Err(Error::invalid_data(name, None, "no data rows"));
    }
    let traj = Trajectory {
        times,
        states,
        constant_temperature: opts.constant_temperature,
        provenance: Provenance::Clean,
        clean: None,
        conditions: BTreeMap::new(),
    };
    traj.validate(&name)?;
    Ok(traj)
}

/// Ingests trajectory files sharing one species order into a dataset.
pub fn ingest_trajectories(
    paths: &[PathBuf],
    species: &[String],
    split: Split,
    opts: &IngestOptions,
) -> Result<TrajectoryDataset> {
    let trajs = paths
        .iter()
        .map(|p| read_trajectory_csv(p, species, opts))
        .collect::<Result<Vec<_>>>()?;
    TrajectoryDataset::new(species.to_vec(), split, trajs)
}

/// Writes every trajectory as `<stem>_<index>.csv` (plus the clean parent
/// of noisy trajectories) and a `<stem>.json` manifest into `dir`.
pub fn write_dataset(dir: &Path, stem: &str, dataset: &TrajectoryDataset, mass_fractions: bool) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(dataset.len());
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        let file = format!("{stem}_{i:03}.csv");
        write_trajectory_csv(&dir.join(&file), &dataset.species, traj)?;
        let clean_file = match &traj.clean {
            Some(parent) => {
                let f = format!("{stem}_{i:03}_clean.csv");
                write_trajectory_csv(&dir.join(&f), &dataset.species, parent)?;
                Some(f)
            }
            None => None,
        };
        files.push(ManifestEntry {
            file,
            provenance: traj.provenance,
            clean_file,
            withheld: false,
            conditions: traj.conditions.clone(),
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        species: dataset.species.clone(),
        split: dataset.split,
        constant_temperature: dataset.trajectories.iter().any(|t| t.constant_temperature),
        mass_fractions,
        normalization: dataset.normalization.clone(),
        files,
    };
    let path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::invalid_data(
            source_name(path),
            None,
            format!("unsupported manifest schema version {}", manifest.schema_version),
        ));
    }
    Ok(manifest)
}

/// Loads a manifest's dataset, separating entries flagged as withheld into a
/// second (test) dataset.
pub fn read_dataset_split(path: &Path) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
    let manifest = read_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let opts = IngestOptions {
        mass_fraction_tolerance: manifest.mass_fractions.then_some(1e-3),
        constant_temperature: manifest.constant_temperature,
    };
    let mut kept = Vec::new();
    let mut withheld = Vec::new();
    for entry in &manifest.files {
        // Measurement noise breaks the unit sum, so only clean files are checked.
        let entry_opts = match entry.provenance {
            Provenance::Clean => opts,
            Provenance::Noisy { .. } => IngestOptions {
                mass_fraction_tolerance: None,
                ..opts
            },
        };
        let mut traj = read_trajectory_csv(&dir.join(&entry.file), &manifest.species, &entry_opts)?;
        traj.provenance = entry.provenance;
        traj.conditions = entry.conditions.clone();
        if let Some(clean_file) = &entry.clean_file {
            let parent = read_trajectory_csv(&dir.join(clean_file), &manifest.species, &opts)?;
            traj.clean = Some(Arc::new(Trajectory {
                conditions: entry.conditions.clone(),
                ..parent
            }));
        }
        if entry.withheld {
            withheld.push(traj);
        } else {
            kept.push(traj);
        }
    }
    let mut main = TrajectoryDataset::new(manifest.species.clone(), manifest.split, kept)?;
    main.normalization = manifest.normalization.clone();
    main.validate()?;
    let held = TrajectoryDataset::new(manifest.species, Split::Test, withheld)?;
    Ok((main, held))
}

/// Loads every trajectory of a manifest, withheld ones included.
pub fn read_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let (mut main, held) = read_dataset_split(path)?;
    main.trajectories.extend(held.trajectories);
    Ok(main)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::apply_noise;

    fn species() -> Vec<String> {
        vec!["A".into(), "B".into()]
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn two_row_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "t,A,B,T\n0,0.5,0.5,1000\n1e-4,0.25,0.75,1010.5\n");
        let ds = ingest_trajectories(&[p], &species(), Split::Train, &IngestOptions::mass_fractions()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.trajectories[0].times, vec![0.0, 1e-4]);
        assert_eq!(ds.trajectories[0].states[1], vec![0.25, 0.75, 1010.5]);
    }

    #[test]
    fn row_level_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let opts = IngestOptions::mass_fractions();
        let bad_sum = write(dir.path(), "s.csv", "t,A,B,T\n0,0.5,0.5,1000\n1,0.5,0.4,1000\n");
        match read_trajectory_csv(&bad_sum, &species(), &opts) {
            Err(Error::InvalidData { row, message, .. }) => {
                assert_eq!(row, Some(2));
                assert!(message.contains("0.9"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let back = write(dir.path(), "b.csv", "t,A,B,T\n1,0.5,0.5,1000\n0.5,0.5,0.5,1000\n");
        assert!(matches!(
            read_trajectory_csv(&back, &species(), &opts),
            Err(Error::InvalidData { row: Some(2), .. })
        ));
        let schema = write(dir.path(), "h.csv", "t,B,A,T\n0,0.5,0.5,1000\n");
        assert!(matches!(
            read_trajectory_csv(&schema, &species(), &opts),
            Err(Error::InvalidData { row: None, .. })
        ));
        let text = write(dir.path(), "x.csv", "t,A,B,T\n0,abc,0.5,1000\n");
        assert!(read_trajectory_csv(&text, &species(), &opts).is_err());
        // Concentration data skips the mass check.
        assert!(read_trajectory_csv(&bad_sum, &species(), &IngestOptions::default()).is_ok());
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        use crate::data::mechanisms::{condition_grid, generate_toy, ToySpec};
        use crate::ode::IntegratorConfig;
        let dir = tempfile::tempdir().unwrap();
        let mut ds = generate_toy(
            &condition_grid(&[1000.0, 1150.0], &[0.8]),
            Split::Train,
            &ToySpec::default(),
            &IntegratorConfig::oracle(Vec::new()),
            crate::Execution::Sequential,
        )
        .unwrap();
        ds.fit_normalization().unwrap();
        let path = write_dataset(dir.path(), "toy", &ds, true).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);

        let noisy = apply_noise(&ds, 5.0, 2).unwrap();
        let path = write_dataset(dir.path(), "noisy", &noisy, true).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, noisy);
        assert_eq!(back.clean_version(), ds);
    }

    #[test]
    fn withheld_entries_are_separated() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "t,A,B,T\n0,0.5,0.5,1000\n1,0.4,0.6,1001\n");
        write(dir.path(), "b.csv", "t,A,B,T\n0,0.9,0.1,1100\n1,0.8,0.2,1120\n");
        let manifest = r#"{
            "schema_version": 1,
            "species": ["A", "B"],
            "split": "train",
            "mass_fractions": true,
            "files": [
                {"file": "a.csv", "conditions": {"T0": 1000.0}},
                {"file": "b.csv", "withheld": true}
            ]
        }"#;
        let p = write(dir.path(), "m.json", manifest);
        let (main, held) = read_dataset_split(&p).unwrap();
        assert_eq!(main.len(), 1);
        assert_eq!(held.len(), 1);
        assert_eq!(main.trajectories[0].conditions["T0"], 1000.0);
        assert_eq!(held.split, Split::Test);
    }
}
