//! Filesystem layout of the dataset: one directory per case holding FLAIR,
//! T1CE and segmentation volumes as uncompressed NIfTI-1 files. Two naming
//! styles are accepted: plain (`flair.nii`) and BraTS
//! (`<case>_flair.nii`).

use std::path::{Path, PathBuf};

use brainseg_core::dataset::CaseRecord;
use brainseg_core::phantom::generate_phantom;

use crate::error::{Error, Result};
use crate::nifti::{read_nifti, write_nifti, Endian, NiftiType};

const VOLUME_NAMES: [&str; 3] = ["flair", "t1ce", "seg"];

fn volume_path(case_dir: &Path, id: &str, name: &str) -> Option<PathBuf> {
    let plain = case_dir.join(format!("{name}.nii"));
    if plain.is_file() {
        return Some(plain);
    }
    let brats = case_dir.join(format!("{id}_{name}.nii"));
    if brats.is_file() {
        return Some(brats);
    }
    None
}

/// Lists case ids under a data root: subdirectories containing all three
/// volumes in either naming style, sorted by name.
pub fn discover_cases(data_root: &Path) -> Result<Vec<String>> {
    if !data_root.is_dir() {
        return Err(Error::validation(format!(
            "data root {} is not a directory",
            data_root.display()
        )));
    }
    let mut ids = Vec::new();
    let entries = std::fs::read_dir(data_root).map_err(|e| Error::io(data_root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(data_root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let Some(id) = path.file_name().and_then(|n| n.to_str()).map(String::from) else {
            continue;
        };
        if VOLUME_NAMES.iter().all(|name| volume_path(&path, &id, name).is_some()) {
            ids.push(id);
        }
    }
    ids.sort();
    Ok(ids)
}

/// Reads one case's three volumes.
pub fn load_case(data_root: &Path, id: &str) -> Result<CaseRecord> {
    let case_dir = data_root.join(id);
    let mut volumes = Vec::with_capacity(3);
    for name in VOLUME_NAMES {
        let path = volume_path(&case_dir, id, name).ok_or_else(|| {
            Error::validation(format!(
                "case {id}: no {name}.nii or {id}_{name}.nii under {}",
                case_dir.display()
            ))
        })?;
        volumes.push(read_nifti(&path)?);
    }
    let seg = volumes.pop().expect("three volumes were pushed");
    let t1ce = volumes.pop().expect("two volumes remain");
    let flair = volumes.pop().expect("one volume remains");
    CaseRecord::new(id.to_string(), flair, t1ce, seg).map_err(Error::Core)
}

/// Writes one case as `flair.nii`, `t1ce.nii` and `seg.nii` (modalities as
/// little-endian float32, labels as uint8) under `dir/<case id>/`.
pub fn write_case(dir: &Path, case: &CaseRecord) -> Result<PathBuf> {
    let case_dir = dir.join(&case.id);
    std::fs::create_dir_all(&case_dir).map_err(|e| Error::io(&case_dir, e))?;
    write_nifti(&case_dir.join("flair.nii"), &case.flair, NiftiType::F32, Endian::Little)?;
    write_nifti(&case_dir.join("t1ce.nii"), &case.t1ce, NiftiType::F32, Endian::Little)?;
    write_nifti(&case_dir.join("seg.nii"), &case.seg, NiftiType::U8, Endian::Little)?;
    Ok(case_dir)
}

/// Generates and writes a phantom dataset; returns the case ids in order.
pub fn write_phantom_dataset(
    dir: &Path,
    seed: u64,
    n_cases: usize,
    dims: (usize, usize, usize),
) -> Result<Vec<String>> {
    let cases = generate_phantom(seed, n_cases, dims).map_err(Error::Core)?;
    let mut ids = Vec::with_capacity(cases.len());
    for case in &cases {
        write_case(dir, case)?;
        ids.push(case.id.clone());
    }
    Ok(ids)
}

/// True when `id` resolves to a complete case directory.
pub fn case_exists(data_root: &Path, id: &str) -> bool {
    let case_dir = data_root.join(id);
    case_dir.is_dir() && VOLUME_NAMES.iter().all(|n| volume_path(&case_dir, id, n).is_some())
}

#[cfg(test)]
mod tests {
    use super::*;
    use brainseg_core::dataset::Volume;

    fn label_volume() -> Volume {
        let dims = (4, 4, 2);
        let voxels = (0..32).map(|i| (i % 3) as f32).collect();
        Volume::new(dims, voxels).unwrap()
    }

    fn ramp_volume() -> Volume {
        let dims = (4, 4, 2);
        Volume::new(dims, (0..32).map(|i| i as f32 * 0.5).collect()).unwrap()
    }

    fn sample_case(id: &str) -> CaseRecord {
        CaseRecord::new(id.to_string(), ramp_volume(), ramp_volume(), label_volume()).unwrap()
    }

    #[test]
    fn written_cases_are_discovered_and_reload_exactly() {
        let dir = tempfile::tempdir().unwrap();
        write_case(dir.path(), &sample_case("case_b")).unwrap();
        write_case(dir.path(), &sample_case("case_a")).unwrap();

        let ids = discover_cases(dir.path()).unwrap();
        assert_eq!(ids, vec!["case_a", "case_b"], "sorted order");

        let back = load_case(dir.path(), "case_a").unwrap();
        let original = sample_case("case_a");
        assert_eq!(back.flair.voxels, original.flair.voxels);
        assert_eq!(back.t1ce.voxels, original.t1ce.voxels);
        assert_eq!(back.seg.voxels, original.seg.voxels);
        assert_eq!(back.id, "case_a");
    }

    #[test]
    fn brats_style_names_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let id = "BraTS20_Training_001";
        let case_dir = dir.path().join(id);
        std::fs::create_dir_all(&case_dir).unwrap();
        for name in VOLUME_NAMES {
            let vol = if name == "seg" { label_volume() } else { ramp_volume() };
            let ty = if name == "seg" { NiftiType::U8 } else { NiftiType::F32 };
            write_nifti(&case_dir.join(format!("{id}_{name}.nii")), &vol, ty, Endian::Little)
                .unwrap();
        }
        assert_eq!(discover_cases(dir.path()).unwrap(), vec![id]);
        assert!(case_exists(dir.path(), id));
        let case = load_case(dir.path(), id).unwrap();
        assert_eq!(case.seg.voxels, label_volume().voxels);
    }

    #[test]
    fn incomplete_directories_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_case(dir.path(), &sample_case("complete")).unwrap();
        let partial = dir.path().join("partial");
        std::fs::create_dir_all(&partial).unwrap();
        write_nifti(&partial.join("flair.nii"), &ramp_volume(), NiftiType::F32, Endian::Little)
            .unwrap();
        std::fs::write(dir.path().join("stray.txt"), "not a case").unwrap();

        assert_eq!(discover_cases(dir.path()).unwrap(), vec!["complete"]);
        assert!(!case_exists(dir.path(), "partial"));
    }

    #[test]
    fn missing_data_root_is_a_validation_error() {
        let err = discover_cases(Path::new("/does/not/exist")).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_VALIDATION);
        assert!(err.to_string().contains("/does/not/exist"));
    }

    #[test]
    fn missing_volume_error_names_both_accepted_layouts() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("case_x")).unwrap();
        let err = load_case(dir.path(), "case_x").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("flair.nii"));
        assert!(text.contains("case_x_flair.nii"));
    }

    #[test]
    fn phantom_dataset_roundtrips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ids = write_phantom_dataset(dir.path(), 4, 2, (32, 32, 8)).unwrap();
        assert_eq!(ids, vec!["phantom_000", "phantom_001"]);

        let cases = generate_phantom(4, 2, (32, 32, 8)).unwrap();
        for (id, case) in ids.iter().zip(&cases) {
            let back = load_case(dir.path(), id).unwrap();
            assert_eq!(back.flair.voxels, case.flair.voxels);
            assert_eq!(back.t1ce.voxels, case.t1ce.voxels);
            assert_eq!(back.seg.voxels, case.seg.voxels);
        }
    }
}
