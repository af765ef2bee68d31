//! Directory layout `<root>/class_<k>/*.ppm` plus a line-oriented manifest.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{read_pixmap, write_pixmap, Dataset, GlyphBox, Sample, SplitTag};
use crate::error::{invalid, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "# split id label path row0 col0 row1 col1";

/// One manifest line: where a sample lives and what it carries.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub split: SplitTag,
    pub id: u64,
    pub label: usize,
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub glyph_box: Option<GlyphBox>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn load_with_paths(root: &Path, split: SplitTag) -> Result<(Dataset, Vec<PathBuf>)> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("class_"))
        })
        .collect();
    if class_dirs.is_empty() {
        return invalid(format!("no class_<k> directories under {}", root.display()));
    }
    let mut samples = Vec::new();
    let mut paths = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
            .collect();
        if files.is_empty() {
            return invalid(format!("empty class directory {}", dir.display()));
        }
        for file in files {
            samples.push(Sample {
                image: read_pixmap(&file)?,
                label,
                id: samples.len() as u64,
                glyph_box: None,
            });
            paths.push(file);
        }
    }
    Ok((Dataset::new(samples, class_dirs.len(), split)?, paths))
}

/// Loads `<root>/class_<k>/*.ppm`.
///
/// Labels follow the lexicographic order of the class directories; ids are
/// assigned in load order.
pub fn load_directory(root: &Path) -> Result<Dataset> {
    load_with_paths(root, SplitTag::Train).map(|(d, _)| d)
}

/// Loads `<data>/<split>/` and, when `<data>/manifest.txt` exists, restores
/// the recorded ids and glyph boxes.
pub fn apply_manifest(data_dir: &Path, split: SplitTag) -> Result<Dataset> {
    let (dataset, paths) = load_with_paths(&data_dir.join(split.as_str()), split)?;
    let manifest_path = data_dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Ok(dataset);
    }
    let by_path: HashMap<String, ManifestEntry> = read_manifest(&manifest_path)?
        .into_iter()
        .filter(|e| e.split == split)
        .map(|e| (e.path.clone(), e))
        .collect();
    let num_classes = dataset.num_classes();
    let mut samples = Vec::with_capacity(dataset.len());
    for (mut sample, path) in dataset.samples().iter().cloned().zip(paths) {
        let rel = path
            .strip_prefix(data_dir)
            .map_err(|_| Error::InvalidArgument(format!("{} outside {}", path.display(), data_dir.display())))?
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        let entry = by_path
            .get(&rel)
            .ok_or_else(|| Error::InvalidArgument(format!("{rel} missing from manifest")))?;
        if entry.label != sample.label {
            return invalid(format!("{rel}: manifest label {} but directory label {}", entry.label, sample.label));
        }
        sample.id = entry.id;
        sample.glyph_box = entry.glyph_box;
        samples.push(sample);
    }
    Dataset::new(samples, num_classes, split)
}

/// Writes a dataset under `<root>/<split>/class_<k>/<id>.ppm` and returns the
/// manifest lines describing it.
pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<Vec<ManifestEntry>> {
    let split = dataset.split();
    let width = dataset.num_classes().saturating_sub(1).to_string().len().max(3);
    let mut entries = Vec::with_capacity(dataset.len());
    for s in dataset.samples() {
        let class_dir = format!("class_{:0width$}", s.label);
        let dir = root.join(split.as_str()).join(&class_dir);
        fs::create_dir_all(&dir)?;
        let file = format!("{:06}.ppm", s.id);
        write_pixmap(&s.image, &dir.join(&file))?;
        entries.push(ManifestEntry {
            split,
            id: s.id,
            label: s.label,
            path: format!("{}/{class_dir}/{file}", split.as_str()),
            glyph_box: s.glyph_box,
        });
    }
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        let bbox = match e.glyph_box {
            Some(b) => format!("{} {} {} {}", b.row0, b.col0, b.row1, b.col1),
            None => "- - - -".into(),
        };
        out.push_str(&format!("{} {} {} {} {bbox}\n", e.split.as_str(), e.id, e.label, e.path));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let bad = |n: usize, why: &str| Error::InvalidArgument(format!("{}:{}: {why}", path.display(), n + 1));
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 8 {
            return Err(bad(n, "expected 8 fields"));
        }
        let split = match f[0] {
            "train" => SplitTag::Train,
            "test" => SplitTag::Test,
            _ => return Err(bad(n, "unknown split")),
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(n, "expected an integer"));
        let glyph_box = if f[4] == "-" {
            None
        } else {
            Some(GlyphBox {
                row0: num(f[4])?,
                col0: num(f[5])?,
                row1: num(f[6])?,
                col1: num(f[7])?,
            })
        };
        entries.push(ManifestEntry {
            split,
            id: f[1].parse().map_err(|_| bad(n, "expected an integer id"))?,
            label: num(f[2])?,
            path: f[3].to_string(),
            glyph_box,
        });
    }
    Ok(entries)
}
