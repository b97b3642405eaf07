//! On-disk dataset layout.
//!
//! Each training pair `pair_NNNNN` is stored as `pair_NNNNN_degraded.pfm`,
//! `pair_NNNNN_target.pfm` and a `pair_NNNNN.txt` sidecar with the keys
//! `code` (space-separated), `angle_deg`, `scene` and `psf`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::formation::TrainingPair;
use crate::kernel_code::KernelCode;

use super::kv::KvFile;
use super::pfm::{read_pfm, write_pfm};

pub const BASIS_FILE: &str = "basis.udck";

pub fn pair_stem(index: usize) -> String {
    format!("pair_{index:05}")
}

/// Sidecar contents of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMeta {
    pub code: KernelCode,
    pub angle_deg: f64,
    pub scene: String,
    pub psf: String,
}

impl PairMeta {
    pub fn to_text(&self) -> String {
        let mut s = String::from("code =");
        for c in self.code.as_slice() {
            let _ = write!(s, " {c:e}");
        }
        let _ = write!(
            s,
            "\nangle_deg = {}\nscene = {}\npsf = {}\n",
            self.angle_deg, self.scene, self.psf
        );
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut kv = KvFile::parse(text, path)?;
        let line_of =
            |kv: &KvFile, key: &str| kv.entries().find(|(k, _, _)| *k == key).map_or(0, |e| e.2);
        let code_line = line_of(&kv, "code");
        let code_text: String = kv
            .take("code")?
            .ok_or_else(|| Error::format(path, "missing `code`"))?;
        let code = code_text
            .split_whitespace()
            .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::Config {
                path: path.to_path_buf(),
                line: code_line,
                msg: "`code` must be a list of finite numbers".into(),
            })?;
        let angle_deg = kv.take("angle_deg")?.unwrap_or(0.0);
        let scene = kv.take("scene")?.unwrap_or_default();
        let psf = kv.take("psf")?.unwrap_or_default();
        kv.finish()?;
        Ok(PairMeta {
            code: KernelCode(code),
            angle_deg,
            scene,
            psf,
        })
    }
}

/// Write one pair and its sidecar into `dir`.
pub fn write_pair(
    dir: &Path,
    stem: &str,
    pair: &TrainingPair,
    scene: &str,
    psf: &str,
) -> Result<()> {
    write_pfm(dir.join(format!("{stem}_degraded.pfm")), &pair.degraded)?;
    write_pfm(dir.join(format!("{stem}_target.pfm")), &pair.target)?;
    let meta = PairMeta {
        code: pair.code.clone(),
        angle_deg: pair.angle_deg,
        scene: scene.to_string(),
        psf: psf.to_string(),
    };
    let side = dir.join(format!("{stem}.txt"));
    std::fs::write(&side, meta.to_text()).map_err(|e| Error::io(side, e))
}

/// Sorted entries of `dir` whose names satisfy `keep`.
pub fn list_files(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(n) = name.to_str() {
            if keep(n) && entry.path().is_file() {
                out.push(entry.path());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// All `.pfm` files in `dir`, sorted by name.
pub fn list_pfm(dir: &Path) -> Result<Vec<PathBuf>> {
    list_files(dir, |n| n.ends_with(".pfm"))
}

/// One loaded pair with its stem and sidecar.
#[derive(Clone, Debug)]
pub struct StoredPair {
    pub stem: String,
    pub pair: TrainingPair,
    pub meta: PairMeta,
}

/// Load every pair in `dir`, sorted by stem.
pub fn read_dataset(dir: &Path) -> Result<Vec<StoredPair>> {
    let files = list_files(dir, |n| {
        n.starts_with("pair_") && n.ends_with("_degraded.pfm")
    })?;
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let stem = name.trim_end_matches("_degraded.pfm").to_string();
        let side = dir.join(format!("{stem}.txt"));
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta = PairMeta::parse(&text, &side)?;
        let pair = TrainingPair {
            degraded: read_pfm(&f)?,
            target: read_pfm(dir.join(format!("{stem}_target.pfm")))?,
            code: meta.code.clone(),
            angle_deg: meta.angle_deg,
        };
        out.push(StoredPair { stem, pair, meta });
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no pairs found in {}",
            dir.display()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    #[test]
    fn meta_round_trip() {
        let meta = PairMeta {
            code: KernelCode(vec![0.1, -2.5e-7, 3.0]),
            angle_deg: -6.0,
            scene: "scene_00001.pfm".into(),
            psf: "psf_m06.pfm".into(),
        };
        let back = PairMeta::parse(&meta.to_text(), Path::new("m.txt")).unwrap();
        assert_eq!(back, meta);
        assert!(PairMeta::parse("angle_deg = 1\n", Path::new("m.txt")).is_err());
        let err = PairMeta::parse("angle_deg = 1\ncode = 1 x\n", Path::new("m.txt")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pair = TrainingPair {
            degraded: Image::filled(4, 3, 0.5),
            target: Image::filled(4, 3, 0.25),
            code: KernelCode(vec![1.0, 2.0]),
            angle_deg: 3.0,
        };
        write_pair(dir.path(), &pair_stem(1), &pair, "s", "k").unwrap();
        write_pair(dir.path(), &pair_stem(0), &pair, "s", "k").unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].stem, "pair_00000");
        assert_eq!(ds[1].pair, pair);
        assert!(read_dataset(tempfile::tempdir().unwrap().path()).is_err());
    }
}
