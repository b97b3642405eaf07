//! Typed readers for the key=value configuration files and small text
//! sidecars.

use std::path::Path;

use crate::discnet::{NetworkConfig, PercepMode, TrainConfig};
use crate::error::{Error, Result};
use crate::formation::PsfStack;
use crate::optics::OpticalConfig;

use super::kv::KvFile;
use super::read_text;

fn positive(v: &f64) -> bool {
    v.is_finite() && *v > 0.0
}

/// Optical geometry. Keys: `lambda_r`, `lambda_g`, `lambda_b`, `z1`, `d`,
/// `f`, `z2`, `grid_n`, `pitch` (lengths in meters). Missing keys keep their
/// defaults; without `z2` the sensor is placed in focus.
pub fn optics_from_kv(mut kv: KvFile) -> Result<OpticalConfig> {
    let mut cfg = OpticalConfig::default();
    for (i, key) in ["lambda_r", "lambda_g", "lambda_b"].iter().enumerate() {
        if let Some(v) = kv.take_checked(key, positive, "a positive length")? {
            cfg.lambda_rgb[i] = v;
        }
    }
    if let Some(v) = kv.take_checked("z1", positive, "a positive length")? {
        cfg.z1 = v;
    }
    if let Some(v) = kv.take_checked("d", positive, "a positive length")? {
        cfg.d = v;
    }
    if let Some(v) = kv.take_checked("f", positive, "a positive length")? {
        cfg.f = v;
    }
    cfg = cfg.focused();
    if let Some(v) = kv.take_checked("z2", positive, "a positive length")? {
        cfg.z2 = v;
    }
    if let Some(v) = kv.take_checked::<usize>(
        "grid_n",
        |n| n.is_power_of_two() && *n <= 2048,
        "a power of two <= 2048",
    )? {
        cfg.n = v;
    }
    if let Some(v) = kv.take_checked("pitch", positive, "a positive length")? {
        cfg.pitch = v;
    }
    kv.finish()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_optics(path: impl AsRef<Path>) -> Result<OpticalConfig> {
    optics_from_kv(KvFile::read(path)?)
}

/// Keys: `base_channels`, `scales`, `filter_size`, `code_dim`,
/// `leaky_slope`.
pub fn net_config_from_kv(mut kv: KvFile) -> Result<NetworkConfig> {
    let mut cfg = NetworkConfig::default();
    if let Some(v) = kv.take("base_channels")? {
        cfg.base_channels = v;
    }
    if let Some(v) = kv.take("scales")? {
        cfg.scales = v;
    }
    if let Some(v) = kv.take("filter_size")? {
        cfg.filter_size = v;
    }
    if let Some(v) = kv.take("code_dim")? {
        cfg.code_dim = v;
    }
    if let Some(v) = kv.take("leaky_slope")? {
        cfg.leaky_slope = v;
    }
    let path = kv.path().to_path_buf();
    kv.finish()?;
    cfg.validate().map_err(|e| Error::Config {
        path,
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn read_net_config(path: impl AsRef<Path>) -> Result<NetworkConfig> {
    net_config_from_kv(KvFile::read(path)?)
}

/// Keys: `lr_max`, `lr_min`, `restart_period`, `beta1`, `beta2`, `eps`,
/// `batch`, `patch`, `iters`, `seed`, `lambda_percep`, `percep_mode`.
pub fn train_config_from_kv(mut kv: KvFile) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    macro_rules! field {
        ($($name:ident),*) => {
            $(if let Some(v) = kv.take(stringify!($name))? {
                cfg.$name = v;
            })*
        };
    }
    field!(
        lr_max,
        lr_min,
        restart_period,
        beta1,
        beta2,
        eps,
        batch,
        patch,
        iters,
        seed,
        lambda_percep
    );
    if let Some(v) = kv.take::<PercepMode>("percep_mode")? {
        cfg.percep_mode = v;
    }
    let path = kv.path().to_path_buf();
    kv.finish()?;
    cfg.validate().map_err(|e| Error::Config {
        path,
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn read_train_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    train_config_from_kv(KvFile::read(path)?)
}

/// Nine numbers, row-major, separated by whitespace or commas.
pub fn parse_ccm(text: &str, path: &Path) -> Result<[[f64; 3]; 3]> {
    let values: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(path, format!("`{t}` is not a number")))
        })
        .collect::<Result<_>>()?;
    if values.len() != 9 {
        return Err(Error::format(
            path,
            format!("CCM needs 9 numbers, found {}", values.len()),
        ));
    }
    let mut m = [[0.0; 3]; 3];
    for (i, v) in values.into_iter().enumerate() {
        m[i / 3][i % 3] = v;
    }
    Ok(m)
}

pub fn read_ccm(path: impl AsRef<Path>) -> Result<[[f64; 3]; 3]> {
    let path = path.as_ref();
    parse_ccm(&read_text(path)?, path)
}

/// Path of the metadata sidecar written next to a PSF file.
pub fn psf_meta_path(psf_path: &Path) -> std::path::PathBuf {
    let mut s = psf_path.as_os_str().to_owned();
    s.push(".meta");
    s.into()
}

/// Write `angle_deg` and channel gains next to `psf_path`.
pub fn write_psf_meta(psf_path: &Path, psf: &PsfStack) -> Result<()> {
    let g = psf.channel_gains;
    let text = format!(
        "angle_deg = {}\ngain_r = {}\ngain_g = {}\ngain_b = {}\n",
        psf.angle_deg, g[0], g[1], g[2]
    );
    let meta = psf_meta_path(psf_path);
    std::fs::write(&meta, text).map_err(|e| Error::io(meta, e))
}

/// Apply a sidecar, if present, to a PSF read from `psf_path`.
pub fn apply_psf_meta(psf_path: &Path, psf: &mut PsfStack) -> Result<()> {
    let meta = psf_meta_path(psf_path);
    if !meta.exists() {
        return Ok(());
    }
    let mut kv = KvFile::read(&meta)?;
    if let Some(a) = kv.take("angle_deg")? {
        psf.angle_deg = a;
    }
    for (i, key) in ["gain_r", "gain_g", "gain_b"].iter().enumerate() {
        if let Some(g) = kv.take(key)? {
            psf.channel_gains[i] = g;
        }
    }
    kv.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> KvFile {
        KvFile::parse(text, "t.cfg").unwrap()
    }

    #[test]
    fn optics_defaults_and_refocus() {
        let cfg = optics_from_kv(kv("")).unwrap();
        assert_eq!(cfg, OpticalConfig::default());
        let cfg = optics_from_kv(kv("z1 = 0.5\ngrid_n = 256\n")).unwrap();
        assert_eq!(cfg.n, 256);
        assert!((cfg.z2 - crate::optics::in_focus_distance(0.5 + cfg.d, cfg.f)).abs() < 1e-15);
        let cfg = optics_from_kv(kv("z2 = 0.0041\n")).unwrap();
        assert_eq!(cfg.z2, 0.0041);
    }

    #[test]
    fn optics_errors_carry_lines() {
        let err = optics_from_kv(kv("z1 = 1\ngrid_n = 300\n")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
        let err = optics_from_kv(kv("wavelength = 1\n")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        let err = optics_from_kv(kv("d = -1\n")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
    }

    #[test]
    fn net_and_train_configs() {
        let n = net_config_from_kv(kv("base_channels = 8\nfilter_size = 7\n")).unwrap();
        assert_eq!((n.base_channels, n.filter_size, n.code_dim), (8, 7, 5));
        assert!(net_config_from_kv(kv("filter_size = 4\n")).is_err());
        let t = train_config_from_kv(kv("iters = 10\npercep_mode = grad-surrogate\nseed = 3\n"))
            .unwrap();
        assert_eq!(
            (t.iters, t.seed, t.percep_mode),
            (10, 3, PercepMode::GradSurrogate)
        );
        assert!(train_config_from_kv(kv("lr_min = 1\n")).is_err());
        assert!(train_config_from_kv(kv("momentum = 1\n")).is_err());
    }

    #[test]
    fn ccm_parsing() {
        let p = Path::new("ccm.txt");
        let m = parse_ccm("1 0 0\n0, 1, 0\n0 0 1.5\n", p).unwrap();
        assert_eq!(m[2][2], 1.5);
        assert!(parse_ccm("1 2 3", p).is_err());
        assert!(parse_ccm("1 0 0 0 1 0 0 0 x", p).is_err());
    }
}
