//! The `udc` command-line front end.
//!
//! Every subcommand accepts `--config FILE`, a key=value file whose keys are
//! the subcommand's long flag names (dashes or underscores). Values for
//! multi-valued flags are whitespace separated; boolean flags take `true` or
//! `false`. Flags given on the command line win over the file.
//!
//! Exit codes: 0 success, 2 bad flags or arguments, 3 I/O or malformed
//! files, 4 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory, FromArgMatches, Parser, Subcommand};
use rayon::prelude::*;

use crate::discnet::{self, InferOptions, LossRecord, NetworkParams};
use crate::error::{Error, Result};
use crate::formation::{self, FormationParams, PsfStack};
use crate::image::Image;
use crate::io::config::{self, apply_psf_meta, write_psf_meta};
use crate::io::dataset::{list_pfm, pair_stem, read_dataset, write_pair, StoredPair, BASIS_FILE};
use crate::io::kv::KvFile;
use crate::io::{
    read_basis, read_model, read_pfm, read_pfm_any, write_basis, write_model, write_pfm,
};
use crate::kernel_code::{self, encode_kernel, KernelCode};
use crate::metrics::{self, fmt_db, ImageScore, MetricReport};
use crate::optics::{self, DisplayPattern, OpticalConfig};
use crate::restore::{self, Boundary, PostprocParams, WienerParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Shape(_) | Error::InvalidArgument(_) | Error::Config { .. } => EXIT_USAGE,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "udc",
    version,
    about = "Under-display camera simulation and restoration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the display/lens PSF from a transmittance pattern.
    SimulatePsf(SimulatePsfArgs),
    /// Fuse bracketed PSF captures into one HDR PSF.
    FusePsf(FusePsfArgs),
    /// Rotate a PSF about its center.
    RotatePsf(RotatePsfArgs),
    /// Generate synthetic HDR scenes.
    GenScenes(GenScenesArgs),
    /// Build a training set from scenes and a PSF set.
    Synthesize(SynthesizeArgs),
    /// Fit a PCA kernel basis over a PSF set.
    PcaFit(PcaFitArgs),
    /// Print the kernel code of a PSF.
    EncodeKernel(EncodeKernelArgs),
    /// Wiener deconvolution baseline.
    Wiener(WienerArgs),
    /// Train the restoration network.
    Train(TrainArgs),
    /// Restore an image with a trained network.
    Infer(InferArgs),
    /// Score restorations with PSNR and SSIM.
    Eval(EvalArgs),
    /// Color correction, RGB gains and CLAHE, written as 8-bit PNG.
    Postproc(PostprocArgs),
}

#[derive(clap::Args, Debug)]
struct SimulatePsfArgs {
    /// Display transmittance (gray or RGB PFM, grid_n x grid_n, values in [0, 1]).
    #[arg(long)]
    pattern: PathBuf,
    /// Optical configuration (key=value); defaults when omitted.
    #[arg(long)]
    optics: Option<PathBuf>,
    /// Keep only the central N x N window (odd).
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct FusePsfArgs {
    /// Captures, longest exposure first.
    #[arg(long, num_args = 1.., required = true)]
    captures: Vec<PathBuf>,
    /// Exposure time of each capture.
    #[arg(long, num_args = 1.., required = true)]
    times: Vec<f64>,
    /// Saturation threshold on raw capture values.
    #[arg(long, default_value_t = formation::DEFAULT_SATURATION)]
    sat: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct RotatePsfArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Degrees, counter-clockwise, |angle| <= 45.
    #[arg(long, allow_negative_numbers = true)]
    angle: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct GenScenesArgs {
    #[arg(long)]
    count: usize,
    /// Side length in pixels.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Brightest highlight radiance.
    #[arg(long, default_value_t = 5000.0)]
    peak: f64,
    /// Highlights per scene.
    #[arg(long, default_value_t = 6)]
    highlights: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct SynthesizeArgs {
    /// Directory of scene PFMs.
    #[arg(long)]
    scenes: PathBuf,
    /// Directory of PSF PFMs.
    #[arg(long = "psf-set")]
    psf_set: PathBuf,
    #[arg(long, default_value_t = 500.0)]
    xmax: f64,
    #[arg(long, default_value_t = 0.25)]
    alpha: f64,
    #[arg(long = "noise-sigma", default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Existing basis; fitted on the PSF set when omitted.
    #[arg(long)]
    basis: Option<PathBuf>,
    /// Code length when fitting a basis.
    #[arg(long = "code-dim", default_value_t = kernel_code::DEFAULT_CODE_DIM)]
    code_dim: usize,
    /// Resampled kernel side when fitting a basis.
    #[arg(long, default_value_t = kernel_code::DEFAULT_SIDE)]
    side: usize,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct PcaFitArgs {
    #[arg(long = "psf-set")]
    psf_set: PathBuf,
    #[arg(long = "code-dim", default_value_t = kernel_code::DEFAULT_CODE_DIM)]
    code_dim: usize,
    #[arg(long, default_value_t = kernel_code::DEFAULT_SIDE)]
    side: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct EncodeKernelArgs {
    #[arg(long)]
    psf: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct WienerArgs {
    /// Tone-mapped degraded image.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    psf: PathBuf,
    /// One value, or one per channel.
    #[arg(long, num_args = 1..=3, default_values_t = [1e-3])]
    nsr: Vec<f64>,
    #[arg(long, default_value_t = 0.25)]
    alpha: f64,
    /// Border model: replicate or zero.
    #[arg(long, default_value = "replicate")]
    boundary: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    /// Dataset directory written by `synthesize`.
    #[arg(long)]
    data: PathBuf,
    /// Network configuration (key=value).
    #[arg(long)]
    net: Option<PathBuf>,
    /// Training configuration (key=value).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Loss log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// PSF of the degradation (needs --basis).
    #[arg(long, requires = "basis")]
    psf: Option<PathBuf>,
    #[arg(long)]
    basis: Option<PathBuf>,
    /// Kernel code given directly.
    #[arg(long, num_args = 1.., allow_negative_numbers = true, conflicts_with = "psf")]
    code: Option<Vec<f64>>,
    #[arg(long, default_value_t = 128)]
    tile: usize,
    #[arg(long, default_value_t = 16)]
    overlap: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    /// Directory of restored PFMs.
    #[arg(long, requires = "gt", conflicts_with_all = ["model", "data"])]
    pred: Option<PathBuf>,
    /// Directory of ground-truth PFMs with matching names.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Evaluate a model on a dataset directly.
    #[arg(long, requires = "data")]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// With --model: feed each pair the code of the next rotation angle.
    #[arg(long, value_parser = ["permute"], requires = "model")]
    mismatch: Option<String>,
    #[arg(long, default_value_t = 128)]
    tile: usize,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct PostprocArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// 3x3 color correction matrix, 9 numbers row-major.
    #[arg(long)]
    ccm: Option<PathBuf>,
    #[arg(long, num_args = 3, default_values_t = [1.0, 1.0, 1.0])]
    gains: Vec<f64>,
    /// CLAHE as COLSxROWS:CLIP, or `off`.
    #[arg(long, default_value = "8x8:2.0")]
    clahe: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Run the CLI on `args` (including the program name) and return the exit
/// code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("udc: {e}");
            return exit_code(&e);
        }
    };
    let matches = match Cli::command().try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("udc: {e}");
            exit_code(&e)
        }
    }
}

/// Cap the global rayon pool with `UDC_THREADS`.
fn configure_threads() {
    if let Some(n) = std::env::var("UDC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            // fails harmlessly if the pool already exists
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

/// Splice `--config FILE` entries into the argument list.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(sub_pos) = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
    else {
        return Ok(args);
    };
    let sub_pos = sub_pos + 1;
    let mut path = None;
    let mut rest = Vec::new();
    let mut it = args[sub_pos + 1..].iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            match it.next() {
                Some(p) => path = Some(PathBuf::from(p)),
                None => rest.push(a.clone()),
            }
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else {
            rest.push(a.clone());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let sub_name = args[sub_pos].to_string_lossy().to_string();
    let root = Cli::command();
    let Some(sub) = root.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let kv = KvFile::read(&path)?;
    let given: Vec<String> = rest
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|s| s.strip_prefix("--"))
        .map(|s| s.split('=').next().unwrap_or(s).to_string())
        .collect();

    let mut injected: Vec<OsString> = Vec::new();
    for (key, value, line) in kv.entries() {
        let flag = key.replace('_', "-");
        let config_err = |msg: String| Error::Config {
            path: path.clone(),
            line,
            msg,
        };
        if flag == "config" {
            return Err(config_err("`config` cannot be nested".into()));
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(flag.as_str()))
            .ok_or_else(|| config_err(format!("unknown key `{key}` for {sub_name}")))?;
        if given.iter().any(|g| *g == flag) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value {
                "true" => injected.push(format!("--{flag}").into()),
                "false" => {}
                _ => return Err(config_err(format!("`{key}` must be true or false"))),
            },
            _ => {
                let multi = arg.get_num_args().is_some_and(|r| r.max_values() > 1);
                injected.push(format!("--{flag}").into());
                if multi {
                    injected.extend(value.split_whitespace().map(OsString::from));
                } else {
                    injected.push(value.into());
                }
            }
        }
    }
    let mut out = args[..=sub_pos].to_vec();
    out.extend(injected);
    out.extend(rest);
    Ok(out)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::SimulatePsf(a) => simulate_psf(a),
        Command::FusePsf(a) => fuse_psf(a),
        Command::RotatePsf(a) => rotate_psf(a),
        Command::GenScenes(a) => gen_scenes(a),
        Command::Synthesize(a) => synthesize(a),
        Command::PcaFit(a) => pca_fit(a),
        Command::EncodeKernel(a) => encode_kernel_cmd(a),
        Command::Wiener(a) => wiener(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Postproc(a) => postproc(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read a PSF and its metadata sidecar.
pub fn read_psf(path: &Path) -> Result<PsfStack> {
    let mut psf = PsfStack::from_image(&read_pfm(path)?)?;
    apply_psf_meta(path, &mut psf)?;
    Ok(psf)
}

/// Write a PSF and its metadata sidecar.
pub fn write_psf(path: &Path, psf: &PsfStack) -> Result<()> {
    write_pfm(path, &psf.to_image())?;
    write_psf_meta(path, psf)
}

fn read_psf_set(dir: &Path) -> Result<Vec<(String, PsfStack)>> {
    let files = list_pfm(dir)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no PSF files in {}",
            dir.display()
        )));
    }
    files
        .iter()
        .map(|f| Ok((file_name(f), read_psf(f)?)))
        .collect()
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn simulate_psf(a: SimulatePsfArgs) -> Result<()> {
    let cfg = match &a.optics {
        Some(p) => config::read_optics(p)?,
        None => OpticalConfig::default(),
    };
    let raw = read_pfm_any(&a.pattern)?;
    if raw.width != raw.height {
        return Err(Error::Shape(format!(
            "pattern must be square, got {}x{}",
            raw.width, raw.height
        )));
    }
    let t: Vec<f64> = raw
        .data
        .chunks_exact(raw.channels)
        .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / raw.channels as f64)
        .collect();
    let pattern = DisplayPattern::new(raw.width, cfg.pitch, t)?;
    // sampling warnings are already logged by the simulator
    let sim = optics::simulate_psf(&pattern, &cfg)?;
    let psf = match a.crop {
        Some(n) => sim.psf.center_crop(n)?,
        None => sim.psf,
    };
    write_psf(&a.out, &psf)
}

fn fuse_psf(a: FusePsfArgs) -> Result<()> {
    let captures = a
        .captures
        .iter()
        .map(read_pfm)
        .collect::<Result<Vec<_>>>()?;
    let psf = formation::fuse_psf_exposures(&captures, &a.times, a.sat)?;
    write_psf(&a.out, &psf)
}

fn rotate_psf(a: RotatePsfArgs) -> Result<()> {
    let psf = read_psf(&a.input)?;
    write_psf(&a.out, &formation::rotate_psf(&psf, a.angle)?)
}

/// Per-item seed derived from a base seed.
fn item_seed(seed: u64, index: u64) -> u64 {
    // SplitMix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn gen_scenes(a: GenScenesArgs) -> Result<()> {
    if a.count == 0 || a.size < 8 {
        return Err(Error::InvalidArgument(
            "need count >= 1 and size >= 8".into(),
        ));
    }
    if !(a.peak.is_finite() && a.peak > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "peak must be positive, got {}",
            a.peak
        )));
    }
    create_dir(&a.out)?;
    (0..a.count).into_par_iter().try_for_each(|i| {
        let scene = formation::gen_synthetic_scene(
            a.size,
            a.size,
            a.highlights,
            a.peak,
            item_seed(a.seed, i as u64),
        );
        write_pfm(a.out.join(format!("scene_{i:05}.pfm")), &scene)
    })
}

fn synthesize(a: SynthesizeArgs) -> Result<()> {
    let params = FormationParams {
        x_max: a.xmax,
        alpha: a.alpha,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
    };
    params.validate()?;
    let scene_files = list_pfm(&a.scenes)?;
    if scene_files.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no scenes in {}",
            a.scenes.display()
        )));
    }
    let psfs = read_psf_set(&a.psf_set)?;
    let basis = match &a.basis {
        Some(p) => read_basis(p)?,
        None => {
            let kernels: Vec<PsfStack> = psfs.iter().map(|(_, k)| k.clone()).collect();
            let b = a.code_dim.min(kernels.len().saturating_sub(1)).max(1);
            if b < a.code_dim {
                log::warn!(
                    "only {} kernels; fitting a {b}-dimensional basis",
                    kernels.len()
                );
            }
            kernel_code::fit_pca(&kernels, b, a.side)?
        }
    };
    let codes = psfs
        .iter()
        .map(|(_, k)| encode_kernel(k, &basis))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&a.out)?;
    write_basis(a.out.join(BASIS_FILE), &basis)?;

    let n_psf = psfs.len();
    scene_files.par_iter().enumerate().try_for_each(|(si, sf)| {
        let scene = read_pfm(sf)?;
        for (pi, (pname, psf)) in psfs.iter().enumerate() {
            let index = si * n_psf + pi;
            let p = FormationParams {
                seed: item_seed(params.seed, index as u64),
                ..params.clone()
            };
            let pair = formation::simulate_degraded(&scene, psf, &p)?
                .with_code(codes[pi].clone(), psf.angle_deg);
            write_pair(&a.out, &pair_stem(index), &pair, &file_name(sf), pname)?;
        }
        Ok(())
    })
}

fn pca_fit(a: PcaFitArgs) -> Result<()> {
    let psfs = read_psf_set(&a.psf_set)?;
    let kernels: Vec<PsfStack> = psfs.into_iter().map(|(_, k)| k).collect();
    let basis = kernel_code::fit_pca(&kernels, a.code_dim, a.side)?;
    write_basis(&a.out, &basis)?;
    println!(
        "fitted {} components over {} kernels",
        basis.code_dim(),
        kernels.len()
    );
    Ok(())
}

fn format_code(code: &KernelCode) -> String {
    code.as_slice()
        .iter()
        .map(|c| format!("{c:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn encode_kernel_cmd(a: EncodeKernelArgs) -> Result<()> {
    let psf = read_psf(&a.psf)?;
    let basis = read_basis(&a.basis)?;
    println!("{}", format_code(&encode_kernel(&psf, &basis)?));
    Ok(())
}

fn wiener(a: WienerArgs) -> Result<()> {
    let nsr = match a.nsr.as_slice() {
        [v] => [*v; 3],
        [r, g, b] => [*r, *g, *b],
        _ => {
            return Err(Error::InvalidArgument(
                "--nsr takes one or three values".into(),
            ))
        }
    };
    let params = WienerParams {
        nsr,
        boundary: a.boundary.parse::<Boundary>()?,
    };
    let img = read_pfm(&a.input)?;
    let psf = read_psf(&a.psf)?;
    write_pfm(
        &a.out,
        &restore::wiener_deconvolve(&img, &psf, &params, a.alpha)?,
    )
}

fn train(a: TrainArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let net = match &a.net {
        Some(p) => config::read_net_config(p)?,
        // without a config the code length follows the dataset
        None => discnet::NetworkConfig {
            code_dim: data[0].pair.code.as_slice().len(),
            ..discnet::NetworkConfig::default()
        },
    };
    let tc = match &a.train {
        Some(p) => config::read_train_config(p)?,
        None => discnet::TrainConfig::default(),
    };
    let pairs: Vec<_> = data.into_iter().map(|s| s.pair).collect();
    let result = discnet::train(&pairs, &net, &tc)?;
    write_model(&a.out, &result.params)?;
    if let Some(log) = &a.log {
        write_text(log, &LossRecord::csv(&result.log))?;
    }
    if let Some((first, last)) = discnet::smoothed_l1(&result.log, 10) {
        println!(
            "trained {} iterations: smoothed l1 {first:.5} -> {last:.5}",
            result.log.len()
        );
    }
    Ok(())
}

fn clamp_unit(img: &Image) -> Image {
    img.map(|v| v.clamp(0.0, 1.0))
}

fn infer(a: InferArgs) -> Result<()> {
    let params = read_model(&a.model)?;
    let img = read_pfm(&a.input)?;
    let code = match (&a.code, &a.psf, &a.basis) {
        (Some(c), _, _) => KernelCode(c.clone()),
        (None, Some(psf), Some(basis)) => encode_kernel(&read_psf(psf)?, &read_basis(basis)?)?,
        _ => {
            return Err(Error::InvalidArgument(
                "give either --code or --psf with --basis".into(),
            ))
        }
    };
    let opts = InferOptions {
        tile: a.tile,
        overlap: a.overlap,
    };
    let out = discnet::infer(&params, &img, &code, &opts)?;
    write_pfm(&a.out, &clamp_unit(&out))
}

/// For each pair, the code of the next distinct rotation angle (cyclic).
pub fn permuted_codes(pairs: &[StoredPair]) -> Result<Vec<KernelCode>> {
    let mut angles: Vec<f64> = pairs.iter().map(|p| p.pair.angle_deg).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup();
    if angles.len() < 2 {
        return Err(Error::InvalidArgument(
            "--mismatch permute needs at least two rotation angles".into(),
        ));
    }
    let code_for = |angle: f64| {
        pairs
            .iter()
            .find(|p| p.pair.angle_deg == angle)
            .map(|p| p.pair.code.clone())
            .expect("angle taken from pairs")
    };
    Ok(pairs
        .iter()
        .map(|p| {
            let i = angles
                .iter()
                .position(|&a| a == p.pair.angle_deg)
                .expect("present");
            code_for(angles[(i + 1) % angles.len()])
        })
        .collect())
}

/// Mean absolute error over all samples.
pub fn mean_l1(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.data().len() as f64)
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut scores = Vec::new();
    let mut l1_sum = 0.0;
    if let (Some(pred), Some(gt)) = (&a.pred, &a.gt) {
        let files = list_pfm(pred)?;
        if files.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no PFM files in {}",
                pred.display()
            )));
        }
        for f in &files {
            let name = file_name(f);
            let p = read_pfm(f)?;
            let g = read_pfm(gt.join(&name))?;
            l1_sum += mean_l1(&p, &g)?;
            scores.push(score(name, &p, &g)?);
        }
    } else if let (Some(model), Some(data)) = (&a.model, &a.data) {
        let params: NetworkParams = read_model(model)?;
        let pairs = read_dataset(data)?;
        let codes = match a.mismatch.as_deref() {
            Some("permute") => permuted_codes(&pairs)?,
            _ => pairs.iter().map(|p| p.pair.code.clone()).collect(),
        };
        let opts = InferOptions {
            tile: a.tile,
            ..InferOptions::default()
        };
        for (sp, code) in pairs.iter().zip(&codes) {
            let out = clamp_unit(&discnet::infer(&params, &sp.pair.degraded, code, &opts)?);
            l1_sum += mean_l1(&out, &sp.pair.target)?;
            scores.push(score(sp.stem.clone(), &out, &sp.pair.target)?);
        }
    } else {
        return Err(Error::InvalidArgument(
            "give --pred with --gt, or --model with --data".into(),
        ));
    }
    let n = scores.len() as f64;
    let report = MetricReport::from_scores(scores);
    write_text(&a.report, &report.to_csv())?;
    println!(
        "images {} psnr {} ssim {:.6} l1 {:.6}",
        n,
        fmt_db(report.psnr),
        report.ssim,
        l1_sum / n
    );
    Ok(())
}

fn score(name: String, pred: &Image, gt: &Image) -> Result<ImageScore> {
    Ok(ImageScore {
        name,
        psnr: metrics::psnr(pred, gt, 1.0)?,
        ssim: metrics::ssim(pred, gt)?,
    })
}

/// Parse `COLSxROWS:CLIP`; `off` disables CLAHE.
fn parse_clahe(s: &str) -> Result<Option<((usize, usize), f64)>> {
    if s == "off" {
        return Ok(None);
    }
    let bad = || Error::InvalidArgument(format!("--clahe expects COLSxROWS:CLIP or off, got {s}"));
    let (grid, clip) = s.split_once(':').ok_or_else(bad)?;
    let (c, r) = grid.split_once('x').ok_or_else(bad)?;
    let tiles = (c.parse().map_err(|_| bad())?, r.parse().map_err(|_| bad())?);
    let clip: f64 = clip.parse().map_err(|_| bad())?;
    Ok(Some((tiles, clip)))
}

/// Quantize to 8 bits, rounding halves up.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

fn write_png(path: &Path, img: &Image) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(
        std::io::BufWriter::new(file),
        img.width() as u32,
        img.height() as u32,
    );
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img.to_interleaved().into_iter().map(quantize_u8).collect();
    let mut w = enc
        .write_header()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    w.write_image_data(&bytes)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    w.finish()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

fn postproc(a: PostprocArgs) -> Result<()> {
    let img = read_pfm(&a.input)?;
    let ccm = match &a.ccm {
        Some(p) => config::read_ccm(p)?,
        None => restore::IDENTITY_CCM,
    };
    let gains = [a.gains[0], a.gains[1], a.gains[2]];
    let out = match parse_clahe(&a.clahe)? {
        Some((tiles, clip)) => {
            let p = PostprocParams {
                ccm,
                gains,
                clahe_tiles: tiles,
                clahe_clip: clip,
            };
            restore::postprocess(&clamp_unit(&img), &p)?
        }
        None => restore::rgb_scale(&restore::apply_ccm(&clamp_unit(&img), &ccm), &gains),
    };
    write_png(&a.out, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clap_definition_is_valid() {
        Cli::command().debug_assert();
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(0.5 / 255.0), 1);
        assert_eq!(quantize_u8(0.49 / 255.0), 0);
        assert_eq!(quantize_u8(2.0), 255);
    }

    #[test]
    fn clahe_spec_parsing() {
        assert_eq!(parse_clahe("8x4:2.5").unwrap(), Some(((8, 4), 2.5)));
        assert_eq!(parse_clahe("off").unwrap(), None);
        assert!(parse_clahe("8:2").is_err());
    }

    #[test]
    fn item_seeds_differ() {
        assert_ne!(item_seed(0, 0), item_seed(0, 1));
        assert_ne!(item_seed(0, 0), item_seed(1, 0));
    }

    #[test]
    fn config_expansion() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("r.cfg");
        std::fs::write(&cfg, "angle = -3\nout = from_cfg.pfm\n").unwrap();
        let args: Vec<OsString> = [
            "udc",
            "rotate-psf",
            "--in",
            "a.pfm",
            "--out",
            "x.pfm",
            "--config",
        ]
        .iter()
        .map(OsString::from)
        .chain([cfg.clone().into_os_string()])
        .collect();
        let out = expand_config(args).unwrap();
        let s: Vec<String> = out
            .iter()
            .map(|a| a.to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            s,
            [
                "udc",
                "rotate-psf",
                "--angle",
                "-3",
                "--in",
                "a.pfm",
                "--out",
                "x.pfm"
            ]
        );

        std::fs::write(&cfg, "angle = 1\nbogus = 2\n").unwrap();
        let args: Vec<OsString> = ["udc", "rotate-psf", "--config"]
            .iter()
            .map(OsString::from)
            .chain([cfg.into_os_string()])
            .collect();
        let err = expand_config(args).unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
    }
}
