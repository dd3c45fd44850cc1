//! The four subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use hetsr::data::{load_image, save_image, upscale_bicubic, Dataset, ImagePair};
use hetsr::loss::{psnr, ssim};
use hetsr::nn::{count_flops, CostReport};
use hetsr::train::{
    append_metrics_csv, evaluate, load_generator, save_checkpoint, super_resolve, write_metrics_csv, TrainState,
};
use hetsr::Element;

use crate::config::RunConfig;
use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} not found: {}", path.display())))
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    if !cfg.dataset.is_synthetic() && !cfg.dataset.root.is_dir() {
        return Err(CliError::usage(format!(
            "dataset directory not found: {}",
            cfg.dataset.root.display()
        )));
    }
    Ok(cfg.dataset.load()?)
}

pub fn parse_extent(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::usage(format!("input extent must look like 24x24, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.f64 {
        train_as::<f64>(cfg)
    } else {
        train_as::<f32>(cfg)
    }
}

/// Writes the reference images of the sample pair once.
fn write_sample_refs(dir: &Path, pair: &ImagePair) -> Result<(), CliError> {
    save_image(&pair.lr, dir.join("lr.png"))?;
    save_image(&pair.hr, dir.join("hr.png"))?;
    save_image(&upscale_bicubic(&pair.lr)?, dir.join("bicubic.png"))?;
    Ok(())
}

fn write_sample<T: Element>(state: &TrainState<T>, dir: &Path, pair: &ImagePair) -> hetsr::Result<()> {
    let sr = super_resolve(&state.generator, &pair.lr.cast::<T>())?;
    save_image(&sr, dir.join(format!("iter_{:06}.png", state.iteration)))
}

fn train_as<T: Element>(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    if ds.train.is_empty() {
        return Err(CliError::usage("dataset yields no training pairs"));
    }
    let out = &cfg.output;
    let samples = out.join("samples");
    create_dir(&samples)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    let metrics = out.join("metrics.csv");
    write_metrics_csv(&metrics, &[])?;
    let sample_pair = ds.val.first().unwrap_or(&ds.train[0]).clone();
    write_sample_refs(&samples, &sample_pair)?;

    let mut state = TrainState::<T>::new(cfg.train.clone())?;
    let ckpt = cfg.checkpoint_dir();
    log::info!(
        "training {} iterations on {} pairs ({} held out), {} precision",
        cfg.iterations,
        ds.train.len(),
        ds.val.len(),
        if cfg.f64 { "64-bit" } else { "32-bit" }
    );
    state.fit_with(&ds.train, cfg.iterations, |s, rec| {
        append_metrics_csv(&metrics, std::slice::from_ref(rec))?;
        let it = rec.metrics.iter;
        if cfg.sample_every > 0 && it % cfg.sample_every == 0 {
            write_sample(s, &samples, &sample_pair)?;
        }
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            save_checkpoint(s, &ckpt)?;
        }
        log::debug!("{}", rec.csv_row());
        Ok(())
    })?;
    write_sample(&state, &samples, &sample_pair)?;
    save_checkpoint(&state, &ckpt)?;
    if !state.events.is_empty() {
        log::warn!("{} update(s) skipped; see {}", state.events.len(), ckpt.join("manifest.json").display());
    }
    if !ds.val.is_empty() {
        let report = evaluate(&state.generator, &ds.val)?;
        write_file(&out.join("eval.csv"), &report.to_csv())?;
        println!(
            "held-out: psnr {} ssim {} | bicubic psnr {} ssim {}",
            report.mean_psnr, report.mean_ssim, report.mean_bicubic_psnr, report.mean_bicubic_ssim
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn sr(cfg: &RunConfig, input: &Path, output: &Path, reference: Option<&Path>) -> Result<(), CliError> {
    let ckpt = cfg.checkpoint_dir();
    require_exists(&ckpt.join("manifest.json"), "checkpoint")?;
    require_exists(input, "input image")?;
    if let Some(r) = reference {
        require_exists(r, "reference image")?;
    }
    if cfg.f64 {
        sr_as::<f64>(&ckpt, input, output)?;
    } else {
        sr_as::<f32>(&ckpt, input, output)?;
    }
    if let Some(r) = reference {
        let got = load_image::<f64>(output)?;
        let want = load_image::<f64>(r)?;
        if got.shape() != want.shape() {
            return Err(CliError::usage(format!(
                "reference {} is {:?} but the upscaled image is {:?}",
                r.display(),
                want.shape(),
                got.shape()
            )));
        }
        println!("psnr {}", psnr(&got, &want, 1.0)?);
        println!("ssim {}", ssim(&got, &want)?);
    }
    Ok(())
}

fn sr_as<T: Element>(ckpt: &Path, input: &Path, output: &Path) -> Result<(), CliError> {
    let g = load_generator::<T>(ckpt)?;
    let lr = load_image::<T>(input)?;
    let sr = super_resolve(&g, &lr)?;
    save_image(&sr, output)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let ckpt = cfg.checkpoint_dir();
    require_exists(&ckpt.join("manifest.json"), "checkpoint")?;
    let ds = load_dataset(cfg)?;
    let pairs: Vec<ImagePair> = ds.train.into_iter().chain(ds.val).collect();
    let report = if cfg.f64 {
        evaluate(&load_generator::<f64>(&ckpt)?, &pairs)?
    } else {
        evaluate(&load_generator::<f32>(&ckpt)?, &pairs)?
    };
    create_dir(&cfg.output)?;
    let path = cfg.output.join("eval.csv");
    write_file(&path, &report.to_csv())?;
    println!("images {}", report.rows.len());
    println!("psnr {} ssim {}", report.mean_psnr, report.mean_ssim);
    println!("bicubic psnr {} ssim {}", report.mean_bicubic_psnr, report.mean_bicubic_ssim);
    println!("wrote {}", path.display());
    Ok(())
}

fn cost_table(title: &str, r: &CostReport) -> String {
    let mut s = format!("{title}\n");
    s.push_str(&format!(
        "{:<20} {:>8} {:>10} {:>10} {:>8} {:>14} {:>14} {:>8}\n",
        "layer", "kind", "weights", "std_wts", "w_ratio", "macs", "std_macs", "m_ratio"
    ));
    for l in &r.layers {
        s.push_str(&format!(
            "{:<20} {:>8} {:>10} {:>10} {:>8.4} {:>14} {:>14} {:>8.4}\n",
            l.name,
            l.kind,
            l.weights,
            l.standard_weights,
            l.weight_ratio(),
            l.macs,
            l.standard_macs,
            l.mac_ratio()
        ));
    }
    let twin = r.standard_twin();
    s.push_str(&format!(
        "params {} (standard twin {})\nconv weights {} (standard twin {}) ratio {:.6}\nmacs {} (standard twin {}) ratio {:.6}\n",
        r.total_params,
        twin.total_params,
        r.total_weights,
        twin.total_weights,
        r.weight_ratio(),
        r.total_macs,
        twin.total_macs,
        r.mac_ratio()
    ));
    s
}

fn cost_csv(r: &CostReport) -> String {
    let mut s = String::from("layer,kind,weights,biases,other,standard_weights,weight_ratio,macs,standard_macs,mac_ratio\n");
    for l in &r.layers {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            l.name,
            l.kind,
            l.weights,
            l.biases,
            l.other,
            l.standard_weights,
            l.weight_ratio(),
            l.macs,
            l.standard_macs,
            l.mac_ratio()
        ));
    }
    s
}

pub fn analyze(cfg: &RunConfig, h: usize, w: usize, write_csv: bool) -> Result<(), CliError> {
    // Costs are structural, so single precision suffices.
    let state = TrainState::<f32>::new(cfg.train.clone())?;
    let c = cfg.train.generator.image_channels;
    let gen = count_flops(&state.generator, &[1, c, h, w])?;
    let side = cfg.train.critic.input_size;
    let critic = count_flops(&state.critic, &[1, c, side, side])?;
    print!("{}", cost_table(&format!("generator (LR input {h}x{w})"), &gen));
    println!();
    print!("{}", cost_table(&format!("critic (input {side}x{side})"), &critic));
    if write_csv {
        create_dir(&cfg.output)?;
        let files: [(PathBuf, &CostReport); 2] =
            [(cfg.output.join("generator_cost.csv"), &gen), (cfg.output.join("critic_cost.csv"), &critic)];
        for (p, r) in files {
            write_file(&p, &cost_csv(r))?;
        }
    }
    Ok(())
}
