//! Per-step metric records and their CSV form.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossBreakdown;

/// The per-batch record: iteration, both objectives, and image quality of
/// the generator's output on the batch after its update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub iter: u64,
    pub critic_loss: f64,
    pub gen_loss: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// A [`StepMetrics`] with the generator objective's terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub metrics: StepMetrics,
    pub breakdown: LossBreakdown,
    /// Critic updates actually applied in this step.
    pub critic_updates: u32,
    /// Whether the generator update was applied.
    pub generator_updated: bool,
}

pub const CSV_HEADER: &str = "iter,critic_loss,gen_loss,content_loss,adv_loss,fcos,psnr,ssim";
/// Checkpoint history adds the update counts.
const HISTORY_HEADER: &str = "iter,critic_loss,gen_loss,content_loss,adv_loss,fcos,psnr,ssim,critic_updates,generator_updated";

impl StepRecord {
    /// One CSV line (no newline). Floats use the shortest representation
    /// that parses back to the same value.
    pub fn csv_row(&self) -> String {
        let m = &self.metrics;
        let b = &self.breakdown;
        format!(
            "{},{},{},{},{},{},{},{}",
            m.iter, m.critic_loss, m.gen_loss, b.content, b.adversarial, b.fcos, m.psnr, m.ssim
        )
    }

    fn history_row(&self) -> String {
        format!("{},{},{}", self.csv_row(), self.critic_updates, u8::from(self.generator_updated))
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 && f.len() != 10 {
            return None;
        }
        let (critic_updates, generator_updated) = if f.len() == 10 {
            (f[8].trim().parse().ok()?, f[9].trim() == "1")
        } else {
            (0, true)
        };
        let n = |i: usize| f[i].trim().parse::<f64>().ok();
        Some(Self {
            metrics: StepMetrics {
                iter: f[0].trim().parse().ok()?,
                critic_loss: n(1)?,
                gen_loss: n(2)?,
                psnr: n(6)?,
                ssim: n(7)?,
            },
            breakdown: LossBreakdown {
                content: n(3)?,
                adversarial: n(4)?,
                fcos: n(5)?,
            },
            critic_updates,
            generator_updated,
        })
    }
}

/// Writes a header plus one row per record.
pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[StepRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Appends rows to an existing CSV (creating it with a header if missing).
pub fn append_metrics_csv(path: impl AsRef<Path>, records: &[StepRecord]) -> Result<()> {
    let path = path.as_ref();
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    if fresh {
        out.push_str(CSV_HEADER);
        out.push('\n');
    }
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes the checkpoint history (metrics plus update counts).
pub(crate) fn write_history_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.history_row());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a metrics CSV written by [`write_metrics_csv`] (or a checkpoint history).
pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(f).lines();
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    match lines.next() {
        Some(Ok(h)) if h.trim() == CSV_HEADER || h.trim() == HISTORY_HEADER => {}
        _ => return Err(bad("missing metrics header".into())),
    }
    lines
        .map(|l| {
            let l = l.map_err(|e| Error::io(path, e))?;
            StepRecord::parse(&l).ok_or_else(|| bad(format!("malformed row {l:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let r = StepRecord {
            metrics: StepMetrics {
                iter: 3,
                critic_loss: -0.1 / 3.0,
                gen_loss: 1e-17,
                psnr: 100.0,
                ssim: 0.123_456_789_012_345_68,
            },
            breakdown: LossBreakdown {
                content: 0.2,
                adversarial: f64::MIN_POSITIVE,
                fcos: 1.0,
            },
            critic_updates: 0,
            generator_updated: true,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &[r, r]).unwrap();
        assert_eq!(read_metrics_csv(&p).unwrap(), vec![r, r]);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        let r2 = StepRecord {
            critic_updates: 4,
            generator_updated: false,
            ..r
        };
        write_history_csv(&p, &[r2]).unwrap();
        assert_eq!(read_metrics_csv(&p).unwrap(), vec![r2]);
    }
}
