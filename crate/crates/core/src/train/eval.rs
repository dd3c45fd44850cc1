//! Held-out evaluation against the bicubic baseline.

use serde::Serialize;

use crate::data::{upscale_bicubic, ImagePair};
use crate::error::{Error, Result};
use crate::loss::{psnr, ssim};
use crate::nn::Generator;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub source: String,
    pub psnr: f64,
    pub ssim: f64,
    pub bicubic_psnr: f64,
    pub bicubic_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_bicubic_psnr: f64,
    pub mean_bicubic_ssim: f64,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset("nothing to evaluate".into()));
        }
        let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
        Ok(Self {
            mean_psnr: mean(&|r| r.psnr),
            mean_ssim: mean(&|r| r.ssim),
            mean_bicubic_psnr: mean(&|r| r.bicubic_psnr),
            mean_bicubic_ssim: mean(&|r| r.bicubic_ssim),
            rows,
        })
    }

    /// CSV with one row per image followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,psnr,ssim,bicubic_psnr,bicubic_ssim\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.source.replace(',', "_"),
                r.psnr,
                r.ssim,
                r.bicubic_psnr,
                r.bicubic_ssim
            ));
        }
        s.push_str(&format!(
            "mean,{},{},{},{}\n",
            self.mean_psnr, self.mean_ssim, self.mean_bicubic_psnr, self.mean_bicubic_ssim
        ));
        s
    }
}

/// Super-resolves `x` (`[3, h, w]`) and clamps to `[0, 1]`.
pub fn super_resolve<T: Element>(generator: &Generator<T>, lr: &Tensor<T>) -> Result<Tensor<T>> {
    let s = lr.shape();
    let batched = lr.clone().reshape(&[1, s[0], s[1], s[2]])?;
    let out = generator.infer(&batched)?;
    let o = out.shape().to_vec();
    Ok(out.reshape(&o[1..])?.map(|v| v.max(T::zero()).min(T::one())))
}

/// PSNR/SSIM of the generator and of bicubic upscaling on every pair.
pub fn evaluate<T: Element>(generator: &Generator<T>, pairs: &[ImagePair]) -> Result<EvalReport> {
    let rows = pairs
        .iter()
        .map(|p| {
            let lr: Tensor<T> = p.lr.cast();
            let hr: Tensor<T> = p.hr.cast();
            let sr = super_resolve(generator, &lr)?;
            let bic = upscale_bicubic(&lr)?;
            Ok(EvalRow {
                source: p.source.clone(),
                psnr: psnr(&sr, &hr, 1.0)?,
                ssim: ssim(&sr, &hr)?,
                bicubic_psnr: psnr(&bic, &hr, 1.0)?,
                bicubic_ssim: ssim(&bic, &hr)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_rows(rows)
}
