//! Image quality metrics and evaluation reports.

use serde::{Deserialize, Serialize, Serializer};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage, TextureMap};
use crate::mesh::FaceMesh;
use crate::raster;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(a: &RgbImage, b: &RgbImage, mask: Option<&Mask>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::InvalidInput(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if let Some(m) = mask {
        if m.width() != a.width() || m.height() != a.height() {
            return Err(Error::InvalidInput("mask size differs from image size".into()));
        }
        if m.is_empty() {
            return Err(Error::InvalidInput("mask selects no pixels".into()));
        }
    }
    Ok(())
}

/// Mean of `f(|a - b|)` over (masked) pixels and channels.
fn masked_mean(a: &RgbImage, b: &RgbImage, mask: Option<&Mask>, f: impl Fn(f64) -> f64) -> Result<f64> {
    check_pair(a, b, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, (pa, pb)) in a.data().chunks_exact(3).zip(b.data().chunks_exact(3)).enumerate() {
        if mask.is_some_and(|m| !m.data()[p]) {
            continue;
        }
        for c in 0..3 {
            sum += f(pa[c] - pb[c]);
        }
        n += 3;
    }
    Ok(sum / n as f64)
}

pub fn mae(a: &RgbImage, b: &RgbImage, mask: Option<&Mask>) -> Result<f64> {
    masked_mean(a, b, mask, f64::abs)
}

pub fn mse(a: &RgbImage, b: &RgbImage, mask: Option<&Mask>) -> Result<f64> {
    masked_mean(a, b, mask, |d| d * d)
}

/// Peak signal-to-noise ratio for unit peak; infinite for identical inputs.
pub fn psnr(a: &RgbImage, b: &RgbImage, mask: Option<&Mask>) -> Result<f64> {
    let m = mse(a, b, mask)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / m).log10() })
}

fn luma(img: &RgbImage) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter over fully contained windows only.
fn filter_valid(src: &[f64], width: usize, height: usize) -> Vec<f64> {
    let k = gaussian_window();
    let (ow, oh) = (width - SSIM_WINDOW + 1, height - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * width + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Per-window SSIM of the luma channels; window `(x, y)` is centred on
/// pixel `(x + 5, y + 5)`.
pub fn ssim_map(a: &RgbImage, b: &RgbImage) -> Result<(Vec<f64>, usize, usize)> {
    check_pair(a, b, None)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let (la, lb) = (luma(a), luma(b));
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&la, w, h);
    let mu_b = filter_valid(&lb, w, h);
    let saa = filter_valid(&prod(&la, &la), w, h);
    let sbb = filter_valid(&prod(&lb, &lb), w, h);
    let sab = filter_valid(&prod(&la, &lb), w, h);
    let map = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .collect();
    Ok((map, w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1))
}

/// Single-scale SSIM averaged over all window positions.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let (map, _, _) = ssim_map(a, b)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// SSIM averaged over the windows whose centre lies inside `mask`.
pub fn ssim_masked(a: &RgbImage, b: &RgbImage, mask: &Mask) -> Result<f64> {
    check_pair(a, b, Some(mask))?;
    let (map, ow, oh) = ssim_map(a, b)?;
    let r = SSIM_WINDOW / 2;
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..oh {
        for x in 0..ow {
            if mask.get(x + r, y + r) {
                sum += map[y * ow + x];
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("mask contains no SSIM window centre".into()));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Uv,
    Reprojected,
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn ser_opt_db<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => ser_db(x, s),
        None => s.serialize_none(),
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub id: String,
    pub mae: f64,
    #[serde(serialize_with = "ser_db")]
    pub psnr: f64,
    pub ssim: f64,
    /// UV protocol only: PSNR over the whole texture square.
    #[serde(serialize_with = "ser_opt_db", skip_serializing_if = "Option::is_none")]
    pub psnr_full: Option<f64>,
    /// UV protocol only: PSNR over the valid region.
    #[serde(serialize_with = "ser_opt_db", skip_serializing_if = "Option::is_none")]
    pub psnr_masked: Option<f64>,
    /// Slots for identity scores computed by external tools.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity_lightcnn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity_evolve: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub records: Vec<EvalRecord>,
    pub mean_mae: f64,
    #[serde(serialize_with = "ser_db")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn new(protocol: Protocol, records: Vec<EvalRecord>) -> Self {
        let n = records.len().max(1) as f64;
        Self {
            protocol,
            mean_mae: records.iter().map(|r| r.mae).sum::<f64>() / n,
            mean_psnr: records.iter().map(|r| r.psnr).sum::<f64>() / n,
            mean_ssim: records.iter().map(|r| r.ssim).sum::<f64>() / n,
            records,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,protocol,mae,psnr,ssim,psnr_full,psnr_masked\n");
        let tag = match self.protocol {
            Protocol::Uv => "uv",
            Protocol::Reprojected => "reprojected",
        };
        for r in &self.records {
            out.push_str(&format!(
                "{},{tag},{:.6},{},{:.6},{},{}\n",
                r.id,
                r.mae,
                fmt_db(r.psnr),
                r.ssim,
                r.psnr_full.map(fmt_db).unwrap_or_default(),
                r.psnr_masked.map(fmt_db).unwrap_or_default()
            ));
        }
        out
    }
}

/// Renders `texture` and compares it with the photograph inside the face
/// mask.
pub fn evaluate_reprojected(
    id: &str,
    texture: &TextureMap,
    mesh: &FaceMesh,
    pose: &CameraPose,
    input_image: &RgbImage,
) -> Result<EvalRecord> {
    let rendered = raster::render(mesh, texture, pose)?;
    let mask = &rendered.coverage;
    if mask.is_empty() {
        return Err(Error::NoVisibleRegion);
    }
    Ok(EvalRecord {
        id: id.to_string(),
        mae: mae(&rendered.pixels, input_image, Some(mask))?,
        psnr: psnr(&rendered.pixels, input_image, Some(mask))?,
        ssim: ssim_masked(&rendered.pixels, input_image, mask)?,
        psnr_full: None,
        psnr_masked: None,
        identity_lightcnn: None,
        identity_evolve: None,
    })
}

/// Compares a texture with a ground-truth texture in UV space. `region`
/// selects the texels of the masked scores; the headline PSNR is the
/// masked one.
pub fn evaluate_uv(id: &str, texture: &TextureMap, ground_truth: &TextureMap, region: &Mask) -> Result<EvalRecord> {
    let (a, b) = (texture.pixels(), ground_truth.pixels());
    let masked = psnr(a, b, Some(region))?;
    Ok(EvalRecord {
        id: id.to_string(),
        mae: mae(a, b, Some(region))?,
        psnr: masked,
        ssim: ssim_masked(a, b, region)?,
        psnr_full: Some(psnr(a, b, None)?),
        psnr_masked: Some(masked),
        identity_lightcnn: None,
        identity_evolve: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(side: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(side, side, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn simple_values() {
        let a = RgbImage::filled(8, 8, [0.2; 3]);
        let b = RgbImage::filled(8, 8, [0.7; 3]);
        assert!((mae(&a, &b, None).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(mae(&a, &a, None).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
        let c = RgbImage::filled(8, 8, [0.3; 3]);
        assert!((psnr(&a, &c, None).unwrap() - 20.0).abs() < 1e-9);
        assert!(mae(&a, &b, Some(&Mask::new(8, 8))).is_err());
    }

    #[test]
    fn ssim_identity_symmetry_and_anticorrelation() {
        let a = random_image(32, 1);
        let b = random_image(32, 2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
        let board = RgbImage::from_fn(32, 32, |x, y| [((x + y) % 2) as f64; 3]);
        let inverse = RgbImage::from_fn(32, 32, |x, y| [1.0 - ((x + y) % 2) as f64; 3]);
        assert!(ssim(&board, &inverse).unwrap() < 0.0);
        assert!(ssim(&RgbImage::new(10, 10), &RgbImage::new(10, 10)).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let base = RgbImage::filled(32, 32, [0.5; 3]);
        let mut prev = f64::INFINITY;
        for amp in [0.01, 0.05, 0.2] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let noisy = RgbImage::from_fn(32, 32, |_, _| {
                [0.5 + amp * rng.random_range(-1.0..1.0), 0.5 + amp * rng.random_range(-1.0..1.0), 0.5 + amp * rng.random_range(-1.0..1.0)]
            });
            let p = psnr(&base, &noisy, None).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn report_serializes_inf_sentinel() {
        let r = EvalRecord {
            id: "a".into(),
            mae: 0.0,
            psnr: f64::INFINITY,
            ssim: 1.0,
            psnr_full: Some(f64::INFINITY),
            psnr_masked: None,
            identity_lightcnn: None,
            identity_evolve: None,
        };
        let rep = EvalReport::new(Protocol::Uv, vec![r]);
        let json = rep.to_json();
        assert!(json.contains("\"psnr\": \"inf\"") && json.contains("\"protocol\": \"uv\""), "{json}");
        assert!(rep.to_csv().lines().nth(1).unwrap().starts_with("a,uv,0.000000,inf,1.000000,inf,"));
    }
}
