//! Heading-aware exposure control and AGCWD contrast enhancement on 8-bit
//! grayscale images.

use thiserror::Error;

pub const L_MAX: f64 = 255.0;
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhotometryError {
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("alpha must be finite and > 0, got {0}")]
    InvalidAlpha(f64),
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("invalid exposure calibration: {0}")]
    InvalidCalibration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExposureCalibration {
    /// Microseconds.
    pub t_exp_min: f64,
    /// Microseconds.
    pub t_exp_max: f64,
}

impl Default for ExposureCalibration {
    fn default() -> Self {
        Self { t_exp_min: 100.0, t_exp_max: 1000.0 }
    }
}

impl ExposureCalibration {
    pub fn new(t_exp_min: f64, t_exp_max: f64) -> Result<Self, PhotometryError> {
        let c = Self { t_exp_min, t_exp_max };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), PhotometryError> {
        if !(self.t_exp_min.is_finite() && self.t_exp_max.is_finite()) {
            return Err(PhotometryError::InvalidCalibration("non-finite bound".into()));
        }
        if !(self.t_exp_min > 0.0 && self.t_exp_min <= self.t_exp_max) {
            return Err(PhotometryError::InvalidCalibration(format!(
                "need 0 < t_exp_min <= t_exp_max, got {} and {}",
                self.t_exp_min, self.t_exp_max
            )));
        }
        Ok(())
    }
}

/// Exposure time for a camera looking opposite to the UAV heading: full
/// `t_exp_max` when flying toward the sun, `t_exp_min` when flying away.
pub fn exposure_time(sun_heading: f64, uav_heading: f64, calib: &ExposureCalibration) -> f64 {
    let span = calib.t_exp_max - calib.t_exp_min;
    let t = 0.5 * ((sun_heading - uav_heading).cos() + 1.0) * span + calib.t_exp_min;
    t.clamp(calib.t_exp_min, calib.t_exp_max)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, PhotometryError> {
        if width == 0 || height == 0 {
            return Err(PhotometryError::MalformedImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(PhotometryError::MalformedImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, PhotometryError> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn map(&self, lut: &[u8; 256]) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| lut[usize::from(p)]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram256 {
    counts: [u64; 256],
    total: u64,
}

impl Histogram256 {
    pub fn from_counts(counts: [u64; 256]) -> Result<Self, PhotometryError> {
        let total = counts.iter().sum();
        if total == 0 {
            return Err(PhotometryError::EmptyHistogram);
        }
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn pdf(&self, level: usize) -> f64 {
        self.counts[level] as f64 / self.total as f64
    }

    pub fn occupied_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

pub fn histogram(img: &GrayImage) -> Histogram256 {
    let mut counts = [0u64; 256];
    for &p in img.pixels() {
        counts[usize::from(p)] += 1;
    }
    // GrayImage is never empty, so total > 0
    Histogram256 { counts, total: img.pixels.len() as u64 }
}

/// Per-level gamma `1 - cdf_w(l)`.
///
/// `fallback` is set when the histogram is degenerate (all pdf values tie,
/// or the whole mass sits in one bin). The weighting step is skipped there
/// and the plain pdf is accumulated instead.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTable {
    pub gamma: [f64; 256],
    pub fallback: bool,
}

pub fn check_alpha(alpha: f64) -> Result<(), PhotometryError> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(PhotometryError::InvalidAlpha(alpha))
    }
}

pub fn agcwd_gamma(hist: &Histogram256, alpha: f64) -> Result<GammaTable, PhotometryError> {
    check_alpha(alpha)?;
    let pdf: Vec<f64> = (0..256).map(|l| hist.pdf(l)).collect();
    let pdf_min = pdf.iter().copied().fold(f64::INFINITY, f64::min);
    let pdf_max = pdf.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let fallback = pdf_max == pdf_min || hist.occupied_bins() == 1;
    let pdf_w: Vec<f64> = if fallback {
        pdf
    } else {
        let range = pdf_max - pdf_min;
        pdf.iter().map(|&p| pdf_max * ((p - pdf_min) / range).powf(alpha)).collect()
    };

    let sum_w: f64 = pdf_w.iter().sum();
    let mut gamma = [0.0; 256];
    let mut acc = 0.0;
    for (l, w) in pdf_w.iter().enumerate() {
        acc += w;
        gamma[l] = (1.0 - acc / sum_w).clamp(0.0, 1.0);
    }
    gamma[255] = 0.0;
    Ok(GammaTable { gamma, fallback })
}

/// `round(l_max * (l / l_max)^gamma(l))`, rounding half away from zero, with
/// `0^gamma = 0` for every gamma including zero.
pub fn intensity_map(table: &GammaTable) -> [u8; 256] {
    let mut lut = [0u8; 256];
    for (l, out) in lut.iter_mut().enumerate() {
        if l == 0 {
            continue;
        }
        let v = L_MAX * (l as f64 / L_MAX).powf(table.gamma[l]);
        *out = v.round().clamp(0.0, L_MAX) as u8;
    }
    lut
}

#[derive(Debug, Clone)]
pub struct Enhanced {
    pub image: GrayImage,
    pub gamma: GammaTable,
}

impl Enhanced {
    pub fn fallback(&self) -> bool {
        self.gamma.fallback
    }
}

/// Enhances `img` with the gamma table of its own histogram. A degenerate
/// histogram leaves the image unchanged.
pub fn agcwd_apply(img: &GrayImage, alpha: f64) -> Result<Enhanced, PhotometryError> {
    let table = agcwd_gamma(&histogram(img), alpha)?;
    let image = if table.fallback { img.clone() } else { img.map(&intensity_map(&table)) };
    Ok(Enhanced { image, gamma: table })
}

fn skip_ws_and_comments(bytes: &[u8], mut i: usize) -> usize {
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else {
            return i;
        }
    }
}

fn header_int(bytes: &[u8], i: &mut usize, what: &str) -> Result<usize, PhotometryError> {
    *i = skip_ws_and_comments(bytes, *i);
    let start = *i;
    while *i < bytes.len() && bytes[*i].is_ascii_digit() {
        *i += 1;
    }
    if start == *i {
        return Err(PhotometryError::MalformedImage(format!("missing {what}")));
    }
    std::str::from_utf8(&bytes[start..*i])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PhotometryError::MalformedImage(format!("bad {what}")))
}

/// Parses a binary PGM (P5) with maxval 255.
pub fn load_pgm(bytes: &[u8]) -> Result<GrayImage, PhotometryError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(PhotometryError::MalformedImage("bad magic, expected P5".into()));
    }
    let mut i = 2;
    let width = header_int(bytes, &mut i, "width")?;
    let height = header_int(bytes, &mut i, "height")?;
    let maxval = header_int(bytes, &mut i, "maxval")?;
    if width == 0 || height == 0 {
        return Err(PhotometryError::MalformedImage(format!(
            "dimensions must be positive, got {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(PhotometryError::MalformedImage(format!("maxval {maxval}, expected 255")));
    }
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(PhotometryError::MalformedImage("missing separator before raster".into()));
    }
    i += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| PhotometryError::MalformedImage("dimensions overflow".into()))?;
    let raster = &bytes[i..];
    if raster.len() < n {
        return Err(PhotometryError::MalformedImage(format!(
            "truncated raster: {} of {n} bytes",
            raster.len()
        )));
    }
    GrayImage::new(width, height, raster[..n].to_vec())
}

pub fn save_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}
