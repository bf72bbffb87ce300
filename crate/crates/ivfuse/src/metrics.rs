//! Fusion-quality metrics: entropy, mutual information, standard deviation,
//! spatial frequency, visual information fidelity, average gradient.
//!
//! Histogram metrics (EN, MI) run on 8-bit quantized pixels; the rest run on
//! float images scaled to [0,255]. Logarithms are base 2 throughout.

use crate::error::{Error, Result};
use crate::image::FloatImage;

/// Shannon entropy (base 2) of the 256-bin histogram.
pub fn entropy(pixels: &[u8]) -> f64 {
    assert!(!pixels.is_empty(), "entropy of an empty image");
    let mut hist = [0u64; 256];
    for &p in pixels {
        hist[p as usize] += 1;
    }
    let total = pixels.len() as f64;
    let mut h = 0.0;
    for &count in &hist {
        if count > 0 {
            let p = count as f64 / total;
            h -= p * p.log2();
        }
    }
    h
}

/// I(x;y) in bits from the 256×256 joint histogram.
fn mi_pair(x: &[u8], y: &[u8]) -> f64 {
    let mut joint = vec![0u64; 256 * 256];
    let mut hx = [0u64; 256];
    let mut hy = [0u64; 256];
    for (&a, &b) in x.iter().zip(y) {
        joint[a as usize * 256 + b as usize] += 1;
        hx[a as usize] += 1;
        hy[b as usize] += 1;
    }
    let total = x.len() as f64;
    let mut mi = 0.0;
    for a in 0..256 {
        if hx[a] == 0 {
            continue;
        }
        let px = hx[a] as f64 / total;
        for b in 0..256 {
            let c = joint[a * 256 + b];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / total;
            let py = hy[b] as f64 / total;
            mi += pxy * (pxy / (px * py)).log2();
        }
    }
    mi
}

/// MI = I(a;fused) + I(b;fused).
pub fn mutual_information(a: &[u8], b: &[u8], fused: &[u8]) -> Result<f64> {
    if a.len() != fused.len() || b.len() != fused.len() || fused.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "mutual information needs equally sized nonempty images, got {}, {}, {}",
            a.len(),
            b.len(),
            fused.len()
        )));
    }
    Ok(mi_pair(a, fused) + mi_pair(b, fused))
}

fn check_min_2x2(img: &FloatImage, what: &str) -> Result<()> {
    if img.h() < 2 || img.w() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{what} needs at least a 2x2 image, got {}x{}",
            img.h(), img.w()
        )));
    }
    Ok(())
}

/// Population standard deviation of the pixels.
pub fn standard_deviation(img: &FloatImage) -> Result<f64> {
    check_min_2x2(img, "standard deviation")?;
    let n = img.data().len() as f64;
    let mean = img.data().iter().sum::<f64>() / n;
    let var = img.data().iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// sqrt(RF² + CF²): RMS of horizontal and vertical forward differences.
pub fn spatial_frequency(img: &FloatImage) -> Result<f64> {
    check_min_2x2(img, "spatial frequency")?;
    let (h, w) = (img.h(), img.w());
    let d = &img.data();
    let mut row_sq = 0.0;
    for y in 0..h {
        for x in 0..w - 1 {
            let e = d[y * w + x + 1] - d[y * w + x];
            row_sq += e * e;
        }
    }
    let mut col_sq = 0.0;
    for y in 0..h - 1 {
        for x in 0..w {
            let e = d[(y + 1) * w + x] - d[y * w + x];
            col_sq += e * e;
        }
    }
    let rf2 = row_sq / (h * (w - 1)) as f64;
    let cf2 = col_sq / ((h - 1) * w) as f64;
    Ok((rf2 + cf2).sqrt())
}

/// Mean over the interior of sqrt((dx² + dy²)/2), forward differences.
pub fn average_gradient(img: &FloatImage) -> Result<f64> {
    check_min_2x2(img, "average gradient")?;
    let (h, w) = (img.h(), img.w());
    let d = &img.data();
    let mut sum = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let dx = d[y * w + x + 1] - d[y * w + x];
            let dy = d[(y + 1) * w + x] - d[y * w + x];
            sum += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    Ok(sum / ((h - 1) * (w - 1)) as f64)
}

/// Smallest image VIF accepts (four dyadic scales need room).
pub const VIF_MIN_SIZE: usize = 32;
const VIF_NOISE_VARIANCE: f64 = 2.0;

fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mirror-with-edge-repeat index mapping for out-of-range positions.
fn symmetric_index(mut i: i64, len: usize) -> usize {
    let n = len as i64;
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Same-size separable filtering with symmetric boundary handling.
fn filter_same(img: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                let xx = symmetric_index(x as i64 + t as i64 - r, w);
                acc += k * img[y * w + xx];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                let yy = symmetric_index(y as i64 + t as i64 - r, h);
                acc += k * rows[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn subsample2(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let nh = h.div_ceil(2);
    let nw = w.div_ceil(2);
    let mut out = Vec::with_capacity(nh * nw);
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            out.push(img[y * w + x]);
        }
    }
    (out, nh, nw)
}

/// Pixel-domain visual information fidelity of `distorted` against
/// `reference`, over four dyadic scales. 1.0 means perfect fidelity; a
/// pair of constant images (no information in the reference) scores 1.0.
pub fn vif(reference: &FloatImage, distorted: &FloatImage) -> Result<f64> {
    if reference.h() != distorted.h() || reference.w() != distorted.w() {
        return Err(Error::ShapeMismatch {
            context: "vif",
            lhs: format!("{}x{}", reference.h(), reference.w()),
            rhs: format!("{}x{}", distorted.h(), distorted.w()),
        });
    }
    if reference.h() < VIF_MIN_SIZE || reference.w() < VIF_MIN_SIZE {
        return Err(Error::InvalidArgument(format!(
            "vif needs images of at least {VIF_MIN_SIZE}x{VIF_MIN_SIZE}, got {}x{}",
            reference.h(), reference.w()
        )));
    }
    let mut r = reference.data().to_vec();
    let mut d = distorted.data().to_vec();
    let (mut h, mut w) = (reference.h(), reference.w());
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for scale in 1..=4u32 {
        let half = (2.0f64).powi(4 - scale as i32 + 1); // 16, 8, 4, 2
        let size = 2 * half as usize + 1;
        let kernel = gaussian_kernel_1d(size, half / 5.0);
        if scale > 1 {
            let rs = filter_same(&r, h, w, &kernel);
            let ds = filter_same(&d, h, w, &kernel);
            let (rr, nh, nw) = subsample2(&rs, h, w);
            let (dd, _, _) = subsample2(&ds, h, w);
            r = rr;
            d = dd;
            h = nh;
            w = nw;
        }
        let mu1 = filter_same(&r, h, w, &kernel);
        let mu2 = filter_same(&d, h, w, &kernel);
        let r2: Vec<f64> = r.iter().map(|v| v * v).collect();
        let d2: Vec<f64> = d.iter().map(|v| v * v).collect();
        let rd: Vec<f64> = r.iter().zip(&d).map(|(a, b)| a * b).collect();
        let m11 = filter_same(&r2, h, w, &kernel);
        let m22 = filter_same(&d2, h, w, &kernel);
        let m12 = filter_same(&rd, h, w, &kernel);
        for k in 0..h * w {
            let mut sigma1 = (m11[k] - mu1[k] * mu1[k]).max(0.0);
            let sigma2 = (m22[k] - mu2[k] * mu2[k]).max(0.0);
            let sigma12 = m12[k] - mu1[k] * mu2[k];
            let mut g = sigma12 / (sigma1 + 1e-10);
            let mut sv = sigma2 - g * sigma12;
            if sigma1 < 1e-10 {
                g = 0.0;
                sv = sigma2;
                sigma1 = 0.0;
            }
            if sigma2 < 1e-10 {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = sigma2;
                g = 0.0;
            }
            if sv < 1e-10 {
                sv = 1e-10;
            }
            num += (1.0 + g * g * sigma1 / (sv + VIF_NOISE_VARIANCE)).log2();
            den += (1.0 + sigma1 / VIF_NOISE_VARIANCE).log2();
        }
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(num / den)
}

/// All six metrics for one (ir, vis, fused) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Identifier of the scored triple (e.g. the image filename).
    pub name: String,
    pub en: f64,
    pub mi: f64,
    pub sd: f64,
    pub sf: f64,
    pub vif: f64,
    pub ag: f64,
}

impl MetricsReport {
    pub fn values(&self) -> [f64; 6] {
        [self.en, self.mi, self.sd, self.sf, self.vif, self.ag]
    }
}

/// Metric names in report order.
pub const METRIC_NAMES: [&str; 6] = ["EN", "MI", "SD", "SF", "VIF", "AG"];

/// Score one fused image against its two sources. EN and MI run on 8-bit
/// quantized pixels; VIF is the mean of the fused image's fidelity to each
/// source.
pub fn score_triple(
    ir: &FloatImage,
    vis: &FloatImage,
    fused: &FloatImage,
    name: &str,
) -> Result<MetricsReport> {
    if ir.h() != fused.h() || ir.w() != fused.w() || vis.h() != fused.h() || vis.w() != fused.w() {
        return Err(Error::ShapeMismatch {
            context: "score_triple",
            lhs: format!("{}x{} / {}x{}", ir.h(), ir.w(), vis.h(), vis.w()),
            rhs: format!("{}x{}", fused.h(), fused.w()),
        });
    }
    let qf = fused.quantize();
    let en = entropy(&qf);
    let mi = mutual_information(&ir.quantize(), &vis.quantize(), &qf)?;
    let sd = standard_deviation(fused)?;
    let sf = spatial_frequency(fused)?;
    let ag = average_gradient(fused)?;
    let v = (vif(ir, fused)? + vif(vis, fused)?) / 2.0;
    Ok(MetricsReport {
        name: name.to_string(),
        en,
        mi,
        sd,
        sf,
        vif: v,
        ag,
    })
}

/// Per-metric mean and population standard deviation over a report set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub count: usize,
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

pub fn summarize(reports: &[MetricsReport]) -> Result<MetricsSummary> {
    if reports.is_empty() {
        return Err(Error::Data("no metric reports to summarize".into()));
    }
    let n = reports.len() as f64;
    let mut mean = [0.0; 6];
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut std = [0.0; 6];
    for r in reports {
        for ((s, v), m) in std.iter_mut().zip(r.values()).zip(mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt();
    }
    Ok(MetricsSummary {
        count: reports.len(),
        mean,
        std,
    })
}

/// Header for the aggregate table (tab-separated).
pub fn table_header() -> String {
    let mut s = String::from("method");
    for name in METRIC_NAMES {
        s.push('\t');
        s.push_str(name);
    }
    s
}

impl MetricsSummary {
    /// One table row: `label<TAB>mean±std…` with 3 decimals.
    pub fn table_row(&self, label: &str) -> String {
        let mut s = String::from(label);
        for i in 0..6 {
            s.push('\t');
            s.push_str(&format!("{:.3}±{:.3}", self.mean[i], self.std[i]));
        }
        s
    }
}

/// Per-image lines for the raw report file (tab-separated, 6 decimals).
pub fn raw_report(reports: &[MetricsReport]) -> String {
    let mut out = String::from("name\tEN\tMI\tSD\tSF\tVIF\tAG\n");
    for r in reports {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            r.name, r.en, r.mi, r.sd, r.sf, r.vif, r.ag
        ));
    }
    out
}
