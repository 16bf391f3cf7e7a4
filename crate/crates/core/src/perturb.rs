//! Distribution shifts applied to evaluation data: Gaussian noise, elastic
//! warping and an l-infinity PGD attack.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::nn::{input_gradient, ClassifierModel};
use crate::rng;
use crate::tensor::Matrix;

/// Edge length at which elastic parameters are expressed.
pub const ELASTIC_REFERENCE_EDGE: f64 = 224.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionKind {
    Gaussian {
        sigma: f64,
    },
    Elastic {
        intensity: f64,
        smoothing: f64,
        offset: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    #[serde(flatten)]
    pub kind: CorruptionKind,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: CorruptionKind::Gaussian { sigma },
            seed,
        }
    }

    pub fn elastic(intensity: f64, smoothing: f64, offset: f64, seed: u64) -> Self {
        Self {
            kind: CorruptionKind::Elastic {
                intensity,
                smoothing,
                offset,
            },
            seed,
        }
    }

    pub fn gn1(seed: u64) -> Self {
        Self::gaussian(0.08, seed)
    }

    pub fn gn2(seed: u64) -> Self {
        Self::gaussian(0.2, seed)
    }

    pub fn et1(seed: u64) -> Self {
        Self::elastic(488.0, 170.8, 24.4, seed)
    }

    pub fn et2(seed: u64) -> Self {
        Self::elastic(488.0, 19.52, 48.8, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            CorruptionKind::Gaussian { sigma } => sigma >= 0.0,
            CorruptionKind::Elastic {
                intensity,
                smoothing,
                offset,
            } => intensity >= 0.0 && smoothing >= 0.0 && offset >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "negative corruption parameter in {self:?}"
            )))
        }
    }

    pub fn apply(&self, x: &Matrix, image_shape: Option<ImageShape>) -> Result<Matrix> {
        match self.kind {
            CorruptionKind::Gaussian { .. } => gaussian_corrupt(x, self, image_shape),
            CorruptionKind::Elastic { .. } => {
                let shape = image_shape
                    .ok_or_else(|| Error::input("elastic transform needs image-shaped data"))?;
                elastic_transform(x, shape, self)
            }
        }
    }
}

/// `x + N(0, sigma^2)` per entry, clipped to `[0, 1]` for image data.
pub fn gaussian_corrupt(
    x: &Matrix,
    spec: &CorruptionSpec,
    image_shape: Option<ImageShape>,
) -> Result<Matrix> {
    spec.validate()?;
    let CorruptionKind::Gaussian { sigma } = spec.kind else {
        return Err(Error::config("expected a Gaussian corruption spec"));
    };
    let key = rng::derive_seed(spec.seed, "gaussian");
    let mut out = x.clone();
    for r in 0..out.rows() {
        let mut rng = rng::row_rng(key, r);
        for v in out.row_mut(r) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
            if image_shape.is_some() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Scale from reference-edge pixels to this image's pixels.
pub fn elastic_scale(shape: ImageShape) -> f64 {
    shape.height.max(shape.width) as f64 / ELASTIC_REFERENCE_EDGE
}

/// Normalized 1-D Gaussian taps truncated at four standard deviations.
fn gaussian_kernel(std: f64) -> Vec<f64> {
    let radius = (4.0 * std).ceil() as usize;
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let t = i as f64 - radius as f64;
            (-t * t / (2.0 * std * std)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur of an `h x w` field with edge clamping.
fn smooth(field: &[f64], h: usize, w: usize, std: f64) -> Vec<f64> {
    if std <= 0.0 {
        return field.to_vec();
    }
    let k = gaussian_kernel(std);
    let radius = (k.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, t)| t * field[y * w + clampi(x as isize + i as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp[clampi(y as isize + i as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

/// Per-pixel displacement `(dx, dy)` used for row `row` of an elastic
/// transform. Exposed so callers can inspect the warp field.
pub fn elastic_displacement(
    shape: ImageShape,
    spec: &CorruptionSpec,
    row: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    let CorruptionKind::Elastic {
        intensity,
        smoothing,
        offset,
    } = spec.kind
    else {
        return Err(Error::config("expected an elastic corruption spec"));
    };
    let (h, w) = (shape.height, shape.width);
    let s = elastic_scale(shape);
    let amplitude = intensity * s * s;
    let jitter = offset * s;
    let mut rng = rng::row_rng(rng::derive_seed(spec.seed, "elastic"), row);

    let mut raw_x = vec![0.0; h * w];
    let mut raw_y = vec![0.0; h * w];
    for i in 0..h * w {
        raw_x[i] = rng.random_range(-1.0..1.0);
        raw_y[i] = rng.random_range(-1.0..1.0);
    }
    let field_x = smooth(&raw_x, h, w, smoothing * s);
    let field_y = smooth(&raw_y, h, w, smoothing * s);

    // corner order: top-left, top-right, bottom-left, bottom-right
    let mut corners = [(0.0f64, 0.0f64); 4];
    if jitter > 0.0 {
        for c in &mut corners {
            *c = (
                rng.random_range(-jitter..jitter),
                rng.random_range(-jitter..jitter),
            );
        }
    }
    let mut dx = vec![0.0; h * w];
    let mut dy = vec![0.0; h * w];
    for y in 0..h {
        let v = if h > 1 {
            y as f64 / (h - 1) as f64
        } else {
            0.0
        };
        for x in 0..w {
            let u = if w > 1 {
                x as f64 / (w - 1) as f64
            } else {
                0.0
            };
            let wts = [(1.0 - u) * (1.0 - v), u * (1.0 - v), (1.0 - u) * v, u * v];
            let (mut jx, mut jy) = (0.0, 0.0);
            for (c, wt) in corners.iter().zip(wts) {
                jx += wt * c.0;
                jy += wt * c.1;
            }
            let i = y * w + x;
            dx[i] = amplitude * field_x[i] + jx;
            dy[i] = amplitude * field_y[i] + jy;
        }
    }
    Ok((dx, dy))
}

fn sample_bilinear(img: &[f64], shape: ImageShape, px: f64, py: f64, c: usize) -> f64 {
    let (h, w, ch) = (shape.height, shape.width, shape.channels);
    let px = px.clamp(0.0, (w - 1) as f64);
    let py = py.clamp(0.0, (h - 1) as f64);
    let x0 = px.floor() as usize;
    let y0 = py.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = px - x0 as f64;
    let fy = py - y0 as f64;
    let at = |y: usize, x: usize| img[(y * w + x) * ch + c];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Smoothed random warp plus corner jitter, resampled bilinearly with edge
/// clamping. Parameters are in reference-edge pixels and rescaled by
/// `edge / 224` (intensity by its square).
pub fn elastic_transform(x: &Matrix, shape: ImageShape, spec: &CorruptionSpec) -> Result<Matrix> {
    if shape.len() != x.cols() {
        return Err(Error::shape(format!(
            "image shape {shape:?} does not match {} features",
            x.cols()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let (dx, dy) = elastic_displacement(shape, spec, r)?;
        let img = x.row(r);
        let dst = out.row_mut(r);
        for y in 0..shape.height {
            for xx in 0..shape.width {
                let i = y * shape.width + xx;
                for c in 0..shape.channels {
                    dst[i * shape.channels + c] =
                        sample_bilinear(img, shape, xx as f64 + dx[i], y as f64 + dy[i], c);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    pub epsilon: f64,
    pub steps: usize,
    /// Defaults to `2.5 * epsilon / steps` when absent.
    pub step_size: Option<f64>,
    pub random_start: bool,
    pub seed: u64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            epsilon: 8.0 / 255.0,
            steps: 7,
            step_size: None,
            random_start: false,
            seed: 0,
        }
    }
}

impl PgdConfig {
    pub fn alpha(&self) -> f64 {
        self.step_size
            .unwrap_or(2.5 * self.epsilon / self.steps.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::config("PGD radius must be nonnegative"));
        }
        if self.steps == 0 {
            return Err(Error::config("PGD needs at least one step"));
        }
        if let Some(a) = self.step_size {
            if !(a > 0.0) {
                return Err(Error::config("PGD step size must be positive"));
            }
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sign-gradient ascent on cross-entropy, projected onto the l-infinity
/// ball of radius `epsilon` around `x`.
///
/// `offset` is added to every row before the model sees it (a forget vector
/// under evaluation); the returned matrix excludes it. Image data is kept in
/// `[0, 1]`.
pub fn pgd_attack(
    model: &ClassifierModel,
    x: &Matrix,
    labels: &[usize],
    cfg: &PgdConfig,
    image: bool,
    offset: Option<&[f64]>,
) -> Result<Matrix> {
    cfg.validate()?;
    if x.rows() == 0 {
        return Ok(x.clone());
    }
    let eps = cfg.epsilon;
    let alpha = cfg.alpha();
    let project = |adv: &mut Matrix| {
        for (a, o) in adv.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *a = a.clamp(o - eps, o + eps);
            if image {
                *a = a.clamp(0.0, 1.0);
            }
        }
    };
    let mut adv = x.clone();
    if cfg.random_start && eps > 0.0 {
        let key = rng::derive_seed(cfg.seed, "pgd-start");
        for r in 0..adv.rows() {
            let mut rng = rng::row_rng(key, r);
            for v in adv.row_mut(r) {
                *v += rng.random_range(-eps..eps);
            }
        }
        project(&mut adv);
    }
    for _ in 0..cfg.steps {
        let seen = match offset {
            Some(d) => adv.add_row_vector(d)?,
            None => adv.clone(),
        };
        let (_, grad) = input_gradient(model, &seen, labels, &LossSpec::CrossEntropy)?;
        for (a, g) in adv.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *a += alpha * sign(*g);
        }
        project(&mut adv);
    }
    Ok(adv)
}

/// One entry of a distribution-shift suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Perturbation {
    Benign,
    Corruption(CorruptionSpec),
    Pgd(PgdConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub perturbation: Perturbation,
}

impl SuiteEntry {
    pub fn new(name: &str, perturbation: Perturbation) -> Self {
        Self {
            name: name.to_string(),
            perturbation,
        }
    }
}

/// Benign, GN1, GN2, ET1, ET2 and 7-step PGD at 8/255.
pub fn standard_suite(seed: u64) -> Vec<SuiteEntry> {
    vec![
        SuiteEntry::new("Benign", Perturbation::Benign),
        SuiteEntry::new("GN1", Perturbation::Corruption(CorruptionSpec::gn1(seed))),
        SuiteEntry::new("GN2", Perturbation::Corruption(CorruptionSpec::gn2(seed))),
        SuiteEntry::new("ET1", Perturbation::Corruption(CorruptionSpec::et1(seed))),
        SuiteEntry::new("ET2", Perturbation::Corruption(CorruptionSpec::et2(seed))),
        SuiteEntry::new(
            "PGD",
            Perturbation::Pgd(PgdConfig {
                seed,
                ..PgdConfig::default()
            }),
        ),
    ]
}
