//! Handcrafted style features over small raster images, the spatial
//! augmentations used to make SSL view pairs, and the Gram-matrix texture
//! descriptor.
//!
//! The feature vector has [`FEATURE_DIM`] entries laid out as
//!
//! | range      | content                                                   |
//! | ---------- | --------------------------------------------------------- |
//! | `0..64`    | 4×4×4 RGB histogram, L1-normalized                        |
//! | `64..80`   | 16-bin unsigned gradient-orientation histogram, L1-normalized |
//! | `80..116`  | upper triangle (row-major, with diagonal) of the 8×8 Gram matrix of [`FILTER_BANK`] responses |

pub mod synthetic;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::normalize;

pub const COLOR_BINS_PER_CHANNEL: usize = 4;
pub const COLOR_DIM: usize =
    COLOR_BINS_PER_CHANNEL * COLOR_BINS_PER_CHANNEL * COLOR_BINS_PER_CHANNEL;
pub const ORIENTATION_BINS: usize = 16;
pub const FILTER_COUNT: usize = 8;
pub const GRAM_DIM: usize = FILTER_COUNT * (FILTER_COUNT + 1) / 2;
pub const FEATURE_DIM: usize = COLOR_DIM + ORIENTATION_BINS + GRAM_DIM;
pub const MIN_FEATURE_SIDE: usize = 8;

pub const MIN_RESIZE_SCALE: f64 = 0.5;
pub const MAX_RESIZE_SCALE: f64 = 1.0;

/// Oriented derivative kernels `(cos θ·Sx + sin θ·Sy) / 4` for
/// θ = k·22.5°, k = 0..8, where Sx/Sy are the Sobel kernels. Rows are
/// top to bottom, so a positive response means intensity increasing along θ
/// with y pointing down.
pub const FILTER_BANK: [[[f64; 3]; 3]; FILTER_COUNT] = [
    // 0°
    [[-0.25, 0.0, 0.25], [-0.5, 0.0, 0.5], [-0.25, 0.0, 0.25]],
    // 22.5°
    [
        [
            -0.32664074121909414,
            -0.1913417161825449,
            0.13529902503654923,
        ],
        [-0.46193976625564337, 0.0, 0.46193976625564337],
        [
            -0.13529902503654923,
            0.1913417161825449,
            0.32664074121909414,
        ],
    ],
    // 45°
    [
        [-0.35355339059327373, -0.35355339059327373, 0.0],
        [-0.35355339059327373, 0.0, 0.35355339059327373],
        [0.0, 0.35355339059327373, 0.35355339059327373],
    ],
    // 67.5°
    [
        [
            -0.32664074121909414,
            -0.46193976625564337,
            -0.13529902503654923,
        ],
        [-0.1913417161825449, 0.0, 0.1913417161825449],
        [
            0.13529902503654923,
            0.46193976625564337,
            0.32664074121909414,
        ],
    ],
    // 90°
    [[-0.25, -0.5, -0.25], [0.0, 0.0, 0.0], [0.25, 0.5, 0.25]],
    // 112.5°
    [
        [
            -0.13529902503654923,
            -0.46193976625564337,
            -0.32664074121909414,
        ],
        [0.1913417161825449, 0.0, -0.1913417161825449],
        [
            0.32664074121909414,
            0.46193976625564337,
            0.13529902503654923,
        ],
    ],
    // 135°
    [
        [0.0, -0.35355339059327373, -0.35355339059327373],
        [0.35355339059327373, 0.0, -0.35355339059327373],
        [0.35355339059327373, 0.35355339059327373, 0.0],
    ],
    // 157.5°
    [
        [
            0.13529902503654923,
            -0.1913417161825449,
            -0.32664074121909414,
        ],
        [0.46193976625564337, 0.0, -0.46193976625564337],
        [
            0.32664074121909414,
            0.1913417161825449,
            -0.13529902503654923,
        ],
    ],
];

pub type Rgb = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::validation(format!(
                "{} pixels for a {width}×{height} image",
                pixels.len()
            )));
        }
        if pixels.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::validation("pixel channel outside [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Result<Self> {
        Self::new(width, height, vec![color; width * height])
    }

    /// Builds an image from 8-bit RGB rows.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::validation(
                "RGB buffer length does not match dimensions",
            ));
        }
        let pixels = bytes
            .chunks_exact(3)
            .map(|c| {
                [
                    c[0] as f64 / 255.0,
                    c[1] as f64 / 255.0,
                    c[2] as f64 / 255.0,
                ]
            })
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8))
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    fn luminance(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect()
    }
}

/// Style-preserving spatial augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentationSpec {
    HorizontalFlip,
    VerticalFlip,
    /// Clockwise rotation by `k` quarter turns, `k ∈ {1, 2, 3}`.
    Rotate90 {
        k: u8,
    },
    /// Area-average downscale by `scale ∈ [0.5, 1.0]`, then nearest-neighbour
    /// upscale back to the original size.
    Resize {
        scale: f64,
    },
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentationSpec::Rotate90 { k } if !(1..=3).contains(&k) => Err(Error::validation(
                format!("rotation k = {k} not in {{1, 2, 3}}"),
            )),
            AugmentationSpec::Resize { scale }
                if !(MIN_RESIZE_SCALE..=MAX_RESIZE_SCALE).contains(&scale) =>
            {
                Err(Error::validation(format!(
                    "resize scale {scale} outside [{MIN_RESIZE_SCALE}, {MAX_RESIZE_SCALE}]"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Draws one augmentation uniformly over the four kinds, then its
    /// parameter uniformly.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        match rng.gen_range(0..4) {
            0 => AugmentationSpec::HorizontalFlip,
            1 => AugmentationSpec::VerticalFlip,
            2 => AugmentationSpec::Rotate90 {
                k: rng.gen_range(1..=3),
            },
            _ => AugmentationSpec::Resize {
                scale: rng.gen_range(MIN_RESIZE_SCALE..=MAX_RESIZE_SCALE),
            },
        }
    }
}

pub fn augment(img: &RasterImage, spec: &AugmentationSpec) -> Result<RasterImage> {
    spec.validate()?;
    let (w, h) = (img.width, img.height);
    Ok(match *spec {
        AugmentationSpec::HorizontalFlip => {
            RasterImage::from_fn(w, h, |x, y| img.pixel(w - 1 - x, y))
        }
        AugmentationSpec::VerticalFlip => {
            RasterImage::from_fn(w, h, |x, y| img.pixel(x, h - 1 - y))
        }
        AugmentationSpec::Rotate90 { k } => {
            let mut out = img.clone();
            for _ in 0..k {
                out = rotate_clockwise(&out);
            }
            out
        }
        AugmentationSpec::Resize { scale } => resize_round_trip(img, scale),
    })
}

fn rotate_clockwise(img: &RasterImage) -> RasterImage {
    let (w, h) = (img.width, img.height);
    // Output is h wide and w tall; output (x, y) comes from input (y, h-1-x).
    RasterImage::from_fn(h, w, |x, y| img.pixel(y, h - 1 - x))
}

/// For each destination cell, the overlapping source cells and their
/// overlap lengths when `src` cells are squeezed into `dst` cells.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let lo = d as f64 * ratio;
            let hi = ((d + 1) as f64 * ratio).min(src as f64);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap))
                })
                .collect()
        })
        .collect()
}

fn resize_round_trip(img: &RasterImage, scale: f64) -> RasterImage {
    let (w, h) = (img.width, img.height);
    let small_w = ((w as f64 * scale).round() as usize).clamp(1, w);
    let small_h = ((h as f64 * scale).round() as usize).clamp(1, h);
    if small_w == w && small_h == h {
        return img.clone();
    }
    let wx = area_weights(w, small_w);
    let wy = area_weights(h, small_h);
    let small = RasterImage::from_fn(small_w, small_h, |x, y| {
        let mut acc = [0.0; 3];
        let mut total = 0.0;
        for &(sy, ay) in &wy[y] {
            for &(sx, ax) in &wx[x] {
                let weight = ax * ay;
                let p = img.pixel(sx, sy);
                for c in 0..3 {
                    acc[c] += weight * p[c];
                }
                total += weight;
            }
        }
        acc.map(|v| (v / total).clamp(0.0, 1.0))
    });
    RasterImage::from_fn(w, h, |x, y| small.pixel(x * small_w / w, y * small_h / h))
}

/// Two independently drawn augmentations of `img`, reproducible from `seed`.
pub fn sample_view_pair(img: &RasterImage, seed: u64) -> (RasterImage, RasterImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = AugmentationSpec::sample(&mut rng);
    let second = AugmentationSpec::sample(&mut rng);
    (
        augment(img, &first).expect("sampled spec is valid"),
        augment(img, &second).expect("sampled spec is valid"),
    )
}

/// `G[p][q] = (1/M) Σ_m F_p[m]·F_q[m]` over `C` maps of `M` elements.
pub fn gram_matrix(feature_maps: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let first = feature_maps
        .first()
        .ok_or_else(|| Error::validation("gram matrix needs at least one channel"))?;
    let m = first.len();
    if m == 0 {
        return Err(Error::validation("feature maps must be nonempty"));
    }
    if let Some((i, bad)) = feature_maps.iter().enumerate().find(|(_, f)| f.len() != m) {
        return Err(Error::validation(format!(
            "feature map {i} has {} elements, expected {m}",
            bad.len()
        )));
    }
    let c = feature_maps.len();
    let mut g = vec![vec![0.0; c]; c];
    for p in 0..c {
        for q in p..c {
            let s: f64 = feature_maps[p]
                .iter()
                .zip(&feature_maps[q])
                .map(|(a, b)| a * b)
                .sum();
            g[p][q] = s / m as f64;
            g[q][p] = g[p][q];
        }
    }
    Ok(g)
}

/// Responses of a 3×3 kernel over the interior of a `w`×`h` map.
fn convolve_interior(values: &[f64], w: usize, h: usize, kernel: &[[f64; 3]; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = 0.0;
            for (ky, row) in kernel.iter().enumerate() {
                for (kx, &k) in row.iter().enumerate() {
                    acc += k * values[(y + ky - 1) * w + (x + kx - 1)];
                }
            }
            out.push(acc);
        }
    }
    out
}

fn color_bin(c: f64) -> usize {
    ((c * COLOR_BINS_PER_CHANNEL as f64) as usize).min(COLOR_BINS_PER_CHANNEL - 1)
}

pub fn color_histogram(img: &RasterImage) -> Vec<f64> {
    let mut hist = vec![0.0; COLOR_DIM];
    for &[r, g, b] in img.pixels() {
        let bin = (color_bin(r) * COLOR_BINS_PER_CHANNEL + color_bin(g)) * COLOR_BINS_PER_CHANNEL
            + color_bin(b);
        hist[bin] += 1.0;
    }
    let n = img.pixels().len() as f64;
    hist.iter_mut().for_each(|v| *v /= n);
    hist
}

pub fn extract_features(img: &RasterImage) -> Result<Vec<f64>> {
    let (w, h) = (img.width, img.height);
    if w < MIN_FEATURE_SIDE || h < MIN_FEATURE_SIDE {
        return Err(Error::validation(format!(
            "image {w}×{h} is smaller than {MIN_FEATURE_SIDE}×{MIN_FEATURE_SIDE}"
        )));
    }
    let mut features = color_histogram(img);

    let luma = img.luminance();
    let responses: Vec<Vec<f64>> = FILTER_BANK
        .iter()
        .map(|k| convolve_interior(&luma, w, h, k))
        .collect();

    // Bank entries 0 and 4 are the horizontal and vertical Sobel kernels.
    let mut orientation = vec![0.0; ORIENTATION_BINS];
    for (&gx, &gy) in responses[0].iter().zip(&responses[4]) {
        let magnitude = gx.hypot(gy);
        if magnitude > 0.0 {
            let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
            let bin = ((theta / std::f64::consts::PI * ORIENTATION_BINS as f64) as usize)
                .min(ORIENTATION_BINS - 1);
            orientation[bin] += magnitude;
        }
    }
    let total: f64 = orientation.iter().sum();
    if total > 0.0 {
        orientation.iter_mut().for_each(|v| *v /= total);
    } else {
        orientation.fill(1.0 / ORIENTATION_BINS as f64);
    }
    features.extend(orientation);

    let gram = gram_matrix(&responses)?;
    for p in 0..FILTER_COUNT {
        features.extend_from_slice(&gram[p][p..]);
    }
    debug_assert_eq!(features.len(), FEATURE_DIM);
    Ok(features)
}

/// Unit-norm [`extract_features`] vector, the form stored in embedding files
/// and fed to the projection head.
pub fn descriptor(img: &RasterImage) -> Result<Vec<f64>> {
    normalize(&extract_features(img)?)
}
