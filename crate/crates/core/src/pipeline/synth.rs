//! Procedural street panorama with day and night renderings.
//!
//! A camera slides along a straight street; its view is a window of a wide
//! panorama offset by position and heading. Night views re-light the same
//! scene: facades and sky go dark, some windows light up, street lamps glow,
//! and each view gets random headlight glare and sensor noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{ingest, DatasetManifest, Split, POSE_FILE};
use crate::error::{Error, Result};
use crate::geoeval::{write_pose_csv, Pose, PoseTable};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub n_ref: usize,
    pub n_query: usize,
    pub n_train: usize,
    /// Square view size in pixels.
    pub size: usize,
    pub px_per_meter: f64,
    pub ref_spacing: f64,
    /// Horizontal view shift per degree of heading.
    pub px_per_degree: f64,
    pub max_heading: f64,
    pub noise_sigma: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            n_ref: 200,
            n_query: 60,
            n_train: 100,
            size: 96,
            px_per_meter: 4.0,
            ref_spacing: 1.0,
            px_per_degree: 1.6,
            max_heading: 4.0,
            noise_sigma: 0.005,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Material {
    Sky,
    Facade,
    Window { lit: bool },
    Sidewalk,
    Road,
    Marking,
    Pole,
    Tree,
}

struct World {
    width: usize,
    height: usize,
    material: Vec<Material>,
    /// Base day color per pixel.
    base: Vec<[f64; 3]>,
    /// Lamp heads as (x, y) world coordinates.
    lamps: Vec<(f64, f64)>,
}

const FACADES: [[f64; 3]; 5] = [
    [0.82, 0.76, 0.62],
    [0.62, 0.34, 0.26],
    [0.66, 0.66, 0.68],
    [0.74, 0.6, 0.44],
    [0.9, 0.88, 0.82],
];

impl World {
    fn generate(width: usize, height: usize, rng: &mut ChaCha8Rng) -> World {
        let n = width * height;
        let mut material = vec![Material::Sky; n];
        let mut base = vec![[0.0; 3]; n];
        let horizon = height * 3 / 4;
        let curb = horizon + height / 16;
        for y in 0..height {
            let t = y as f64 / horizon as f64;
            for x in 0..width {
                base[y * width + x] = [0.55 + 0.25 * t, 0.7 + 0.18 * t, 0.95 + 0.05 * t];
            }
        }

        let mut x = 0;
        while x < width {
            let w = rng.gen_range(height / 4..height * 2 / 3);
            let top = rng.gen_range(height / 12..height * 5 / 12);
            let color = FACADES[rng.gen_range(0..FACADES.len())];
            let shade: f64 = rng.gen_range(0.85..1.1);
            let (sx, sy) = (rng.gen_range(7..12), rng.gen_range(7..12));
            let (ww, wh) = (rng.gen_range(3..sx - 2), rng.gen_range(3..sy - 2));
            for yy in top..horizon {
                for xx in x..(x + w).min(width) {
                    let i = yy * width + xx;
                    let (lx, ly) = (xx - x, yy - top);
                    let in_window = lx >= 3
                        && lx + 3 < w
                        && ly >= 3
                        && yy + 4 < horizon
                        && lx % sx < ww
                        && ly % sy < wh;
                    if in_window {
                        let key = (xx - lx % sx, yy - ly % sy);
                        material[i] = Material::Window {
                            lit: hash01(key.0, key.1) < 0.6,
                        };
                        base[i] = [0.16, 0.2, 0.3];
                    } else {
                        material[i] = Material::Facade;
                        let grain = 0.06 * (hash01(xx, yy) - 0.5);
                        base[i] = color.map(|c| (c * shade + grain).clamp(0.0, 1.0));
                    }
                }
            }
            x += w + rng.gen_range(0..height / 8);
        }

        let mut lamps = Vec::new();
        let mut px = rng.gen_range(10..40);
        while px < width {
            let top = horizon - height / 3;
            for yy in top..curb {
                material[yy * width + px] = Material::Pole;
                base[yy * width + px] = [0.12, 0.12, 0.14];
            }
            lamps.push((px as f64, top as f64));
            px += rng.gen_range(height / 2..height);
        }

        let mut tx = rng.gen_range(0..30);
        while tx < width {
            let r = rng.gen_range(height / 14..height / 7) as isize;
            let cy = (horizon as isize) - r - rng.gen_range(0..height / 10) as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (cy + dy, tx as isize + dx);
                    if dx * dx + dy * dy <= r * r && xx >= 0 && (xx as usize) < width && yy >= 0 {
                        let i = yy as usize * width + xx as usize;
                        material[i] = Material::Tree;
                        let g = 0.3 + 0.25 * hash01(xx as usize, yy as usize);
                        base[i] = [0.2 * g, g, 0.25 * g];
                    }
                }
            }
            tx += rng.gen_range(height / 2..height * 2);
        }

        let lane = curb + (height - curb) / 2;
        for y in horizon..height {
            for x in 0..width {
                let i = y * width + x;
                if y < curb {
                    material[i] = Material::Sidewalk;
                    let seam = if x % 12 == 0 { -0.15 } else { 0.0 };
                    base[i] = [0.7 + seam, 0.7 + seam, 0.68 + seam];
                } else if y == lane || y == lane + 1 {
                    let dash = (x / 10) % 2 == 0;
                    material[i] = if dash { Material::Marking } else { Material::Road };
                    base[i] = if dash { [0.95; 3] } else { [0.3, 0.3, 0.32] };
                } else if material[i] != Material::Pole {
                    material[i] = Material::Road;
                    base[i] = [0.3, 0.3, 0.32];
                }
            }
        }
        World {
            width,
            height,
            material,
            base,
            lamps,
        }
    }

    fn night_color(&self, i: usize, y: usize) -> [f64; 3] {
        let c = self.base[i];
        match self.material[i] {
            Material::Sky => {
                let t = y as f64 / self.height as f64;
                [0.02 + 0.06 * t, 0.03 + 0.05 * t, 0.08 + 0.06 * t]
            }
            Material::Window { lit: true } => [1.0, 0.84, 0.46],
            Material::Window { lit: false } => [0.03, 0.03, 0.05],
            Material::Facade | Material::Sidewalk | Material::Road | Material::Tree => {
                let g = c.map(|v| 0.45 * v.powf(1.6));
                [g[0] * 0.8, g[1] * 0.9, g[2] * 1.25 + 0.01]
            }
            Material::Marking => [0.22, 0.22, 0.2],
            Material::Pole => [0.02, 0.02, 0.03],
        }
    }

    /// Full-panorama rendering in one lighting condition.
    fn render(&self, night: bool) -> Vec<[f64; 3]> {
        let mut out: Vec<[f64; 3]> = (0..self.material.len())
            .map(|i| {
                if night {
                    self.night_color(i, i / self.width)
                } else {
                    self.base[i]
                }
            })
            .collect();
        if night {
            for &(lx, ly) in &self.lamps {
                add_glow(&mut out, self.width, self.height, lx, ly, 9.0, [0.9, 0.6, 0.25]);
            }
        }
        out
    }
}

/// Deterministic pseudo-random value in `[0, 1)` per integer coordinate.
fn hash01(x: usize, y: usize) -> f64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 29;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn add_glow(buf: &mut [[f64; 3]], w: usize, h: usize, cx: f64, cy: f64, radius: f64, color: [f64; 3]) {
    let reach = (3.0 * radius) as isize;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let (x, y) = (cx as isize + dx, cy as isize + dy);
            if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
                continue;
            }
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            let a = (-d2 / (2.0 * radius * radius)).exp();
            let px = &mut buf[y as usize * w + x as usize];
            for c in 0..3 {
                px[c] += a * color[c];
            }
        }
    }
}

/// Bilinear sample of a `size x size` window starting at column `x0`.
fn view(buf: &[[f64; 3]], w: usize, size: usize, x0: f64) -> Vec<[f64; 3]> {
    let xi = x0.floor() as usize;
    let f = x0 - xi as f64;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let a = buf[y * w + xi + x];
            let b = buf[y * w + (xi + x + 1).min(w - 1)];
            out.push([0, 1, 2].map(|c| a[c] * (1.0 - f) + b[c] * f));
        }
    }
    out
}

fn to_image(px: Vec<[f64; 3]>, size: usize) -> Image {
    Image::new(
        size,
        size,
        3,
        px.into_iter().flat_map(|p| p.map(|v| v.clamp(0.0, 1.0))).collect(),
    )
    .expect("synthetic image")
}

/// One rendered view and its pose.
#[derive(Clone, Debug)]
pub struct SynthView {
    pub id: String,
    pub image: Image,
    pub pose: Pose,
}

#[derive(Clone, Debug)]
pub struct SynthSet {
    pub day: Vec<SynthView>,
    pub night_query: Vec<SynthView>,
    pub night_train: Vec<SynthView>,
    /// Day renderings at the query poses, without glare or noise.
    pub day_query: Vec<SynthView>,
}

/// Render every view in memory.
pub fn synth_views(params: &SynthParams) -> Result<SynthSet> {
    if params.n_ref == 0 || params.n_query == 0 || params.size < 16 {
        return Err(Error::invalid("synthetic dataset needs n_ref, n_query >= 1 and size >= 16"));
    }
    let track = params.ref_spacing * (params.n_ref - 1) as f64;
    let margin = params.max_heading * params.px_per_degree + 2.0;
    let width = (track * params.px_per_meter + 2.0 * margin) as usize + params.size + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let world = World::generate(width, params.size, &mut rng);
    let day = world.render(false);
    let night = world.render(true);
    let noise = Normal::new(0.0, params.noise_sigma.max(1e-12)).expect("valid sigma");

    let pose_of = |s: f64, heading: f64| Pose::from_yaw([s, 0.0, 0.0], heading.to_radians());
    let x0 = |s: f64, heading: f64| margin + s * params.px_per_meter + heading * params.px_per_degree;

    let mut refs = Vec::with_capacity(params.n_ref);
    for i in 0..params.n_ref {
        let s = i as f64 * params.ref_spacing;
        let heading = rng.gen_range(-0.5..=0.5) * params.max_heading * 0.5;
        let px = view(&day, width, params.size, x0(s, heading));
        refs.push(SynthView {
            id: format!("day_{i:04}"),
            image: to_image(px, params.size),
            pose: pose_of(s, heading),
        });
    }

    let night_view = |rng: &mut ChaCha8Rng, prefix: &str, i: usize| {
        let s = rng.gen_range(0.0..=track);
        let heading = rng.gen_range(-params.max_heading..=params.max_heading);
        let mut px = view(&night, width, params.size, x0(s, heading));
        let spots = rng.gen_range(0..=2);
        for _ in 0..spots {
            let cx = rng.gen_range(0.0..params.size as f64);
            let cy = rng.gen_range(params.size as f64 * 0.6..params.size as f64);
            let r = rng.gen_range(0.06..0.14) * params.size as f64;
            add_glow(&mut px, params.size, params.size, cx, cy, r, [1.0, 0.95, 0.8]);
        }
        for p in &mut px {
            for c in p.iter_mut() {
                *c += noise.sample(rng);
            }
        }
        SynthView {
            id: format!("{prefix}_{i:04}"),
            image: to_image(px, params.size),
            pose: pose_of(s, heading),
        }
    };
    let night_query: Vec<SynthView> = (0..params.n_query)
        .map(|i| night_view(&mut rng, "night", i))
        .collect();
    let day_query = night_query
        .iter()
        .map(|q| {
            let s = q.pose.t[0];
            let heading = (2.0 * q.pose.q[2].atan2(q.pose.q[0])).to_degrees();
            SynthView {
                id: q.id.clone(),
                image: to_image(view(&day, width, params.size, x0(s, heading)), params.size),
                pose: q.pose,
            }
        })
        .collect();
    let night_train = (0..params.n_train)
        .map(|i| night_view(&mut rng, "train", i))
        .collect();
    Ok(SynthSet {
        day: refs,
        night_query,
        night_train,
        day_query,
    })
}

/// Manifests of a dataset written by [`synth_dataset`].
#[derive(Clone, Debug)]
pub struct SynthManifests {
    pub day: DatasetManifest,
    pub night_query: DatasetManifest,
    pub night_train: DatasetManifest,
}

pub const DAY_DIR: &str = "day";
pub const QUERY_DIR: &str = "night_query";
pub const TRAIN_DIR: &str = "night_train";

/// Render and write `day/`, `night_query/` and `night_train/` under `out`,
/// with a pose table in each.
pub fn synth_dataset(params: &SynthParams, out: &Path) -> Result<SynthManifests> {
    let set = synth_views(params)?;
    let write = |name: &str, views: &[SynthView]| -> Result<()> {
        let dir = out.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut poses = PoseTable::new();
        for v in views {
            v.image.save(dir.join(format!("{}.png", v.id)))?;
            poses.insert(v.id.clone(), v.pose);
        }
        write_pose_csv(&dir.join(POSE_FILE), &poses)
    };
    write(DAY_DIR, &set.day)?;
    write(QUERY_DIR, &set.night_query)?;
    write(TRAIN_DIR, &set.night_train)?;
    Ok(SynthManifests {
        day: ingest(&out.join(DAY_DIR), Split::Reference)?,
        night_query: ingest(&out.join(QUERY_DIR), Split::Query)?,
        night_train: ingest(&out.join(TRAIN_DIR), Split::Train)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams {
            n_ref: 6,
            n_query: 3,
            n_train: 2,
            size: 32,
            ..SynthParams::default()
        }
    }

    #[test]
    fn deterministic_files() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        synth_dataset(&small(), a.path()).unwrap();
        let m = synth_dataset(&small(), b.path()).unwrap();
        assert_eq!(m.day.len(), 6);
        assert_eq!(m.night_query.len(), 3);
        for dir in [DAY_DIR, QUERY_DIR, TRAIN_DIR] {
            for e in std::fs::read_dir(a.path().join(dir)).unwrap() {
                let p = e.unwrap().path();
                let q = b.path().join(dir).join(p.file_name().unwrap());
                assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(q).unwrap());
            }
        }
    }

    #[test]
    fn day_and_night_differ_and_poses_are_ordered() {
        let set = synth_views(&small()).unwrap();
        let xs: Vec<f64> = set.day.iter().map(|v| v.pose.t[0]).collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
        let l1: f64 = set.day[0]
            .image
            .data()
            .iter()
            .zip(set.night_query[0].image.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 > 0.0);
    }
}
