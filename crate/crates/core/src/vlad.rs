//! Visual vocabulary, VLAD aggregation and PCA projection.

use std::collections::HashSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio;
use crate::error::{Error, Result};

pub const DEFAULT_CLUSTERS: usize = 16;
pub const DEFAULT_PCA_DIM: usize = 64;

/// k cluster centers of dimension `dim`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    k: usize,
    dim: usize,
    centers: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Vocabulary {
    pub fn new(k: usize, dim: usize, centers: Vec<f64>) -> Result<Self> {
        if k == 0 || dim == 0 || centers.len() != k * dim {
            return Err(Error::invalid(format!(
                "vocabulary of {k} centers in {dim} dimensions needs {} values, got {}",
                k * dim,
                centers.len()
            )));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("vocabulary centers must be finite"));
        }
        Ok(Vocabulary { k, dim, centers })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    /// Closest center by L2 distance; ties go to the lowest index.
    pub fn nearest(&self, v: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centers.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(v, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, |w| {
            w.write_all(b"VOC1")?;
            binio::write_u32(w, self.k as u32)?;
            binio::write_u32(w, self.dim as u32)?;
            binio::write_f32s(w, &self.centers)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_file(path, |r| {
            binio::check_magic(r, b"VOC1")?;
            let k = binio::read_u32(r)? as usize;
            let dim = binio::read_u32(r)? as usize;
            let centers = binio::read_f32s(r, k * dim)?;
            Ok((k, dim, centers))
        })
        .and_then(|(k, dim, centers)| {
            Vocabulary::new(k, dim, centers).map_err(|e| Error::Load(e.to_string()))
        })
    }
}

pub(crate) fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<std::fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file<T>(
    path: &Path,
    f: impl FnOnce(&mut BufReader<std::fs::File>) -> std::io::Result<T>,
) -> Result<T> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    f(&mut r).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

/// Result of a k-means run with its per-iteration objective.
#[derive(Clone, Debug)]
pub struct KmeansFit {
    pub vocabulary: Vocabulary,
    /// Within-cluster sum of squares after each assignment step.
    pub sse: Vec<f64>,
    pub iterations: usize,
}

fn check_points<V: AsRef<[f64]>>(points: &[V]) -> Result<usize> {
    let dim = points
        .first()
        .map(|p| p.as_ref().len())
        .ok_or_else(|| Error::invalid("no points to cluster"))?;
    if dim == 0 || points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::invalid("points must share one non-zero dimension"));
    }
    if points.iter().any(|p| p.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("points must be finite"));
    }
    Ok(dim)
}

/// Lloyd's algorithm with seeded k-means++ initialization.
pub fn kmeans_fit<V: AsRef<[f64]>>(
    points: &[V],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Vocabulary> {
    kmeans_fit_traced(points, k, max_iters, seed).map(|f| f.vocabulary)
}

pub fn kmeans_fit_traced<V: AsRef<[f64]>>(
    points: &[V],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KmeansFit> {
    let dim = check_points(points)?;
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let distinct: HashSet<Vec<u64>> = points
        .iter()
        .map(|p| p.as_ref().iter().map(|v| v.to_bits()).collect())
        .collect();
    if distinct.len() < k {
        return Err(Error::invalid(format!(
            "{} distinct points cannot seed {k} clusters",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<f64> = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..points.len());
    centers.extend_from_slice(points[first].as_ref());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p.as_ref(), &centers[..dim])).collect();
    while centers.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let mut target = rng.gen::<f64>() * total;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
        }
        let pick = pick.expect("a point away from all centers exists");
        let c0 = centers.len();
        centers.extend_from_slice(points[pick].as_ref());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p.as_ref(), &centers[c0..c0 + dim]));
        }
    }

    let mut vocab = Vocabulary { k, dim, centers };
    let mut assign = vec![usize::MAX; points.len()];
    let mut sse = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut total = 0.0;
        for (a, p) in assign.iter_mut().zip(points) {
            let (c, d) = vocab.nearest(p.as_ref());
            total += d;
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        sse.push(total);
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p.as_ref()) {
                *s += v;
            }
        }
        for (c, &n) in counts.iter().enumerate() {
            // Empty clusters keep their previous center.
            if n > 0 {
                for (dst, s) in vocab.centers[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s / n as f64;
                }
            }
        }
    }
    Ok(KmeansFit {
        vocabulary: vocab,
        sse,
        iterations,
    })
}

/// How residual sums are normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VladNorm {
    /// One L2 normalization of the concatenated vector.
    #[default]
    Global,
    /// Normalize each cluster block first, then the whole vector.
    Intra,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VladDescriptor {
    pub vector: Vec<f64>,
    pub projected: bool,
    pub source_id: String,
}

impl VladDescriptor {
    /// The all-zero vector stands for an image without usable residuals.
    pub fn is_sentinel(&self) -> bool {
        self.vector.iter().all(|&v| v == 0.0)
    }
}

fn normalize_or_zero(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Sum residuals to the nearest center per cluster, concatenate, normalize.
///
/// Descriptors are summed in a canonical order so the result does not depend
/// on the order they are given in.
pub fn vlad_aggregate<V: AsRef<[f64]>>(
    descriptors: &[V],
    vocab: &Vocabulary,
    norm_mode: VladNorm,
) -> Result<VladDescriptor> {
    let dim = vocab.dim();
    if let Some(bad) = descriptors.iter().find(|d| d.as_ref().len() != dim) {
        return Err(Error::invalid(format!(
            "descriptor of dimension {} against a {dim}-dimensional vocabulary",
            bad.as_ref().len()
        )));
    }
    let mut order: Vec<&[f64]> = descriptors.iter().map(AsRef::as_ref).collect();
    order.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut acc = vec![0.0; vocab.k() * dim];
    for d in order {
        let (c, _) = vocab.nearest(d);
        for ((a, x), m) in acc[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(d)
            .zip(vocab.center(c))
        {
            *a += x - m;
        }
    }
    if norm_mode == VladNorm::Intra {
        acc.chunks_exact_mut(dim).for_each(normalize_or_zero);
    }
    normalize_or_zero(&mut acc);
    Ok(VladDescriptor {
        vector: acc,
        projected: false,
        source_id: String::new(),
    })
}

/// Mean and orthonormal projection rows of a PCA.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    basis: Vec<f64>,
    p: usize,
}

impl PcaModel {
    pub fn new(mean: Vec<f64>, basis: Vec<f64>, p: usize) -> Result<Self> {
        let dim = mean.len();
        if p == 0 || p > dim || basis.len() != p * dim {
            return Err(Error::invalid(format!(
                "PCA basis of {p} rows over {dim} dimensions needs {} values, got {}",
                p * dim,
                basis.len()
            )));
        }
        Ok(PcaModel { mean, basis, p })
    }

    pub fn output_dim(&self) -> usize {
        self.p
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis_row(&self, i: usize) -> &[f64] {
        let d = self.input_dim();
        &self.basis[i * d..(i + 1) * d]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, |w| {
            w.write_all(b"PCA1")?;
            binio::write_u32(w, self.p as u32)?;
            binio::write_u32(w, self.input_dim() as u32)?;
            binio::write_f32s(w, &self.mean)?;
            binio::write_f32s(w, &self.basis)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_file(path, |r| {
            binio::check_magic(r, b"PCA1")?;
            let p = binio::read_u32(r)? as usize;
            let dim = binio::read_u32(r)? as usize;
            let mean = binio::read_f32s(r, dim)?;
            let basis = binio::read_f32s(r, p * dim)?;
            Ok((mean, basis, p))
        })
        .and_then(|(mean, basis, p)| {
            PcaModel::new(mean, basis, p).map_err(|e| Error::Load(e.to_string()))
        })
    }
}

/// Orthonormalize `rows` in place (modified Gram-Schmidt), replacing
/// degenerate rows with completions from the standard basis.
fn orthonormalize(rows: &mut [Vec<f64>], dim: usize) {
    let mut next_axis = 0;
    for i in 0..rows.len() {
        loop {
            let (done, rest) = rows.split_at_mut(i);
            let row = &mut rest[0];
            for q in done.iter() {
                let dot: f64 = row.iter().zip(q).map(|(a, b)| a * b).sum();
                row.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
            }
            let n = norm(row);
            if n > 1e-8 {
                row.iter_mut().for_each(|a| *a /= n);
                break;
            }
            let mut e = vec![0.0; dim];
            e[next_axis % dim] = 1.0;
            next_axis += 1;
            *row = e;
        }
    }
}

/// Principal axes by eigendecomposition of the covariance (or, when samples
/// are fewer than dimensions, of the equivalent Gram matrix). The first
/// non-zero component of every axis is made positive.
pub fn pca_fit<V: AsRef<[f64]>>(samples: &[V], p: usize) -> Result<PcaModel> {
    let dim = check_points(samples)?;
    let n = samples.len();
    if p == 0 || p >= n || p > dim {
        return Err(Error::invalid(format!(
            "PCA to {p} dimensions needs more than {p} samples and at least {p} input dimensions \
             (have {n} samples of dimension {dim})"
        )));
    }
    let mut mean = vec![0.0; dim];
    for s in samples {
        mean.iter_mut().zip(s.as_ref()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| samples[i].as_ref()[j] - mean[j]);

    let mut rows: Vec<Vec<f64>> = if dim <= n {
        let cov = centered.transpose() * &centered;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        order[..p]
            .iter()
            .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
            .collect()
    } else {
        let gram = &centered * centered.transpose();
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        order[..p]
            .iter()
            .map(|&i| {
                let u = eig.eigenvectors.column(i);
                let v = centered.transpose() * u;
                v.iter().copied().collect()
            })
            .collect()
    };
    orthonormalize(&mut rows, dim);
    for row in &mut rows {
        if let Some(first) = row.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }
    PcaModel::new(mean, rows.concat(), p)
}

/// Project onto the principal axes and renormalize; projections with no
/// energy stay the zero sentinel.
pub fn pca_project(v: &[f64], model: &PcaModel) -> Result<Vec<f64>> {
    let dim = model.input_dim();
    if v.len() != dim {
        return Err(Error::invalid(format!(
            "vector of dimension {} against a PCA over {dim}",
            v.len()
        )));
    }
    let centered: Vec<f64> = v.iter().zip(&model.mean).map(|(a, m)| a - m).collect();
    let mut out: Vec<f64> = model
        .basis
        .chunks_exact(dim)
        .map(|row| row.iter().zip(&centered).map(|(a, b)| a * b).sum())
        .collect();
    if norm(&out) < 1e-12 {
        out.iter_mut().for_each(|x| *x = 0.0);
    } else {
        normalize_or_zero(&mut out);
    }
    Ok(out)
}

impl VladDescriptor {
    pub fn project(&self, model: &PcaModel) -> Result<VladDescriptor> {
        Ok(VladDescriptor {
            vector: pca_project(&self.vector, model)?,
            projected: true,
            source_id: self.source_id.clone(),
        })
    }
}

/// Named image descriptors of one common dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DescriptorDb {
    dim: usize,
    entries: Vec<(String, Vec<f64>)>,
}

impl DescriptorDb {
    pub fn new(dim: usize) -> Self {
        DescriptorDb {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Vec<f64>)] {
        &self.entries
    }

    pub fn push(&mut self, name: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::invalid(format!(
                "descriptor of dimension {} in a {}-dimensional database",
                vector.len(),
                self.dim
            )));
        }
        self.entries.push((name.into(), vector));
        Ok(())
    }

    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(b"VDB1")?;
        binio::write_u32(w, self.entries.len() as u32)?;
        binio::write_u32(w, self.dim as u32)?;
        for (name, v) in &self.entries {
            binio::write_string(w, name)?;
            binio::write_f32s(w, v)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> std::io::Result<Self> {
        binio::check_magic(r, b"VDB1")?;
        let count = binio::read_u32(r)? as usize;
        let dim = binio::read_u32(r)? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = binio::read_string(r, 1 << 16)?;
            entries.push((name, binio::read_f32s(r, dim)?));
        }
        Ok(DescriptorDb { dim, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, |w| self.write(w))
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_file(path, |r| DescriptorDb::read(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pad128(x: f64) -> Vec<f64> {
        let mut v = vec![0.0; 128];
        v[0] = x;
        v
    }

    #[test]
    fn kmeans_recovers_exact_locations() {
        let locs: Vec<Vec<f64>> = (0..4).map(|i| pad128(i as f64 * 3.0)).collect();
        let mut pts = Vec::new();
        for _ in 0..5 {
            pts.extend(locs.iter().cloned());
        }
        for seed in 0..10 {
            let v = kmeans_fit(&pts, 4, 50, seed).unwrap();
            let mut got: Vec<f64> = (0..4).map(|i| v.center(i)[0]).collect();
            got.sort_by(f64::total_cmp);
            assert_eq!(got, vec![0.0, 3.0, 6.0, 9.0]);
        }
    }

    #[test]
    fn kmeans_two_cluster_example() {
        // Exhaustive check of the balanced 2+2 partition vs the others: only
        // {0, 0.1} | {0.9, 1.0} is a fixed point, with centers 0.05 and 0.95.
        let pts: Vec<Vec<f64>> = [0.0, 0.1, 0.9, 1.0].iter().map(|&x| pad128(x)).collect();
        for seed in 0..20 {
            let v = kmeans_fit(&pts, 2, 50, seed).unwrap();
            let mut got: Vec<f64> = (0..2).map(|i| v.center(i)[0]).collect();
            got.sort_by(f64::total_cmp);
            assert!((got[0] - 0.05).abs() < 1e-12 && (got[1] - 0.95).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_needs_enough_distinct_points() {
        let pts = vec![pad128(1.0), pad128(1.0), pad128(2.0)];
        assert!(kmeans_fit(&pts, 3, 10, 0).is_err());
        assert!(kmeans_fit(&pts, 2, 10, 0).is_ok());
        assert!(kmeans_fit::<Vec<f64>>(&[], 1, 10, 0).is_err());
    }

    #[test]
    fn vlad_toy_example() {
        let vocab = Vocabulary::new(2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let v = vlad_aggregate(&[vec![0.0, 1.0]], &vocab, VladNorm::Global).unwrap();
        assert_eq!(v.vector, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn vlad_sentinels() {
        let vocab = Vocabulary::new(2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let empty: Vec<Vec<f64>> = vec![];
        assert!(vlad_aggregate(&empty, &vocab, VladNorm::Global).unwrap().is_sentinel());
        let at_centers = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        assert!(vlad_aggregate(&at_centers, &vocab, VladNorm::Global).unwrap().is_sentinel());
        assert!(vlad_aggregate(&[vec![1.0]], &vocab, VladNorm::Global).is_err());
    }

    #[test]
    fn vlad_intra_norm_balances_clusters() {
        let vocab = Vocabulary::new(2, 2, vec![0.0, 0.0, 10.0, 0.0]).unwrap();
        let d = vec![vec![0.0, 3.0], vec![10.0, 0.5]];
        let g = vlad_aggregate(&d, &vocab, VladNorm::Global).unwrap();
        let i = vlad_aggregate(&d, &vocab, VladNorm::Intra).unwrap();
        assert!(g.vector[1] > 5.0 * g.vector[3]);
        assert!((i.vector[1] - i.vector[3]).abs() < 1e-12);
    }

    #[test]
    fn pca_line_example() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let m = pca_fit(&pts, 1).unwrap();
        let s5 = 5f64.sqrt();
        assert!((m.basis_row(0)[0] - 1.0 / s5).abs() < 1e-9);
        assert!((m.basis_row(0)[1] - 2.0 / s5).abs() < 1e-9);
        let proj = pca_project(m.mean(), &m).unwrap();
        assert!(proj.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pca_argument_checks() {
        let pts: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64, 1.0, 0.5 * i as f64]).collect();
        assert!(pca_fit(&pts, 3).is_err());
        assert!(pca_fit(&pts, 0).is_err());
        let m = pca_fit(&pts, 2).unwrap();
        assert!(pca_project(&[1.0, 2.0], &m).is_err());
    }

    #[test]
    fn file_formats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::new(2, 3, vec![0.5, 1.0, -2.0, 3.25, 0.0, 1.5]).unwrap();
        let vp = dir.path().join("v.voc");
        vocab.save(&vp).unwrap();
        assert_eq!(Vocabulary::load(&vp).unwrap(), vocab);
        let bytes = std::fs::read(&vp).unwrap();
        assert_eq!(&bytes[..12], b"VOC1\x02\0\0\0\x03\0\0\0");

        let pca = PcaModel::new(vec![0.5, 0.25], vec![1.0, 0.0], 1).unwrap();
        let pp = dir.path().join("p.pca");
        pca.save(&pp).unwrap();
        assert_eq!(PcaModel::load(&pp).unwrap(), pca);

        let mut db = DescriptorDb::new(2);
        db.push("img-001", vec![0.5, -0.5]).unwrap();
        db.push("ünï", vec![1.0, 0.0]).unwrap();
        assert!(db.push("bad", vec![1.0]).is_err());
        let dp = dir.path().join("d.vdb");
        db.save(&dp).unwrap();
        assert_eq!(DescriptorDb::load(&dp).unwrap(), db);
        assert!(Vocabulary::load(&dp).is_err());
    }
}
