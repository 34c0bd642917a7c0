//! Exact nearest-neighbor search over image descriptors, with flip-bracketed
//! dual queries.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geoeval::{Pose, PoseTable};
use crate::image::Image;
use crate::imgproc::hflip;
use crate::vlad::DescriptorDb;

const UNIT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    pub vector: Vec<f64>,
    pub pose: Option<Pose>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Match {
    pub query_id: String,
    pub reference_id: String,
    pub distance: f64,
    pub used_flip: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RetrievalIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

fn check_vector(id: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::data(format!(
            "descriptor {id} has dimension {}, expected {dim}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::data(format!("descriptor {id} is not finite")));
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n != 0.0 && (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::data(format!("descriptor {id} has norm {n}, expected 1")));
    }
    Ok(())
}

impl RetrievalIndex {
    /// Index every descriptor, requiring a pose for each.
    pub fn build(db: &DescriptorDb, poses: &PoseTable) -> Result<Self> {
        Self::assemble(db, |id| {
            poses
                .get(id)
                .copied()
                .map(Some)
                .ok_or_else(|| Error::data(format!("no pose for reference image {id}")))
        })
    }

    /// Index descriptors without pose information.
    pub fn without_poses(db: &DescriptorDb) -> Result<Self> {
        Self::assemble(db, |_| Ok(None))
    }

    fn assemble(
        db: &DescriptorDb,
        mut pose: impl FnMut(&str) -> Result<Option<Pose>>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(db.len());
        for (id, v) in db.entries() {
            if !seen.insert(id.as_str()) {
                return Err(Error::data(format!("duplicate reference id {id}")));
            }
            check_vector(id, v, db.dim())?;
            entries.push(IndexEntry {
                id: id.clone(),
                vector: v.clone(),
                pose: pose(id)?,
            });
        }
        Ok(RetrievalIndex {
            dim: db.dim(),
            entries,
        })
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

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn poses(&self) -> PoseTable {
        self.entries
            .iter()
            .filter_map(|e| e.pose.map(|p| (e.id.clone(), p)))
            .collect()
    }

    /// Brute-force L2 nearest neighbor; equal distances go to the smallest id.
    pub fn query(&self, query_id: &str, q: &[f64]) -> Result<Match> {
        if self.entries.is_empty() {
            return Err(Error::InvalidState("query against an empty index".into()));
        }
        if q.len() != self.dim {
            return Err(Error::invalid(format!(
                "query of dimension {} against a {}-dimensional index",
                q.len(),
                self.dim
            )));
        }
        let mut best: Option<(f64, &str)> = None;
        for e in &self.entries {
            let d2: f64 = e.vector.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            let better = match best {
                None => true,
                Some((bd, bid)) => d2 < bd || (d2 == bd && e.id.as_str() < bid),
            };
            if better {
                best = Some((d2, &e.id));
            }
        }
        let (d2, id) = best.expect("index is non-empty");
        Ok(Match {
            query_id: query_id.to_string(),
            reference_id: id.to_string(),
            distance: d2.sqrt(),
            used_flip: false,
        })
    }

    /// Keep the better of a plain and a flip-bracketed descriptor; ties keep
    /// the plain one.
    pub fn query_pair(&self, query_id: &str, plain: &[f64], flipped: &[f64]) -> Result<Match> {
        let a = self.query(query_id, plain)?;
        let b = self.query(query_id, flipped)?;
        Ok(if b.distance < a.distance {
            Match {
                used_flip: true,
                ..b
            }
        } else {
            a
        })
    }

    /// Dual evaluation: describe `translate(img)` and
    /// `hflip(translate(hflip(img)))`, and keep the closer match.
    pub fn query_dual(
        &self,
        query_id: &str,
        img: &Image,
        translate: impl Fn(&Image) -> Result<Image>,
        describe: impl Fn(&Image) -> Result<Vec<f64>>,
    ) -> Result<Match> {
        let plain = describe(&translate(img)?)?;
        let flipped = describe(&hflip(&translate(&hflip(img))?))?;
        self.query_pair(query_id, &plain, &flipped)
    }
}

pub fn format_matches(matches: &[Match]) -> String {
    let mut s = String::from("query_id,reference_id,distance,used_flip\n");
    for m in matches {
        let _ = writeln!(
            s,
            "{},{},{:.9},{}",
            m.query_id, m.reference_id, m.distance, m.used_flip
        );
    }
    s
}

pub fn parse_matches(text: &str) -> Result<Vec<Match>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "query_id,reference_id,distance,used_flip" => {}
        other => {
            return Err(Error::data(format!(
                "unexpected match table header {:?}",
                other.map(|(_, h)| h)
            )))
        }
    }
    lines
        .map(|(n, line)| {
            let bad = |what: &str| Error::data(format!("match table line {}: {what}", n + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let distance: f64 = f[2].parse().map_err(|_| bad("bad distance"))?;
            if !(distance >= 0.0) {
                return Err(bad("negative distance"));
            }
            let used_flip = match f[3] {
                "true" => true,
                "false" => false,
                other => return Err(bad(&format!("bad flag {other:?}"))),
            };
            Ok(Match {
                query_id: f[0].to_string(),
                reference_id: f[1].to_string(),
                distance,
                used_flip,
            })
        })
        .collect()
}

pub fn write_matches(path: &Path, matches: &[Match]) -> Result<()> {
    std::fs::write(path, format_matches(matches)).map_err(|e| Error::io(path, e))
}

pub fn read_matches(path: &Path) -> Result<Vec<Match>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matches(&text)
}
