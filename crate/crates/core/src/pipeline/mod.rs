//! Composition of the stages: vocabulary and PCA fitting, featurization,
//! retrieval with optional translation, configuration and data handling.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod synth;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::RunConfig;
pub use dataset::{ingest, DatasetManifest, Split};
pub use synth::{synth_dataset, synth_views, SynthParams};

use crate::error::{Error, Result};
use crate::features::{extract_dense, DenseParams};
use crate::image::Image;
use crate::imgproc::hist_equalize;
use crate::retrieval::{Match, RetrievalIndex};
use crate::translator::CycleModel;
use crate::vlad::{
    kmeans_fit, pca_fit, vlad_aggregate, DescriptorDb, PcaModel, Vocabulary, VladNorm,
};

/// Apply `f` to every item on all available cores; results keep input order.
pub fn par_map<T: Sync, R: Send>(
    items: &[T],
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

/// Fit the visual vocabulary on dense descriptors of `images`, sampling at
/// most `cfg.vocab_samples` of them.
pub fn build_vocab(images: &[Image], cfg: &RunConfig) -> Result<Vocabulary> {
    let per_image = par_map(images, |img| {
        extract_dense(img, &cfg.dense.scales, cfg.dense.stride)
    })?;
    let all: Vec<Vec<f64>> = per_image.into_iter().flatten().map(|d| d.vector).collect();
    if all.is_empty() {
        return Err(Error::data("no descriptors to build a vocabulary from"));
    }
    let seed = cfg.train.seed;
    let chosen: Vec<Vec<f64>> = if all.len() > cfg.vocab_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, all.len(), cfg.vocab_samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| all[i].clone()).collect()
    } else {
        all
    };
    kmeans_fit(&chosen, cfg.k, cfg.kmeans_iters, seed)
}

/// Image to global descriptor: dense RootSIFT, VLAD, optional PCA.
#[derive(Clone, Debug)]
pub struct Featurizer {
    pub vocab: Vocabulary,
    pub pca: Option<PcaModel>,
    pub dense: DenseParams,
    pub norm: VladNorm,
}

impl Featurizer {
    pub fn new(vocab: Vocabulary, pca: Option<PcaModel>, cfg: &RunConfig) -> Result<Self> {
        if let Some(p) = &pca {
            if p.input_dim() != vocab.k() * vocab.dim() {
                return Err(Error::invalid(format!(
                    "PCA over {} dimensions does not fit a {}x{} vocabulary",
                    p.input_dim(),
                    vocab.k(),
                    vocab.dim()
                )));
            }
        }
        Ok(Featurizer {
            vocab,
            pca,
            dense: cfg.dense.clone(),
            norm: cfg.vlad_norm,
        })
    }

    /// Unprojected VLAD vector.
    pub fn vlad(&self, img: &Image) -> Result<Vec<f64>> {
        let descs = extract_dense(img, &self.dense.scales, self.dense.stride)?;
        let vectors: Vec<&[f64]> = descs.iter().map(|d| d.vector.as_slice()).collect();
        Ok(vlad_aggregate(&vectors, &self.vocab, self.norm)?.vector)
    }

    pub fn describe(&self, img: &Image) -> Result<Vec<f64>> {
        let v = self.vlad(img)?;
        match &self.pca {
            None => Ok(v),
            Some(_) if v.iter().all(|&x| x == 0.0) => Ok(vec![0.0; self.output_dim()]),
            Some(p) => crate::vlad::pca_project(&v, p),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.pca
            .as_ref()
            .map_or(self.vocab.k() * self.vocab.dim(), PcaModel::output_dim)
    }
}

/// PCA fitted to the VLAD vectors of `images`.
pub fn fit_pca(images: &[Image], vocab: &Vocabulary, cfg: &RunConfig) -> Result<PcaModel> {
    let f = Featurizer::new(vocab.clone(), None, cfg)?;
    let vlads = par_map(images, |img| f.vlad(img))?;
    pca_fit(&vlads, cfg.pca_dim)
}

fn maybe_equalize(img: &Image, on: bool) -> Image {
    if on {
        hist_equalize(img)
    } else {
        img.clone()
    }
}

pub fn featurize(images: &[(String, Image)], f: &Featurizer, hist_eq: bool) -> Result<DescriptorDb> {
    let vectors = par_map(images, |(_, img)| f.describe(&maybe_equalize(img, hist_eq)))?;
    let mut db = DescriptorDb::new(f.output_dim());
    for ((id, _), v) in images.iter().zip(vectors) {
        db.push(id.clone(), v)?;
    }
    Ok(db)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct QueryOptions<'a> {
    pub translator: Option<&'a CycleModel>,
    pub dual: bool,
    pub hist_eq: bool,
}

/// Match every query image against the index. Queries are optionally
/// histogram-equalized, then translated; with `dual` the flip bracket wraps
/// the translation.
pub fn retrieve(
    index: &RetrievalIndex,
    queries: &[(String, Image)],
    f: &Featurizer,
    opts: QueryOptions<'_>,
) -> Result<Vec<Match>> {
    let translate = |img: &Image| match opts.translator {
        Some(m) => m.translate(img),
        None => Ok(img.clone()),
    };
    par_map(queries, |(id, img)| {
        let img = maybe_equalize(img, opts.hist_eq);
        if opts.dual {
            index.query_dual(id, &img, translate, |x| f.describe(x))
        } else {
            index.query(id, &f.describe(&translate(&img)?)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoeval::{evaluate_retrieval, ThresholdSpec};

    #[test]
    fn self_retrieval_is_exact() {
        let params = SynthParams {
            n_ref: 12,
            n_query: 1,
            n_train: 0,
            size: 96,
            ..SynthParams::default()
        };
        let set = synth_views(&params).unwrap();
        let cfg = RunConfig {
            k: 4,
            pca_dim: 8,
            ..RunConfig::default()
        };
        let imgs: Vec<Image> = set.day.iter().map(|v| v.image.clone()).collect();
        let vocab = build_vocab(&imgs, &cfg).unwrap();
        let pca = fit_pca(&imgs, &vocab, &cfg).unwrap();
        let f = Featurizer::new(vocab, Some(pca), &cfg).unwrap();
        let named: Vec<(String, Image)> = set.day.iter().map(|v| (v.id.clone(), v.image.clone())).collect();
        let db = featurize(&named, &f, false).unwrap();
        let poses = set.day.iter().map(|v| (v.id.clone(), v.pose)).collect();
        let index = RetrievalIndex::build(&db, &poses).unwrap();
        let matches = retrieve(&index, &named, &f, QueryOptions::default()).unwrap();
        assert!(matches.iter().all(|m| m.query_id == m.reference_id));
        let rep = evaluate_retrieval(&matches, &poses, &poses, &ThresholdSpec::standard()).unwrap();
        assert_eq!(rep.accuracies, vec![100.0; 3]);
    }
}
