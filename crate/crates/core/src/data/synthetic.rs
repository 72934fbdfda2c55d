//! Synthetic topic corpus with controllable negative hardness.
//!
//! Topic centers live on the unit sphere and share a common direction whose
//! weight is set by `anisotropy`, so that unrelated texts start out with a
//! positive mean similarity the way pretrained encoders do. Queries and
//! documents are noisy copies of their topic center; their vectors double as
//! the initial ("pretrained") embeddings.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    create, open, write_qrels, write_triplets, DataError, QrelsTable, Result, Triple,
    TripletDataset,
};
use crate::geometry;
use crate::trainer::EmbeddingTable;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_topics: usize,
    pub docs_per_topic: usize,
    pub queries_per_topic: usize,
    /// How many of each topic's queries are held out for validation.
    pub validation_queries_per_topic: usize,
    pub dim: usize,
    /// Probability that a negative comes from the topic nearest to the
    /// positive's topic instead of a uniformly chosen other topic.
    pub hardness: f64,
    /// Norm of the perturbation around the topic center for documents.
    pub doc_noise: f64,
    /// Same for queries. Only documents and training queries move during
    /// training, so noisy documents are what training has to repair.
    pub query_noise: f64,
    /// Expected cosine between two topic centers.
    pub anisotropy: f64,
    /// Grades {1,2,3} by noise tier instead of a flat grade 3.
    pub graded: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_topics: 32,
            docs_per_topic: 8,
            queries_per_topic: 4,
            validation_queries_per_topic: 1,
            dim: 32,
            hardness: 0.3,
            doc_noise: 1.2,
            query_noise: 0.2,
            anisotropy: 0.3,
            graded: false,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_string()));
        if self.n_topics < 2 {
            return bad("at least 2 topics are needed to draw negatives");
        }
        if self.docs_per_topic == 0 || self.queries_per_topic == 0 {
            return bad("docs_per_topic and queries_per_topic must be positive");
        }
        if self.validation_queries_per_topic >= self.queries_per_topic {
            return bad(
                "validation_queries_per_topic must leave at least one training query per topic",
            );
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.hardness) {
            return bad("hardness must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.anisotropy) {
            return bad("anisotropy must lie in [0, 1)");
        }
        if !(self.doc_noise >= 0.0
            && self.doc_noise.is_finite()
            && self.query_noise >= 0.0
            && self.query_noise.is_finite())
        {
            return bad("noise levels must be non-negative numbers");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Validation,
    Doc,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Validation => "validation",
            Role::Doc => "doc",
        }
    }
}

/// Ids grouped by role, in manifest order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub docs: Vec<String>,
}

impl Manifest {
    pub fn queries(&self, role: Role) -> &[String] {
        match role {
            Role::Train => &self.train,
            Role::Validation => &self.validation,
            Role::Doc => &self.docs,
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (ids, role) in [
            (&self.train, Role::Train),
            (&self.validation, Role::Validation),
            (&self.docs, Role::Doc),
        ] {
            for id in ids {
                writeln!(w, "{id}\t{}", role.as_str())?;
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let mut m = Manifest::default();
    for (n, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (id, role) = line.split_once('\t').ok_or_else(|| DataError::Malformed {
            line: n + 1,
            message: "expected `id<TAB>role`".into(),
        })?;
        match role {
            "train" => m.train.push(id.to_string()),
            "validation" => m.validation.push(id.to_string()),
            "doc" => m.docs.push(id.to_string()),
            other => {
                return Err(DataError::Malformed {
                    line: n + 1,
                    message: format!("unknown role `{other}`"),
                })
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    /// Unit topic centers.
    pub centers: Vec<Vec<f64>>,
    /// Feature vector of every query and document.
    pub features: EmbeddingTable,
    pub topic_of: BTreeMap<String, usize>,
    pub manifest: Manifest,
    pub triplets: TripletDataset,
    pub qrels: QrelsTable,
}

impl SyntheticCorpus {
    /// Every id mapped onto its topic center: the ranking ceiling.
    pub fn oracle_table(&self) -> EmbeddingTable {
        let rows = self
            .features
            .ids()
            .map(|id| (id.to_string(), self.centers[self.topic_of[id]].clone()));
        EmbeddingTable::from_rows(self.spec.dim, self.spec.seed, rows)
            .expect("topic centers are unit vectors of the corpus dimension")
    }

    /// Writes `features.tsv`, `triplets.tsv`, `qrels.txt`, `manifest.tsv` and `oracle.tsv`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let finish = |mut w: std::io::BufWriter<std::fs::File>| w.flush();
        let mut w = create(&dir.join("features.tsv"))?;
        self.features.write_tsv(&mut w)?;
        finish(w)?;
        let mut w = create(&dir.join("oracle.tsv"))?;
        self.oracle_table().write_tsv(&mut w)?;
        finish(w)?;
        let mut w = create(&dir.join("triplets.tsv"))?;
        write_triplets(&self.triplets, &mut w)?;
        finish(w)?;
        let mut w = create(&dir.join("qrels.txt"))?;
        write_qrels(&self.qrels, &mut w)?;
        finish(w)?;
        let mut w = create(&dir.join("manifest.tsv"))?;
        self.manifest.write(&mut w)?;
        finish(w)?;
        Ok(())
    }
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = geometry::norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn perturb(rng: &mut impl Rng, center: &[f64], noise: f64) -> Vec<f64> {
    let scale = noise / (center.len() as f64).sqrt();
    center
        .iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            c + scale * z
        })
        .collect()
}

pub fn doc_id(topic: usize, k: usize) -> String {
    format!("d{topic:03}_{k:02}")
}

pub fn query_id(topic: usize, k: usize) -> String {
    format!("q{topic:03}_{k:02}")
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;

    let shared = unit(gaussian(&mut rng, dim));
    let (w_shared, w_own) = (spec.anisotropy.sqrt(), (1.0 - spec.anisotropy).sqrt());
    let centers: Vec<Vec<f64>> = (0..spec.n_topics)
        .map(|_| {
            let own = unit(gaussian(&mut rng, dim));
            unit(
                shared
                    .iter()
                    .zip(&own)
                    .map(|(s, o)| w_shared * s + w_own * o)
                    .collect(),
            )
        })
        .collect();

    // Nearest other topic by center similarity.
    let nearest: Vec<usize> = (0..spec.n_topics)
        .map(|t| {
            (0..spec.n_topics)
                .filter(|&u| u != t)
                .max_by(|&a, &b| {
                    geometry::dot(&centers[t], &centers[a])
                        .total_cmp(&geometry::dot(&centers[t], &centers[b]))
                        .then(b.cmp(&a))
                })
                .expect("at least two topics")
        })
        .collect();

    let mut rows = Vec::new();
    let mut topic_of = BTreeMap::new();
    let mut manifest = Manifest::default();
    let mut grades: Vec<Vec<u32>> = Vec::with_capacity(spec.n_topics);
    for (t, center) in centers.iter().enumerate() {
        let mut topic_grades = Vec::with_capacity(spec.docs_per_topic);
        for k in 0..spec.docs_per_topic {
            let tier = if spec.graded { k % 3 } else { 0 };
            let v = perturb(&mut rng, center, spec.doc_noise * (1 + tier) as f64);
            let id = doc_id(t, k);
            topic_of.insert(id.clone(), t);
            manifest.docs.push(id.clone());
            rows.push((id, v));
            topic_grades.push(3 - tier as u32);
        }
        grades.push(topic_grades);
    }
    let n_train = spec.queries_per_topic - spec.validation_queries_per_topic;
    for (t, center) in centers.iter().enumerate() {
        for k in 0..spec.queries_per_topic {
            let v = perturb(&mut rng, center, spec.query_noise);
            let id = query_id(t, k);
            topic_of.insert(id.clone(), t);
            if k < n_train {
                manifest.train.push(id.clone());
            } else {
                manifest.validation.push(id.clone());
            }
            rows.push((id, v));
        }
    }
    let features = EmbeddingTable::from_rows(dim, spec.seed, rows)?;

    let mut qrels = QrelsTable::default();
    for t in 0..spec.n_topics {
        for k in 0..spec.queries_per_topic {
            for (j, &g) in grades[t].iter().enumerate() {
                qrels.insert(&query_id(t, k), &doc_id(t, j), g)?;
            }
        }
    }

    let mut triples = Vec::new();
    for t in 0..spec.n_topics {
        for k in 0..n_train {
            let q = query_id(t, k);
            for j in 0..spec.docs_per_topic {
                let neg_topic = if rng.gen::<f64>() < spec.hardness {
                    nearest[t]
                } else {
                    let u = rng.gen_range(0..spec.n_topics - 1);
                    if u >= t {
                        u + 1
                    } else {
                        u
                    }
                };
                let neg = doc_id(neg_topic, rng.gen_range(0..spec.docs_per_topic));
                if qrels.grade(&q, &neg).is_none() {
                    qrels.insert(&q, &neg, 0)?;
                }
                triples.push(Triple::new(q.clone(), doc_id(t, j), neg));
            }
        }
    }
    triples.shuffle(&mut rng);

    Ok(SyntheticCorpus {
        spec: spec.clone(),
        centers,
        features,
        topic_of,
        manifest,
        triplets: TripletDataset::new(triples)?,
        qrels,
    })
}
