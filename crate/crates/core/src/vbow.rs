//! Salience-weighted visual bag of words.
//!
//! Descriptors are relaxed to 0/1 real vectors and clustered with weighted
//! k-means; each keypoint then votes for its nearest visual word with its
//! salience weight. Both weighting stages can be switched independently.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{WeightedKeypoint, DESCRIPTOR_BITS};

pub const VOCABULARY_FORMAT: &str = "prominence-vocabulary/1";
pub const DEFAULT_VOCABULARY_SIZE: usize = 500;

/// Row-major point set of fixed dimension.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "{} values do not form points of dimension {dim}",
                data.len()
            )));
        }
        Ok(Points { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Stop once no centroid moves farther than this.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: DEFAULT_VOCABULARY_SIZE,
            max_iters: 100,
            seed: 0,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Weighted objective after every Lloyd iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Draws an index with probability proportional to `mass`.
fn sample_proportional(rng: &mut ChaCha8Rng, mass: &[f64]) -> Option<usize> {
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            acc += m;
            last_positive = Some(i);
            if acc > target {
                return Some(i);
            }
        }
    }
    last_positive
}

fn plus_plus_init(points: Points<'_>, weights: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = sample_proportional(rng, weights).expect("positive weight checked by caller");
    let mut centroids = vec![points.get(first).to_vec()];
    let mut closest: Vec<f64> = (0..points.len())
        .map(|i| squared_distance(points.get(i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let mass: Vec<f64> = weights.iter().zip(&closest).map(|(w, d)| w * d).collect();
        // all remaining mass zero: duplicates only, fall back to weight
        let next = sample_proportional(rng, &mass)
            .or_else(|| sample_proportional(rng, weights))
            .expect("positive weight checked by caller");
        let c = points.get(next).to_vec();
        for (i, d) in closest.iter_mut().enumerate() {
            let nd = squared_distance(points.get(i), &c);
            if nd < *d {
                *d = nd;
            }
        }
        centroids.push(c);
    }
    centroids
}

/// Weighted k-means with k-means++ seeding and Lloyd updates.
///
/// Zero-weight points never influence the centroids. Clusters left without
/// weight are reseeded at the point with the largest `w * d^2`.
pub fn weighted_kmeans(points: Points<'_>, weights: &[f64], config: &KMeansConfig) -> Result<KMeansFit> {
    let n = points.len();
    if weights.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} weights for {n} points",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidInput(format!("invalid weight {w}")));
    }
    if config.k < 2 {
        return Err(Error::InvalidInput("k must be at least 2".into()));
    }
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if positive < config.k {
        return Err(Error::InsufficientFeatures {
            needed: config.k,
            found: positive,
        });
    }
    let dim = points.dim();
    let k = config.k;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = plus_plus_init(points, weights, k, &mut rng);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;
        let mut assigned: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(points.get(i), &centroids))
            .collect();

        let mut mass = vec![0.0; k];
        for (i, &(j, _)) in assigned.iter().enumerate() {
            mass[j] += weights[i];
        }
        for j in 0..k {
            if mass[j] > 0.0 {
                continue;
            }
            let far = (0..n)
                .map(|i| (i, weights[i] * assigned[i].1))
                .fold((usize::MAX, 0.0), |best, (i, m)| if m > best.1 { (i, m) } else { best });
            if far.0 == usize::MAX {
                continue;
            }
            let i = far.0;
            centroids[j] = points.get(i).to_vec();
            assigned[i] = (j, 0.0);
            mass.fill(0.0);
            for (i, &(j, _)) in assigned.iter().enumerate() {
                mass[j] += weights[i];
            }
        }

        // fixed reduction order keeps results identical across thread counts
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, &(j, _)) in assigned.iter().enumerate() {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            for (s, x) in sums[j].iter_mut().zip(points.get(i)) {
                *s += w * x;
            }
        }
        let mut movement: f64 = 0.0;
        for j in 0..k {
            if mass[j] > 0.0 {
                let updated: Vec<f64> = sums[j].iter().map(|s| s / mass[j]).collect();
                movement = movement.max(squared_distance(&updated, &centroids[j]).sqrt());
                centroids[j] = updated;
            }
        }
        let objective: f64 = assigned
            .iter()
            .enumerate()
            .map(|(i, &(j, _))| weights[i] * squared_distance(points.get(i), &centroids[j]))
            .sum();
        trace.push(objective);
        if movement < config.tolerance {
            converged = true;
            break;
        }
    }

    let assignments = (0..n)
        .into_par_iter()
        .map(|i| nearest(points.get(i), &centroids).0)
        .collect();
    Ok(KMeansFit {
        centroids,
        assignments,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// Which of the two stages use salience weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightingStages {
    /// Weights enter the k-means objective.
    pub clustering: bool,
    /// Weights replace unit counts in the term vectors.
    pub counts: bool,
}

impl WeightingStages {
    pub const NONE: WeightingStages = WeightingStages {
        clustering: false,
        counts: false,
    };
    pub const BOTH: WeightingStages = WeightingStages {
        clustering: true,
        counts: true,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub format: String,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub training_seed: u64,
    pub brief_seed: u64,
    pub weighting: WeightingStages,
}

impl Vocabulary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Vocabulary = serde_json::from_str(text)?;
        if v.format != VOCABULARY_FORMAT {
            return Err(Error::UnsupportedFormat(format!("vocabulary format `{}`", v.format)));
        }
        if v.k < 2 || v.centroids.len() != v.k {
            return Err(Error::InvalidInput("vocabulary needs k >= 2 centroids".into()));
        }
        if v
            .centroids
            .iter()
            .any(|c| c.len() != DESCRIPTOR_BITS || c.iter().any(|x| !(0.0..=1.0).contains(x)))
        {
            return Err(Error::InvalidInput("centroids must be 256 values in [0, 1]".into()));
        }
        Ok(v)
    }
}

fn embed(features: &[WeightedKeypoint]) -> Vec<f64> {
    features
        .iter()
        .flat_map(|f| f.descriptor.to_unit_vector())
        .collect()
}

/// Clusters corpus descriptors into `config.k` visual words.
pub fn build_vocabulary(
    features: &[WeightedKeypoint],
    config: &KMeansConfig,
    brief_seed: u64,
    weighting: WeightingStages,
) -> Result<(Vocabulary, KMeansFit)> {
    if features.iter().all(|f| f.weight == 0.0) && weighting.clustering {
        return Err(Error::InsufficientFeatures {
            needed: config.k,
            found: 0,
        });
    }
    let data = embed(features);
    let points = Points::new(&data, DESCRIPTOR_BITS)?;
    let weights: Vec<f64> = if weighting.clustering {
        features.iter().map(|f| f.weight).collect()
    } else {
        vec![1.0; features.len()]
    };
    let fit = weighted_kmeans(points, &weights, config)?;
    let vocab = Vocabulary {
        format: VOCABULARY_FORMAT.to_string(),
        k: config.k,
        centroids: fit.centroids.clone(),
        training_seed: config.seed,
        brief_seed,
        weighting,
    };
    Ok((vocab, fit))
}

/// Term vector of one document: each keypoint adds its weight (or 1) to its nearest word.
pub fn quantize(features: &[WeightedKeypoint], vocab: &Vocabulary, weighted_counts: bool) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Err(Error::EmptyFeatures);
    }
    let mut terms = vec![0.0; vocab.k];
    for f in features {
        let (j, _) = nearest(&f.descriptor.to_unit_vector(), &vocab.centroids);
        terms[j] += if weighted_counts { f.weight } else { 1.0 };
    }
    Ok(terms)
}

/// Identifier and grouping metadata (outlet, issue, ...) of one DTM row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub id: String,
    pub metadata: BTreeMap<String, String>,
}

impl DocumentMeta {
    pub fn new(id: impl Into<String>) -> Self {
        DocumentMeta {
            id: id.into(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }
}

/// Documents x visual words; non-negative, finite, no empty rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentTermMatrix {
    documents: Vec<DocumentMeta>,
    n_terms: usize,
    values: Vec<f64>,
}

impl DocumentTermMatrix {
    pub fn new(documents: Vec<DocumentMeta>, n_terms: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != documents.len() * n_terms {
            return Err(Error::InvalidInput(format!(
                "{} values for {} documents x {n_terms} terms",
                values.len(),
                documents.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!("invalid term weight {v}")));
        }
        for (i, doc) in documents.iter().enumerate() {
            if values[i * n_terms..(i + 1) * n_terms].iter().all(|&v| v == 0.0) {
                return Err(Error::DegenerateMatrix(format!("document `{}` has no terms", doc.id)));
            }
        }
        Ok(DocumentTermMatrix {
            documents,
            n_terms,
            values,
        })
    }

    pub fn from_rows(documents: Vec<DocumentMeta>, rows: &[Vec<f64>]) -> Result<Self> {
        let n_terms = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n_terms) {
            return Err(Error::InvalidInput("rows differ in length".into()));
        }
        Self::new(documents, n_terms, rows.concat())
    }

    pub fn n_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn documents(&self) -> &[DocumentMeta] {
        &self.documents
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_terms..(i + 1) * self.n_terms]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_terms + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.documents.iter().position(|d| d.id == id)
    }

    /// Drops all-zero term columns; returns the kept column indices.
    pub fn drop_empty_terms(&self) -> (DocumentTermMatrix, Vec<usize>) {
        let kept: Vec<usize> = (0..self.n_terms)
            .filter(|&j| (0..self.n_docs()).any(|i| self.get(i, j) > 0.0))
            .collect();
        let values = (0..self.n_docs())
            .flat_map(|i| kept.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        (
            DocumentTermMatrix {
                documents: self.documents.clone(),
                n_terms: kept.len(),
                values,
            },
            kept,
        )
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.documents.clone(),
            self.n_terms,
            self.values.iter().map(|v| v * c).collect(),
        )
    }

    /// Weighted counts rounded to the nearest integer, for strict Poisson fits.
    pub fn rounded(&self) -> Result<Self> {
        Self::new(
            self.documents.clone(),
            self.n_terms,
            self.values.iter().map(|v| v.round()).collect(),
        )
    }

    pub fn with_columns(&self, order: &[usize]) -> Result<Self> {
        let values = (0..self.n_docs())
            .flat_map(|i| order.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self::new(self.documents.clone(), order.len(), values)
    }

    fn group_columns(&self) -> Vec<String> {
        let keys: BTreeSet<&String> = self.documents.iter().flat_map(|d| d.metadata.keys()).collect();
        keys.into_iter().cloned().collect()
    }

    /// CSV with `document`, the metadata columns, then `w0..w{k-1}`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let groups = self.group_columns();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["document".to_string()];
        header.extend(groups.iter().cloned());
        header.extend((0..self.n_terms).map(|j| format!("w{j}")));
        w.write_record(&header)?;
        for (i, doc) in self.documents.iter().enumerate() {
            let mut rec = vec![doc.id.clone()];
            rec.extend(groups.iter().map(|g| doc.metadata.get(g).cloned().unwrap_or_default()));
            rec.extend(self.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<dtm csv>", e))?;
        Ok(())
    }

    /// Reads a CSV written by [`write_csv`](Self::write_csv) or any table with a
    /// `document` column; every column that parses as a number in all rows and
    /// is not named in `metadata_columns` is a term.
    pub fn read_csv(input: impl Read, metadata_columns: &[&str]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let doc_col = headers
            .iter()
            .position(|h| h == "document")
            .ok_or_else(|| Error::MissingColumn("document".into()))?;
        let records: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>()?;
        let term_cols: Vec<usize> = (0..headers.len())
            .filter(|&c| c != doc_col && !metadata_columns.contains(&&headers[c]))
            .filter(|&c| records.iter().all(|rec| rec[c].trim().parse::<f64>().is_ok()))
            .collect();
        let meta_cols: Vec<usize> = (0..headers.len())
            .filter(|&c| c != doc_col && !term_cols.contains(&c))
            .collect();
        let mut docs = Vec::with_capacity(records.len());
        let mut values = Vec::with_capacity(records.len() * term_cols.len());
        for rec in &records {
            let mut meta = DocumentMeta::new(&rec[doc_col]);
            for &c in &meta_cols {
                meta.metadata.insert(headers[c].to_string(), rec[c].to_string());
            }
            docs.push(meta);
            for &c in &term_cols {
                values.push(rec[c].trim().parse::<f64>().expect("checked above"));
            }
        }
        Self::new(docs, term_cols.len(), values)
    }
}

/// One document's term vector before aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct TermRow {
    pub document: DocumentMeta,
    pub terms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub dtm: DocumentTermMatrix,
    /// Groups whose summed vector was all zero.
    pub dropped: Vec<String>,
}

/// Sums term vectors within each value of `group_by`; groups come out sorted.
pub fn aggregate_documents(rows: &[TermRow], group_by: &str) -> Result<Aggregated> {
    let n_terms = rows.first().map_or(0, |r| r.terms.len());
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<&DocumentMeta>)> = BTreeMap::new();
    for row in rows {
        if row.terms.len() != n_terms {
            return Err(Error::InvalidInput("term vectors differ in length".into()));
        }
        let key = row
            .document
            .metadata
            .get(group_by)
            .ok_or_else(|| Error::MissingGroupKey {
                key: group_by.to_string(),
                document: row.document.id.clone(),
            })?;
        let entry = groups
            .entry(key.clone())
            .or_insert_with(|| (vec![0.0; n_terms], Vec::new()));
        for (acc, v) in entry.0.iter_mut().zip(&row.terms) {
            *acc += v;
        }
        entry.1.push(&row.document);
    }
    let mut docs = Vec::new();
    let mut values = Vec::new();
    let mut dropped = Vec::new();
    for (key, (sum, members)) in groups {
        if sum.iter().all(|&v| v == 0.0) {
            log::warn!("group `{key}` has an all-zero term vector and is dropped");
            dropped.push(key);
            continue;
        }
        // carry metadata that is constant across the group
        let mut meta = DocumentMeta::new(&key);
        for (k, v) in &members[0].metadata {
            if members.iter().all(|m| m.metadata.get(k) == Some(v)) {
                meta.metadata.insert(k.clone(), v.clone());
            }
        }
        docs.push(meta);
        values.extend(sum);
    }
    Ok(Aggregated {
        dtm: DocumentTermMatrix::new(docs, n_terms, values)?,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Descriptor, Keypoint};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn wk(bits: [u64; 4], weight: f64) -> WeightedKeypoint {
        WeightedKeypoint {
            keypoint: Keypoint { x: 16, y: 16, response: 0.0 },
            descriptor: Descriptor { bits },
            weight,
        }
    }

    fn random_points(seed: u64, n: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dim).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let weights = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        (data, weights)
    }

    #[test]
    fn k_equals_n_recovers_points() {
        let data = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let points = Points::new(&data, 2).unwrap();
        let cfg = KMeansConfig { k: 4, max_iters: 50, seed: 3, tolerance: 1e-6 };
        let fit = weighted_kmeans(points, &[1.0; 4], &cfg).unwrap();
        assert_eq!(fit.objective(), 0.0);
        let mut got = fit.centroids.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<Vec<f64>> = data.chunks(2).map(|c| c.to_vec()).collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn planted_clusters_match_exhaustive_partition() {
        // two tight Hamming clusters in 12 dimensions, far apart
        let a = [0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.];
        let b = [1., 1., 1., 1., 1., 1., 1., 1., 1., 1., 1., 1.];
        let flip = |mut v: [f64; 12], i: usize| {
            v[i] = 1.0 - v[i];
            v
        };
        let rows: [[f64; 12]; 6] = [a, flip(a, 3), flip(a, 7), b, flip(b, 0), flip(b, 11)];
        let data: Vec<f64> = rows.concat();
        let points = Points::new(&data, 12).unwrap();
        // brute force over all two-block partitions
        let cost = |mask: u32| -> f64 {
            let mut total = 0.0;
            for side in [true, false] {
                let members: Vec<usize> = (0..6).filter(|i| ((mask >> i) & 1 == 1) == side).collect();
                if members.is_empty() {
                    return f64::INFINITY;
                }
                let mean: Vec<f64> = (0..12)
                    .map(|d| members.iter().map(|&i| rows[i][d]).sum::<f64>() / members.len() as f64)
                    .collect();
                total += members.iter().map(|&i| squared_distance(&rows[i], &mean)).sum::<f64>();
            }
            total
        };
        let best = (1..63u32).min_by(|a, b| cost(*a).total_cmp(&cost(*b))).unwrap();
        let cfg = KMeansConfig { k: 2, max_iters: 50, seed: 1, tolerance: 1e-9 };
        let fit = weighted_kmeans(points, &[1.0; 6], &cfg).unwrap();
        let same_side = |i: usize, j: usize| ((best >> i) & 1) == ((best >> j) & 1);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(fit.assignments[i] == fit.assignments[j], same_side(i, j));
            }
        }
        assert!((fit.objective() - cost(best)).abs() < 1e-12);
    }

    #[test]
    fn errors_on_too_few_weighted_points() {
        let data = vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let points = Points::new(&data, 2).unwrap();
        let cfg = KMeansConfig { k: 2, max_iters: 10, seed: 0, tolerance: 1e-6 };
        assert!(matches!(
            weighted_kmeans(points, &[1.0, 0.0, 0.0], &cfg),
            Err(Error::InsufficientFeatures { needed: 2, found: 1 })
        ));
        assert!(weighted_kmeans(points, &[0.0; 3], &cfg).is_err());
    }

    #[test]
    fn zero_weight_points_do_not_move_centroids() {
        let (data, mut weights) = random_points(4, 60, 16);
        let points = Points::new(&data, 16).unwrap();
        let cfg = KMeansConfig { k: 3, max_iters: 30, seed: 9, tolerance: 1e-9 };
        for w in weights.iter_mut().skip(40) {
            *w = 0.0;
        }
        let fit = weighted_kmeans(points, &weights, &cfg).unwrap();
        let sub = Points::new(&data[..40 * 16], 16).unwrap();
        let fit_sub = weighted_kmeans(sub, &weights[..40], &cfg).unwrap();
        assert_eq!(fit.centroids, fit_sub.centroids);
    }

    #[test]
    fn quantize_examples() {
        let vocab = Vocabulary {
            format: VOCABULARY_FORMAT.into(),
            k: 3,
            centroids: vec![vec![0.0; 256], vec![0.5; 256], vec![1.0; 256]],
            training_seed: 0,
            brief_seed: 0,
            weighting: WeightingStages::BOTH,
        };
        let ones = [u64::MAX; 4];
        let feats = vec![wk(ones, 0.5), wk(ones, 0.5), wk(ones, 1.0)];
        assert_eq!(quantize(&feats, &vocab, true).unwrap(), vec![0.0, 0.0, 2.0]);
        assert_eq!(quantize(&feats, &vocab, false).unwrap(), vec![0.0, 0.0, 3.0]);
        assert!(matches!(quantize(&[], &vocab, true), Err(Error::EmptyFeatures)));
        let round = Vocabulary::from_json(&vocab.to_json().unwrap()).unwrap();
        assert_eq!(round, vocab);
    }

    #[test]
    fn aggregation_examples() {
        let row = |id: &str, outlet: &str, terms: Vec<f64>| TermRow {
            document: DocumentMeta::new(id).with("outlet", outlet).with("issue", "climate"),
            terms,
        };
        let agg = aggregate_documents(&[row("a1", "o1", vec![1.0, 0.0]), row("a2", "o1", vec![0.0, 2.0])], "outlet").unwrap();
        assert_eq!(agg.dtm.n_docs(), 1);
        assert_eq!(agg.dtm.row(0), &[1.0, 2.0]);
        assert_eq!(agg.dtm.documents()[0].metadata.get("issue").map(String::as_str), Some("climate"));

        // 8 outlets x 3 articles, article j of outlet o has vector [o, j, o*j]
        let mut rows = Vec::new();
        for o in 0..8 {
            for j in 1..=3 {
                let (of, jf) = (f64::from(o), f64::from(j));
                rows.push(row(&format!("{o}-{j}"), &format!("outlet{o}"), vec![of, jf, of * jf]));
            }
        }
        let agg = aggregate_documents(&rows, "outlet").unwrap();
        assert_eq!(agg.dtm.n_docs(), 8);
        for o in 0..8 {
            let of = f64::from(o);
            assert_eq!(agg.dtm.row(o as usize), &[3.0 * of, 6.0, 6.0 * of]);
        }

        let missing = TermRow { document: DocumentMeta::new("x"), terms: vec![1.0] };
        assert!(matches!(
            aggregate_documents(&[missing], "outlet"),
            Err(Error::MissingGroupKey { .. })
        ));
        let zero = aggregate_documents(&[row("z", "o0", vec![0.0, 0.0]), row("y", "o1", vec![1.0, 1.0])], "outlet").unwrap();
        assert_eq!(zero.dropped, vec!["o0".to_string()]);
        assert_eq!(zero.dtm.n_docs(), 1);
    }

    #[test]
    fn dtm_csv_round_trip() {
        let docs = vec![
            DocumentMeta::new("d1").with("outlet", "left"),
            DocumentMeta::new("d2").with("outlet", "right"),
        ];
        let dtm = DocumentTermMatrix::from_rows(docs, &[vec![1.5, 0.0, 2.0], vec![0.0, 3.0, 0.25]]).unwrap();
        let mut buf = Vec::new();
        dtm.write_csv(&mut buf).unwrap();
        let back = DocumentTermMatrix::read_csv(buf.as_slice(), &["outlet"]).unwrap();
        assert_eq!(back, dtm);
    }

    #[test]
    fn dtm_rejects_empty_rows() {
        let docs = vec![DocumentMeta::new("a"), DocumentMeta::new("b")];
        assert!(matches!(
            DocumentTermMatrix::from_rows(docs, &[vec![1.0, 0.0], vec![0.0, 0.0]]),
            Err(Error::DegenerateMatrix(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn objective_never_increases(seed in any::<u64>(), k in 2usize..6) {
            let (data, weights) = random_points(seed, 50, 12);
            let points = Points::new(&data, 12).unwrap();
            let cfg = KMeansConfig { k, max_iters: 40, seed, tolerance: 1e-9 };
            let fit = weighted_kmeans(points, &weights, &cfg).unwrap();
            for pair in fit.objective_trace.windows(2) {
                prop_assert!(pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-12);
            }
            for c in &fit.centroids {
                prop_assert!(c.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }

        #[test]
        fn weight_scaling_scales_terms(seed in any::<u64>(), c in 0.1f64..10.0) {
            let (data, weights) = random_points(seed, 40, 256);
            let feats: Vec<WeightedKeypoint> = data
                .chunks(256)
                .zip(&weights)
                .map(|(bits, &w)| {
                    let mut words = [0u64; 4];
                    for (i, b) in bits.iter().enumerate() {
                        if *b == 1.0 { words[i / 64] |= 1 << (i % 64); }
                    }
                    wk(words, w)
                })
                .collect();
            let scaled: Vec<WeightedKeypoint> = feats.iter().map(|f| WeightedKeypoint { weight: f.weight * c, ..*f }).collect();
            let cfg = KMeansConfig { k: 4, max_iters: 20, seed, tolerance: 1e-9 };
            let (v1, f1) = build_vocabulary(&feats, &cfg, 0, WeightingStages::BOTH).unwrap();
            let (_, f2) = build_vocabulary(&scaled, &cfg, 0, WeightingStages::BOTH).unwrap();
            prop_assert_eq!(&f1.assignments, &f2.assignments);
            let t1 = quantize(&feats, &v1, true).unwrap();
            let t2 = quantize(&scaled, &v1, true).unwrap();
            for (a, b) in t1.iter().zip(&t2) {
                prop_assert!((a * c - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }
}
