//! Representation geometry: principal angles between manifold subspaces, shared
//! variance, centroid similarity and gradient coherence.
//!
//! Each statistic comes back as a [`SimilarityDistributions`] that keeps the raw
//! same-class and cross-class values, so the histograms can be redrawn elsewhere.

use serde::Serialize;

use crate::capacity::PointManifold;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, svd};
use crate::rng::RngStream;
use crate::stats;
use crate::trainer::{augmented_views, batch_gradient, AugmentationSpec, MlpEncoder, ParamGroup, SceneDataset};
use crate::Matrix;

const ORTHONORMAL_TOL: f64 = 1e-9;
/// Fraction of variance the default principal subspace must explain.
pub const VARIANCE_TARGET: f64 = 0.9;
pub const MAX_DEFAULT_RANK: usize = 10;

/// Two subspaces of the same ambient space, each given by orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspacePair {
    basis_a: Matrix,
    basis_b: Matrix,
}

impl SubspacePair {
    pub fn new(basis_a: Matrix, basis_b: Matrix) -> Result<Self> {
        if basis_a.rows() != basis_b.rows() {
            return Err(Error::contract(format!("bases live in R^{} and R^{}", basis_a.rows(), basis_b.rows())));
        }
        for (name, b) in [("a", &basis_a), ("b", &basis_b)] {
            if b.cols() == 0 || b.cols() > b.rows() {
                return Err(Error::contract(format!("basis {name} has {} columns in R^{}", b.cols(), b.rows())));
            }
            let defect = b.orthonormality_defect();
            if defect > ORTHONORMAL_TOL {
                return Err(Error::contract(format!("basis {name} is not orthonormal (defect {defect:.2e})")));
            }
        }
        Ok(Self { basis_a, basis_b })
    }

    pub fn basis_a(&self) -> &Matrix {
        &self.basis_a
    }

    pub fn basis_b(&self) -> &Matrix {
        &self.basis_b
    }

    /// Number of principal angles, the smaller of the two subspace dimensions.
    pub fn k(&self) -> usize {
        self.basis_a.cols().min(self.basis_b.cols())
    }
}

/// Principal angles in ascending order.
pub fn principal_angles(pair: &SubspacePair) -> Result<Vec<f64>> {
    let cross = pair.basis_a.t_matmul(&pair.basis_b)?;
    let s = svd(&cross)?.s;
    Ok(s.iter().take(pair.k()).map(|&c| c.clamp(0.0, 1.0).acos()).collect())
}

fn centered_points(m: &PointManifold) -> Matrix {
    let c = m.centroid();
    let p = m.points();
    Matrix::from_fn(p.rows(), p.cols(), |i, j| p[(i, j)] - c[j])
}

/// Smallest number of leading components whose variance reaches
/// [`VARIANCE_TARGET`], capped at [`MAX_DEFAULT_RANK`].
pub fn default_rank(singular_values: &[f64]) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc >= VARIANCE_TARGET * total {
            return (i + 1).min(MAX_DEFAULT_RANK);
        }
    }
    singular_values.len().clamp(1, MAX_DEFAULT_RANK)
}

/// Orthonormal `d × k` basis of the manifold's top principal directions. `k`
/// defaults to [`default_rank`].
pub fn principal_subspace(m: &PointManifold, k: Option<usize>) -> Result<Matrix> {
    let centered = centered_points(m);
    let dec = svd(&centered)?;
    if dec.s.first().is_none_or(|&s| s == 0.0) {
        return Err(Error::degenerate("zero-variance manifold has no principal subspace"));
    }
    let k = k.unwrap_or_else(|| default_rank(&dec.s));
    if k == 0 || k > m.dim() || k > dec.v.cols() {
        return Err(Error::contract(format!("subspace rank {k} out of range for {} points in R^{}", m.len(), m.dim())));
    }
    Ok(dec.v.leading_columns(k))
}

/// Fraction of the source's centered variance kept by projecting onto the
/// target's top-`k` principal subspace.
pub fn shared_variance(source: &PointManifold, target: &PointManifold, k: Option<usize>) -> Result<f64> {
    if source.dim() != target.dim() {
        return Err(Error::contract("shared variance between manifolds of different dimension"));
    }
    let x = centered_points(source);
    let total = x.frobenius_norm().powi(2);
    if total == 0.0 {
        return Err(Error::degenerate("zero-variance source manifold"));
    }
    let basis = principal_subspace(target, k)?;
    let kept = x.matmul(&basis)?.frobenius_norm().powi(2);
    Ok((kept / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityDistributions {
    pub metric: String,
    pub within_class: Vec<f64>,
    pub across_class: Vec<f64>,
    /// Pairs left out because a vector had zero norm.
    pub excluded: usize,
}

impl SimilarityDistributions {
    fn empty(metric: impl Into<String>) -> Self {
        Self { metric: metric.into(), within_class: Vec::new(), across_class: Vec::new(), excluded: 0 }
    }

    pub fn mean_within(&self) -> f64 {
        stats::mean(&self.within_class)
    }

    pub fn mean_across(&self) -> f64 {
        stats::mean(&self.across_class)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    fn push(&mut self, same: bool, value: f64) {
        if same {
            self.within_class.push(value);
        } else {
            self.across_class.push(value);
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let denom = norm(a) * norm(b);
    (denom > 0.0).then(|| (dot(a, b) / denom).clamp(-1.0, 1.0))
}

fn labels_of(manifolds: &[PointManifold]) -> Result<Vec<usize>> {
    let labels: Vec<usize> = manifolds
        .iter()
        .map(|m| m.label().ok_or_else(|| Error::contract("similarity statistics need labelled manifolds")))
        .collect::<Result<_>>()?;
    let mut classes = labels.clone();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::contract("similarity statistics need at least two classes"));
    }
    for c in classes {
        if labels.iter().filter(|&&l| l == c).count() < 2 {
            return Err(Error::contract(format!("class {c} has fewer than two manifolds")));
        }
    }
    Ok(labels)
}

/// How centroids are preprocessed before taking cosines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    None,
    /// Subtract the mean centroid first; used for raw inputs, whose shared offset
    /// would otherwise push every cosine toward one.
    GlobalMean,
}

/// Pairwise cosine similarity of manifold centroids, split by class agreement.
pub fn centroid_similarity_stats(manifolds: &[PointManifold], centering: Centering) -> Result<SimilarityDistributions> {
    let labels = labels_of(manifolds)?;
    let mut centroids: Vec<Vec<f64>> = manifolds.iter().map(PointManifold::centroid).collect();
    if centering == Centering::GlobalMean {
        let n = centroids.len() as f64;
        let dim = centroids[0].len();
        let mean: Vec<f64> = (0..dim).map(|j| centroids.iter().map(|c| c[j]).sum::<f64>() / n).collect();
        centroids.iter_mut().for_each(|c| c.iter_mut().zip(&mean).for_each(|(a, m)| *a -= m));
    }
    let metric = match centering {
        Centering::None => "centroid_cosine",
        Centering::GlobalMean => "centroid_cosine_centered",
    };
    let mut out = SimilarityDistributions::empty(metric);
    for a in 0..centroids.len() {
        for b in a + 1..centroids.len() {
            match cosine(&centroids[a], &centroids[b]) {
                Some(c) => out.push(labels[a] == labels[b], c),
                None => out.excluded += 1,
            }
        }
    }
    Ok(out)
}

/// Mean principal angle (radians) between the principal subspaces of every pair.
pub fn subspace_angle_stats(manifolds: &[PointManifold], k: Option<usize>) -> Result<SimilarityDistributions> {
    let labels = labels_of(manifolds)?;
    let bases: Vec<Matrix> = manifolds.iter().map(|m| principal_subspace(m, k)).collect::<Result<_>>()?;
    let mut out = SimilarityDistributions::empty("mean_principal_angle");
    for a in 0..bases.len() {
        for b in a + 1..bases.len() {
            let angles = principal_angles(&SubspacePair::new(bases[a].clone(), bases[b].clone())?)?;
            out.push(labels[a] == labels[b], stats::mean(&angles));
        }
    }
    Ok(out)
}

/// Shared variance over every ordered pair of distinct manifolds.
pub fn shared_variance_stats(manifolds: &[PointManifold], k: Option<usize>) -> Result<SimilarityDistributions> {
    let labels = labels_of(manifolds)?;
    let mut out = SimilarityDistributions::empty("shared_variance");
    for a in 0..manifolds.len() {
        for b in 0..manifolds.len() {
            if a != b {
                out.push(labels[a] == labels[b], shared_variance(&manifolds[a], &manifolds[b], k)?);
            }
        }
    }
    Ok(out)
}

/// Encoder responses to `k` augmentations of each listed scene, one labelled
/// manifold per scene. With no encoder the raw augmented inputs are returned.
pub fn augmentation_manifolds(
    encoder: Option<&MlpEncoder>,
    dataset: &SceneDataset,
    indices: &[usize],
    k: usize,
    spec: &AugmentationSpec,
    rng: &mut RngStream,
) -> Result<Vec<PointManifold>> {
    let views = augmented_views(dataset, indices, k, spec, rng);
    let feats = match encoder {
        Some(e) => e.encode(&views)?,
        None => views,
    };
    split_manifolds(&feats, k, indices.iter().map(|&i| dataset.labels[i]))
}

/// Every layer's activations (input first, output last) for the same views,
/// grouped into labelled manifolds of `k` rows.
pub fn layer_manifolds(encoder: &MlpEncoder, views: &Matrix, k: usize, labels: &[usize]) -> Result<Vec<(String, Vec<PointManifold>)>> {
    let (_, cache) = encoder.forward(views)?;
    let n_layers = cache.activations().len();
    cache
        .activations()
        .iter()
        .enumerate()
        .map(|(l, act)| {
            let name = match l {
                0 => "input".to_string(),
                l if l + 1 == n_layers => "output".to_string(),
                l => format!("hidden{l}"),
            };
            Ok((name, split_manifolds(act, k, labels.iter().copied())?))
        })
        .collect()
}

fn split_manifolds(rows: &Matrix, k: usize, labels: impl Iterator<Item = usize>) -> Result<Vec<PointManifold>> {
    if k == 0 || !rows.rows().is_multiple_of(k) {
        return Err(Error::contract(format!("{} rows do not split into manifolds of {k}", rows.rows())));
    }
    let dim = rows.cols();
    labels
        .enumerate()
        .take(rows.rows() / k)
        .map(|(b, label)| {
            let data = rows.as_slice()[b * k * dim..(b + 1) * k * dim].to_vec();
            PointManifold::new(Matrix::new(k, dim, data)?, Some(label))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceConfig {
    pub classes: Vec<usize>,
    pub batches_per_class: usize,
    pub batch_b: usize,
    pub views_k: usize,
    pub lambda: f64,
    pub augmentation: AugmentationSpec,
}

/// Cosine similarity between the loss gradients of single-class batches, all
/// taken at the same parameters. One distribution per requested parameter group.
pub fn gradient_coherence(
    encoder: &MlpEncoder,
    dataset: &SceneDataset,
    config: &CoherenceConfig,
    groups: &[ParamGroup],
    rng: &mut RngStream,
) -> Result<Vec<SimilarityDistributions>> {
    let mut classes = config.classes.clone();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::contract("gradient coherence needs at least two classes"));
    }
    if config.batches_per_class == 0 || config.batch_b < 2 {
        return Err(Error::contract("gradient coherence needs batches of at least two manifolds"));
    }
    let mut tagged: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
    for &c in &classes {
        let members = dataset.indices_of_class(c);
        if members.is_empty() {
            return Err(Error::contract(format!("class {c} is absent from the dataset")));
        }
        for _ in 0..config.batches_per_class {
            let batch: Vec<usize> = if members.len() >= config.batch_b {
                rng.sample_indices(members.len(), config.batch_b).into_iter().map(|i| members[i]).collect()
            } else {
                (0..config.batch_b).map(|_| members[rng.below(members.len())]).collect()
            };
            let views = augmented_views(dataset, &batch, config.views_k, &config.augmentation, rng);
            let (_, grads) = batch_gradient(encoder, &views, config.views_k, config.lambda)?;
            tagged.push((c, groups.iter().map(|&g| grads.flatten_group(g)).collect()));
        }
    }
    Ok(groups
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let mut out = SimilarityDistributions::empty(format!("gradient_cosine_{}", group_name(*g)));
            for a in 0..tagged.len() {
                for b in a + 1..tagged.len() {
                    match cosine(&tagged[a].1[gi], &tagged[b].1[gi]) {
                        Some(c) => out.push(tagged[a].0 == tagged[b].0, c),
                        None => out.excluded += 1,
                    }
                }
            }
            out
        })
        .collect())
}

fn group_name(g: ParamGroup) -> &'static str {
    match g {
        ParamGroup::All => "all",
        ParamGroup::FirstLayer => "first_layer",
        ParamGroup::LastLayer => "last_layer",
        ParamGroup::Backbone => "backbone",
        ParamGroup::Projector => "projector",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{make_dataset, DatasetConfig};
    use approx::assert_abs_diff_eq;

    fn axis_basis(d: usize, axes: &[usize]) -> Matrix {
        Matrix::from_fn(d, axes.len(), |i, j| if i == axes[j] { 1.0 } else { 0.0 })
    }

    #[test]
    fn trivial_angles() {
        let same = SubspacePair::new(axis_basis(4, &[0, 1]), axis_basis(4, &[1, 0])).unwrap();
        principal_angles(&same).unwrap().iter().for_each(|a| assert_abs_diff_eq!(*a, 0.0, epsilon = 1e-7));
        let orth = SubspacePair::new(axis_basis(3, &[0]), axis_basis(3, &[1])).unwrap();
        assert_abs_diff_eq!(principal_angles(&orth).unwrap()[0], std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_bases() {
        let skew = Matrix::from_fn(3, 2, |i, j| if i == 0 || i == j { 1.0 } else { 0.0 });
        assert!(matches!(SubspacePair::new(skew, axis_basis(3, &[0])), Err(Error::Contract(_))));
        assert!(SubspacePair::new(axis_basis(3, &[0]), axis_basis(4, &[0])).is_err());
    }

    #[test]
    fn angles_ascend_and_stay_in_range() {
        let mut rng = RngStream::new(6);
        let pair = SubspacePair::new(rng.orthonormal_frame(10, 3), rng.orthonormal_frame(10, 4)).unwrap();
        let a = principal_angles(&pair).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|&x| (0.0..=std::f64::consts::FRAC_PI_2).contains(&x)));
    }

    #[test]
    fn shared_variance_trivial_cases() {
        let line = |axis: usize| {
            PointManifold::new(Matrix::from_fn(5, 3, |i, j| if j == axis { i as f64 } else { 0.0 }), None).unwrap()
        };
        assert_abs_diff_eq!(shared_variance(&line(0), &line(1), Some(1)).unwrap(), 0.0, epsilon = 1e-12);
        let mut rng = RngStream::new(1);
        let m = PointManifold::new(rng.gaussian_matrix(20, 4), None).unwrap();
        assert_abs_diff_eq!(shared_variance(&m, &m, Some(4)).unwrap(), 1.0, epsilon = 1e-12);
        let flat = PointManifold::new(Matrix::from_fn(3, 3, |_, j| j as f64), None).unwrap();
        assert!(matches!(shared_variance(&flat, &m.clone(), Some(1)), Err(Error::Contract(_) | Error::Degenerate(_))));
    }

    #[test]
    fn default_rank_rule() {
        assert_eq!(default_rank(&[3.0, 0.5, 0.1]), 1);
        assert_eq!(default_rank(&[1.0, 1.0, 1.0]), 3);
        assert_eq!(default_rank(&[1.0; 20]), MAX_DEFAULT_RANK);
    }

    #[test]
    fn centroid_similarity_trivial_cases() {
        let point = |v: [f64; 3], label| PointManifold::new(Matrix::from_rows(&[v.to_vec()]).unwrap(), Some(label)).unwrap();
        let ms = vec![point([1.0, 0.0, 0.0], 0), point([1.0, 0.0, 0.0], 0), point([0.0, 1.0, 0.0], 1), point([0.0, 1.0, 0.0], 1)];
        let s = centroid_similarity_stats(&ms, Centering::None).unwrap();
        assert_eq!(s.within_class, vec![1.0, 1.0]);
        assert_eq!(s.across_class, vec![0.0; 4]);
        let single_class: Vec<PointManifold> = ms.iter().take(2).cloned().collect();
        assert!(centroid_similarity_stats(&single_class, Centering::None).is_err());
        assert!(s.to_json().unwrap().contains("within_class"));
    }

    #[test]
    fn identical_batches_have_unit_coherence() {
        let ds = make_dataset(&DatasetConfig { n_per_class: 2, ..Default::default() }, &mut RngStream::new(0)).unwrap();
        let enc = MlpEncoder::new(&[ds.ambient_dim(), 16, 8], &mut RngStream::new(1)).unwrap();
        let cfg = CoherenceConfig {
            classes: vec![0, 1],
            batches_per_class: 2,
            batch_b: 2,
            views_k: 3,
            lambda: 0.0,
            augmentation: AugmentationSpec::identity(),
        };
        // with two scenes per class and no augmentation both batches of a class coincide
        let out = gradient_coherence(&enc, &ds, &cfg, &[ParamGroup::All, ParamGroup::LastLayer], &mut RngStream::new(2)).unwrap();
        assert_eq!(out.len(), 2);
        for d in &out {
            d.within_class.iter().for_each(|&c| assert_abs_diff_eq!(c, 1.0, epsilon = 1e-9));
            assert_eq!(d.within_class.len() + d.across_class.len() + d.excluded, 6);
        }
    }
}
