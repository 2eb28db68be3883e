//! Displacement-field point cloud reconstruction: recover a clean cloud
//! from structured-noise corruption. Scene patches become tokens, the mesh
//! cloud becomes proxy features, a learned pairwise weighting fuses the two,
//! and a head predicts one displacement per patch center which is then
//! propagated to the remaining points by inverse-distance weighting.
//!
//! Token mixers (per-token residual dense blocks over a mean-pooled global
//! context) stand in for the transformer encoder and decoder; a single
//! edge-convolution layer stands in for the full graph network on the mesh
//! side.

mod train;

pub use train::{
    backward_scene, chamfer_gradient, forward_scene, load_model, loss_and_grads, save_model,
    train_reconstruction, ReconGrads, ReconSample, SceneTrace,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{farthest_point_sample, k_nearest, KdTree, Point3, PointCloud};
use crate::nnet::{pool_max_argmax, pool_mean, Activation, Network, NnetError};

/// Distance below which a point adopts a center's displacement verbatim
/// instead of inverse-distance weighting.
pub const PROPAGATE_GUARD: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error("forward pass produced non-finite points")]
    NonFiniteForward,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
}

/// Architecture hyperparameters; mirrors the weight-file metadata block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconHyperparams {
    /// I — number of patch centers.
    pub centers: usize,
    /// J — number of mesh proxies.
    pub proxies: usize,
    /// m — points per patch.
    pub patch_size: usize,
    /// K — centers each remaining point averages over.
    pub propagate_k: usize,
    /// d — token / proxy feature dimension.
    pub feature_dim: usize,
    /// Neighbors per point in the mesh edge convolution.
    pub edge_neighbors: usize,
    /// Coordinates are multiplied by this before entering any network, so
    /// decimeter-scale scenes land in the active range of the
    /// nonlinearities. Displacements stay in meters.
    pub input_scale: f64,
}

impl Default for ReconHyperparams {
    fn default() -> Self {
        Self {
            centers: 64,
            proxies: 64,
            patch_size: 32,
            propagate_k: 4,
            feature_dim: 64,
            edge_neighbors: 8,
            input_scale: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    /// Indices into the scene cloud, in FPS order.
    pub center_indices: Vec<usize>,
    /// Per center, the indices of its kNN patch (the center itself first).
    pub membership: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub tokens: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxySet {
    pub features: Vec<Vec<f64>>,
    pub source_points: Vec<Point3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedTokens {
    pub tokens: Vec<Vec<f64>>,
    /// Pairwise fusion weights, `weights[i][j]` for token i and proxy j.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField(pub Vec<[f64; 3]>);

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionModel {
    /// Per-point patch encoder on center-relative coordinates, 3 → d.
    pub patch_encoder: Network,
    /// Positional encoding of the patch center, 3 → d.
    pub positional_encoder: Network,
    /// Residual mixer applied to the encoded tokens (encoder substitute).
    pub encoder_mixer: Network,
    /// Pairwise edge network on (x_i, x_j − x_i), 6 → d.
    pub mesh_encoder: Network,
    /// Scores one (token, proxy) pair, 2d → 1.
    pub fusion_scorer: Network,
    /// Combines a token with its weighted proxy sum, 2d → d.
    pub fusion_combiner: Network,
    /// Residual mixer applied to the fused tokens (decoder substitute).
    pub decoder_mixer: Network,
    /// Per-center displacement head, (3+d) → 3.
    pub displacement_head: Network,
    pub params: ReconHyperparams,
}

impl ReconstructionModel {
    pub fn new(params: ReconHyperparams, seed: u64) -> ReconstructionModel {
        let d = params.feature_dim;
        let two = [Activation::Relu, Activation::Identity];
        // Zero-initialized head: the untrained model is the identity
        // reconstruction, so training learns displacements as residuals.
        let mut displacement_head =
            Network::new(&[3 + d, 3], &[Activation::Identity], seed.wrapping_add(7));
        for l in &mut displacement_head.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let three = [Activation::Relu, Activation::Relu, Activation::Identity];
        ReconstructionModel {
            patch_encoder: Network::new(&[3, d, d], &two, seed),
            positional_encoder: Network::new(&[3, d, d, d], &three, seed.wrapping_add(1)),
            encoder_mixer: Network::new(&[2 * d, d, d], &two, seed.wrapping_add(2)),
            mesh_encoder: Network::new(&[6, d, d], &two, seed.wrapping_add(3)),
            fusion_scorer: Network::new(&[2 * d, 1], &[Activation::Identity], seed.wrapping_add(4)),
            fusion_combiner: Network::new(&[2 * d, d], &[Activation::Identity], seed.wrapping_add(5)),
            decoder_mixer: Network::new(&[2 * d, d, d], &two, seed.wrapping_add(6)),
            displacement_head,
            params,
        }
    }

    pub fn validate(&self) -> Result<(), ReconstructError> {
        let d = self.params.feature_dim;
        let p = &self.params;
        if p.centers == 0 || p.proxies == 0 || p.patch_size == 0 || p.propagate_k == 0 {
            return Err(ReconstructError::InvalidInput("hyperparameters must be >= 1".into()));
        }
        let checks = [
            ("patch_encoder", &self.patch_encoder, 3, d),
            ("positional_encoder", &self.positional_encoder, 3, d),
            ("encoder_mixer", &self.encoder_mixer, 2 * d, d),
            ("mesh_encoder", &self.mesh_encoder, 6, d),
            ("fusion_scorer", &self.fusion_scorer, 2 * d, 1),
            ("fusion_combiner", &self.fusion_combiner, 2 * d, d),
            ("decoder_mixer", &self.decoder_mixer, 2 * d, d),
            ("displacement_head", &self.displacement_head, 3 + d, 3),
        ];
        for (name, net, input, output) in checks {
            if net.input_dim() != input || net.output_dim() != output {
                return Err(ReconstructError::InvalidInput(format!(
                    "{name} must be {input}→{output}, got {}→{}",
                    net.input_dim(),
                    net.output_dim()
                )));
            }
        }
        Ok(())
    }

    fn components(&self) -> [(&'static str, &Network); 8] {
        [
            ("patch_encoder", &self.patch_encoder),
            ("positional_encoder", &self.positional_encoder),
            ("encoder_mixer", &self.encoder_mixer),
            ("mesh_encoder", &self.mesh_encoder),
            ("fusion_scorer", &self.fusion_scorer),
            ("fusion_combiner", &self.fusion_combiner),
            ("decoder_mixer", &self.decoder_mixer),
            ("displacement_head", &self.displacement_head),
        ]
    }
}

/// FPS centers plus one kNN patch per center.
pub fn patchify(scene: &PointCloud, centers: usize, patch_size: usize) -> Result<PatchSet, ReconstructError> {
    if scene.len() < centers {
        return Err(ReconstructError::InvalidInput(format!(
            "cloud of {} points cannot host {centers} patch centers",
            scene.len()
        )));
    }
    if patch_size == 0 || patch_size > scene.len() {
        return Err(ReconstructError::InvalidInput(format!(
            "patch size {patch_size} out of range for cloud of {}",
            scene.len()
        )));
    }
    let center_indices = farthest_point_sample(scene, centers, 0)
        .map_err(|e| ReconstructError::InvalidInput(e.to_string()))?;
    let membership = center_indices
        .iter()
        .map(|&c| k_nearest(scene, scene.points[c], patch_size))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ReconstructError::InvalidInput(e.to_string()))?;
    Ok(PatchSet { center_indices, membership })
}

/// Residual token mixer: each token is augmented with the mean-pooled
/// context, passed through `net` and added back.
fn mix_tokens(net: &Network, tokens: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NnetError> {
    let mean = pool_mean(tokens)?;
    tokens
        .iter()
        .map(|t| {
            let mut z = t.clone();
            z.extend_from_slice(&mean);
            let delta = net.forward(&z)?;
            Ok(t.iter().zip(&delta).map(|(a, b)| a + b).collect())
        })
        .collect()
}

/// Per patch: encode center-relative points, max-pool, add the positional
/// encoding of the center, then mix all tokens jointly.
pub fn encode_patches(
    model: &ReconstructionModel,
    patches: &PatchSet,
    scene: &PointCloud,
) -> Result<TokenSet, ReconstructError> {
    let mut raw = Vec::with_capacity(patches.center_indices.len());
    for (center_idx, members) in patches.center_indices.iter().zip(&patches.membership) {
        let center = scene.points[*center_idx];
        let scale = model.params.input_scale;
        let encoded: Vec<Vec<f64>> = members
            .iter()
            .map(|&p| {
                model
                    .patch_encoder
                    .forward(&scene.points[p].sub(center).scale(scale).to_array())
            })
            .collect::<Result<_, _>>()?;
        let (pooled, _) = pool_max_argmax(&encoded)?;
        let pos = model.positional_encoder.forward(&center.scale(scale).to_array())?;
        raw.push(pooled.iter().zip(&pos).map(|(a, b)| a + b).collect());
    }
    Ok(TokenSet { tokens: mix_tokens(&model.encoder_mixer, &raw)? })
}

pub(crate) fn edge_neighbor_indices(tree: &KdTree, points: &[Point3], i: usize, k: usize) -> Vec<usize> {
    let mut nn: Vec<usize> = tree
        .k_nearest(points[i], (k + 1).min(points.len()))
        .into_iter()
        .map(|(idx, _)| idx)
        .collect();
    if let Some(pos) = nn.iter().position(|&idx| idx == i) {
        nn.remove(pos);
    }
    nn.truncate(k);
    nn
}

/// Edge-convolution feature of mesh point `i`: max over its k nearest
/// neighbors of the pairwise network on (x_i, x_j − x_i).
fn edge_feature(
    model: &ReconstructionModel,
    points: &[Point3],
    tree: &KdTree,
    i: usize,
) -> Result<Vec<f64>, NnetError> {
    let neighbors = edge_neighbor_indices(tree, points, i, model.params.edge_neighbors);
    let scale = model.params.input_scale;
    let feats: Vec<Vec<f64>> = neighbors
        .iter()
        .map(|&j| {
            let xi = points[i].scale(scale);
            let rel = points[j].sub(points[i]).scale(scale);
            let input = [xi.x, xi.y, xi.z, rel.x, rel.y, rel.z];
            model.mesh_encoder.forward(&input)
        })
        .collect::<Result<_, _>>()?;
    Ok(pool_max_argmax(&feats)?.0)
}

/// Edge-convolution features at the J FPS-selected mesh points, in FPS
/// order. A single edge layer's features are per-point independent, so only
/// the selected points are evaluated; the result is identical to encoding
/// the full cloud and then selecting.
pub fn mesh_proxies(
    model: &ReconstructionModel,
    mesh_cloud: &PointCloud,
    proxies: usize,
) -> Result<ProxySet, ReconstructError> {
    if mesh_cloud.len() < proxies {
        return Err(ReconstructError::InvalidInput(format!(
            "mesh cloud of {} points cannot supply {proxies} proxies",
            mesh_cloud.len()
        )));
    }
    if mesh_cloud.len() < model.params.edge_neighbors + 1 {
        return Err(ReconstructError::InvalidInput(format!(
            "mesh cloud of {} points too small for {} edge neighbors",
            mesh_cloud.len(),
            model.params.edge_neighbors
        )));
    }
    let selected = farthest_point_sample(mesh_cloud, proxies, 0)
        .map_err(|e| ReconstructError::InvalidInput(e.to_string()))?;
    let tree = KdTree::build(&mesh_cloud.points);
    let features = selected
        .iter()
        .map(|&i| edge_feature(model, &mesh_cloud.points, &tree, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ProxySet {
        features,
        source_points: selected.iter().map(|&i| mesh_cloud.points[i]).collect(),
    })
}

/// Learned fusion: score every (token, proxy) pair, combine each token with
/// its weighted proxy sum, then run the decoder-substitute mixer.
pub fn fuse(
    model: &ReconstructionModel,
    tokens: &TokenSet,
    proxies: &ProxySet,
) -> Result<FusedTokens, ReconstructError> {
    let d = model.params.feature_dim;
    let mut weights = Vec::with_capacity(tokens.tokens.len());
    let mut combined = Vec::with_capacity(tokens.tokens.len());
    for v in &tokens.tokens {
        if v.len() != d {
            return Err(ReconstructError::Nnet(NnetError::DimensionMismatch(
                "token dimension mismatch".into(),
            )));
        }
        let mut row = Vec::with_capacity(proxies.features.len());
        let mut weighted_sum = vec![0.0; d];
        for o in &proxies.features {
            let mut z = v.clone();
            z.extend_from_slice(o);
            let w = model.fusion_scorer.forward(&z)?[0];
            row.push(w);
            for (s, ov) in weighted_sum.iter_mut().zip(o) {
                *s += w * ov;
            }
        }
        let mut z = v.clone();
        z.extend_from_slice(&weighted_sum);
        combined.push(model.fusion_combiner.forward(&z)?);
        weights.push(row);
    }
    let tokens = mix_tokens(&model.decoder_mixer, &combined)?;
    Ok(FusedTokens { tokens, weights })
}

/// One displacement per center: head on (center ⊕ fused token).
pub fn predict_displacements(
    model: &ReconstructionModel,
    fused: &FusedTokens,
    centers: &[Point3],
) -> Result<DisplacementField, ReconstructError> {
    if fused.tokens.len() != centers.len() {
        return Err(ReconstructError::InvalidInput(format!(
            "{} fused tokens vs {} centers",
            fused.tokens.len(),
            centers.len()
        )));
    }
    let mut out = Vec::with_capacity(centers.len());
    let scale = model.params.input_scale;
    for (c, h) in centers.iter().zip(&fused.tokens) {
        let cs = c.scale(scale);
        let mut z = vec![cs.x, cs.y, cs.z];
        z.extend_from_slice(h);
        let d = model.displacement_head.forward(&z)?;
        out.push([d[0], d[1], d[2]]);
    }
    Ok(DisplacementField(out))
}

/// Per-point weighted assignment used by [`propagate`]; exposed to the
/// trainer so gradients can flow back to the per-center displacements.
pub(crate) fn propagate_assignments(
    scene: &PointCloud,
    centers: &[Point3],
    k: usize,
) -> Result<Vec<Vec<(usize, f64)>>, ReconstructError> {
    if k == 0 || k > centers.len() {
        return Err(ReconstructError::InvalidInput(format!(
            "K = {k} out of range for {} centers",
            centers.len()
        )));
    }
    let mut assignments = Vec::with_capacity(scene.len());
    for p in &scene.points {
        let mut order: Vec<(f64, usize)> = centers
            .iter()
            .enumerate()
            .map(|(i, c)| (p.distance(*c), i))
            .collect();
        order.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nearest = &order[..k];
        if nearest[0].0 < PROPAGATE_GUARD {
            // Coincident with a center: adopt that displacement exactly.
            assignments.push(vec![(nearest[0].1, 1.0)]);
            continue;
        }
        let alphas: Vec<f64> = nearest.iter().map(|(dist, _)| 1.0 / dist).collect();
        let total: f64 = alphas.iter().sum();
        assignments.push(
            nearest
                .iter()
                .zip(&alphas)
                .map(|((_, idx), a)| (*idx, a / total))
                .collect(),
        );
    }
    Ok(assignments)
}

/// Moves every point by the inverse-distance-weighted average displacement
/// of its K nearest centers; a point within [`PROPAGATE_GUARD`] of a center
/// (the centers themselves included) takes that center's displacement
/// verbatim. Order and count are preserved.
pub fn propagate(
    scene: &PointCloud,
    centers: &[Point3],
    field: &DisplacementField,
    k: usize,
) -> Result<PointCloud, ReconstructError> {
    if field.0.len() != centers.len() {
        return Err(ReconstructError::InvalidInput(format!(
            "{} displacements vs {} centers",
            field.0.len(),
            centers.len()
        )));
    }
    let assignments = propagate_assignments(scene, centers, k)?;
    let points = scene
        .points
        .iter()
        .zip(&assignments)
        .map(|(p, assigned)| {
            let mut shift = [0.0; 3];
            for (idx, w) in assigned {
                for a in 0..3 {
                    shift[a] += w * field.0[*idx][a];
                }
            }
            Point3::new(p.x + shift[0], p.y + shift[1], p.z + shift[2])
        })
        .collect();
    Ok(PointCloud { points, frame_tag: scene.frame_tag.clone() })
}

/// Full reconstruction: patchify → encode → proxies → fuse → displacements
/// → propagate. Output has the same point count and order as the input.
pub fn reconstruct(
    model: &ReconstructionModel,
    scene: &PointCloud,
    mesh_cloud: &PointCloud,
) -> Result<PointCloud, ReconstructError> {
    model.validate()?;
    let p = model.params;
    let patches = patchify(scene, p.centers, p.patch_size)?;
    let tokens = encode_patches(model, &patches, scene)?;
    let proxies = mesh_proxies(model, mesh_cloud, p.proxies)?;
    let fused = fuse(model, &tokens, &proxies)?;
    let centers: Vec<Point3> =
        patches.center_indices.iter().map(|&i| scene.points[i]).collect();
    let field = predict_displacements(model, &fused, &centers)?;
    propagate(scene, &centers, &field, p.propagate_k)
}
