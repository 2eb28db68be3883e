//! Chamfer-loss training for the reconstruction model. The forward pass
//! records light intermediates (tokens, weights, pooling argmaxes,
//! propagation assignments); the backward pass re-derives per-network
//! traces on demand and chains exact gradients through propagation, the
//! displacement head, both mixers, the fusion and both encoders. Chamfer
//! gradients hold the nearest-neighbor assignment fixed per forward pass.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    fuse, mesh_proxies, patchify, predict_displacements, propagate_assignments, ReconHyperparams,
    ReconstructError, ReconstructionModel,
};
use crate::geometry::{KdTree, Point3, PointCloud};
use crate::nnet::{
    pool_max_argmax, pool_mean, Network, NetworkGrad, TrainConfig, TrainReport, WeightDoc,
};

/// One training triple: the corrupted observation, the clean render and the
/// canonical mesh cloud.
#[derive(Debug, Clone)]
pub struct ReconSample {
    pub corrupted: PointCloud,
    pub clean: PointCloud,
    pub mesh_cloud: PointCloud,
}

/// Gradients for every component network.
#[derive(Debug, Clone)]
pub struct ReconGrads {
    pub patch_encoder: NetworkGrad,
    pub positional_encoder: NetworkGrad,
    pub encoder_mixer: NetworkGrad,
    pub mesh_encoder: NetworkGrad,
    pub fusion_scorer: NetworkGrad,
    pub fusion_combiner: NetworkGrad,
    pub decoder_mixer: NetworkGrad,
    pub displacement_head: NetworkGrad,
}

impl ReconGrads {
    pub fn zeros_like(model: &ReconstructionModel) -> ReconGrads {
        ReconGrads {
            patch_encoder: NetworkGrad::zeros_like(&model.patch_encoder),
            positional_encoder: NetworkGrad::zeros_like(&model.positional_encoder),
            encoder_mixer: NetworkGrad::zeros_like(&model.encoder_mixer),
            mesh_encoder: NetworkGrad::zeros_like(&model.mesh_encoder),
            fusion_scorer: NetworkGrad::zeros_like(&model.fusion_scorer),
            fusion_combiner: NetworkGrad::zeros_like(&model.fusion_combiner),
            decoder_mixer: NetworkGrad::zeros_like(&model.decoder_mixer),
            displacement_head: NetworkGrad::zeros_like(&model.displacement_head),
        }
    }

    pub fn add_assign(&mut self, other: &ReconGrads) {
        self.patch_encoder.add_assign(&other.patch_encoder);
        self.positional_encoder.add_assign(&other.positional_encoder);
        self.encoder_mixer.add_assign(&other.encoder_mixer);
        self.mesh_encoder.add_assign(&other.mesh_encoder);
        self.fusion_scorer.add_assign(&other.fusion_scorer);
        self.fusion_combiner.add_assign(&other.fusion_combiner);
        self.decoder_mixer.add_assign(&other.decoder_mixer);
        self.displacement_head.add_assign(&other.displacement_head);
    }

    pub fn scale(&mut self, s: f64) {
        self.patch_encoder.scale(s);
        self.positional_encoder.scale(s);
        self.encoder_mixer.scale(s);
        self.mesh_encoder.scale(s);
        self.fusion_scorer.scale(s);
        self.fusion_combiner.scale(s);
        self.decoder_mixer.scale(s);
        self.displacement_head.scale(s);
    }

    pub fn apply(&self, model: &mut ReconstructionModel, lr: f64) {
        model.patch_encoder.apply_gradient(&self.patch_encoder, lr);
        model.positional_encoder.apply_gradient(&self.positional_encoder, lr);
        model.encoder_mixer.apply_gradient(&self.encoder_mixer, lr);
        model.mesh_encoder.apply_gradient(&self.mesh_encoder, lr);
        model.fusion_scorer.apply_gradient(&self.fusion_scorer, lr);
        model.fusion_combiner.apply_gradient(&self.fusion_combiner, lr);
        model.decoder_mixer.apply_gradient(&self.decoder_mixer, lr);
        model.displacement_head.apply_gradient(&self.displacement_head, lr);
    }

    pub fn is_finite(&self) -> bool {
        self.patch_encoder.is_finite()
            && self.positional_encoder.is_finite()
            && self.encoder_mixer.is_finite()
            && self.mesh_encoder.is_finite()
            && self.fusion_scorer.is_finite()
            && self.fusion_combiner.is_finite()
            && self.decoder_mixer.is_finite()
            && self.displacement_head.is_finite()
    }
}

/// Intermediates from one recorded forward pass, enough to replay the exact
/// backward chain.
#[derive(Debug, Clone)]
pub struct SceneTrace {
    pub center_indices: Vec<usize>,
    pub centers: Vec<Point3>,
    pub membership: Vec<Vec<usize>>,
    /// Per patch, per feature dim: which member attained the max.
    pub patch_pool_argmax: Vec<Vec<usize>>,
    /// Tokens before the encoder mixer (pooled + positional).
    pub raw_tokens: Vec<Vec<f64>>,
    pub raw_token_mean: Vec<f64>,
    pub tokens_v: Vec<Vec<f64>>,
    pub mesh_selected: Vec<usize>,
    pub mesh_neighbors: Vec<Vec<usize>>,
    pub mesh_pool_argmax: Vec<Vec<usize>>,
    pub proxies: Vec<Vec<f64>>,
    pub fusion_weights: Vec<Vec<f64>>,
    pub weighted_sums: Vec<Vec<f64>>,
    /// Tokens after the combiner, before the decoder mixer.
    pub combined: Vec<Vec<f64>>,
    pub combined_mean: Vec<f64>,
    pub tokens_h: Vec<Vec<f64>>,
    pub displacements: Vec<[f64; 3]>,
    pub assignments: Vec<Vec<(usize, f64)>>,
    pub scene: PointCloud,
    pub mesh_points: Vec<Point3>,
    pub output: PointCloud,
}

/// Forward pass recording the intermediates needed by [`backward_scene`].
/// The output cloud equals [`super::reconstruct`] exactly.
pub fn forward_scene(
    model: &ReconstructionModel,
    scene: &PointCloud,
    mesh_cloud: &PointCloud,
) -> Result<(PointCloud, SceneTrace), ReconstructError> {
    model.validate()?;
    let p = model.params;
    let patches = patchify(scene, p.centers, p.patch_size)?;
    let centers: Vec<Point3> = patches.center_indices.iter().map(|&i| scene.points[i]).collect();

    let scale = p.input_scale;
    let mut patch_pool_argmax = Vec::with_capacity(centers.len());
    let mut raw_tokens = Vec::with_capacity(centers.len());
    for (center, members) in centers.iter().zip(&patches.membership) {
        let encoded: Vec<Vec<f64>> = members
            .iter()
            .map(|&m| {
                model
                    .patch_encoder
                    .forward(&scene.points[m].sub(*center).scale(scale).to_array())
            })
            .collect::<Result<_, _>>()?;
        let (pooled, argmax) = pool_max_argmax(&encoded)?;
        let pos = model.positional_encoder.forward(&center.scale(scale).to_array())?;
        raw_tokens.push(pooled.iter().zip(&pos).map(|(a, b)| a + b).collect::<Vec<f64>>());
        patch_pool_argmax.push(argmax);
    }
    let raw_token_mean = pool_mean(&raw_tokens)?;
    let tokens_v = mix_forward(&model.encoder_mixer, &raw_tokens, &raw_token_mean)?;

    let proxy_set = mesh_proxies(model, mesh_cloud, p.proxies)?;
    // Re-derive the selection and pooling structure for the backward pass.
    let mesh_selected = crate::geometry::farthest_point_sample(mesh_cloud, p.proxies, 0)
        .map_err(|e| ReconstructError::InvalidInput(e.to_string()))?;
    let tree = KdTree::build(&mesh_cloud.points);
    let mut mesh_neighbors = Vec::with_capacity(mesh_selected.len());
    let mut mesh_pool_argmax = Vec::with_capacity(mesh_selected.len());
    for &i in &mesh_selected {
        let neighbors =
            super::edge_neighbor_indices(&tree, &mesh_cloud.points, i, p.edge_neighbors);
        let feats: Vec<Vec<f64>> = neighbors
            .iter()
            .map(|&j| {
                let xi = mesh_cloud.points[i].scale(scale);
                let rel = mesh_cloud.points[j].sub(mesh_cloud.points[i]).scale(scale);
                model.mesh_encoder.forward(&[xi.x, xi.y, xi.z, rel.x, rel.y, rel.z])
            })
            .collect::<Result<_, _>>()?;
        let (_, argmax) = pool_max_argmax(&feats)?;
        mesh_neighbors.push(neighbors);
        mesh_pool_argmax.push(argmax);
    }

    let fused = fuse(model, &super::TokenSet { tokens: tokens_v.clone() }, &proxy_set)?;
    // The combiner inputs and outputs, re-recorded for backward.
    let d = p.feature_dim;
    let mut weighted_sums = Vec::with_capacity(tokens_v.len());
    let mut combined = Vec::with_capacity(tokens_v.len());
    for (v, row) in tokens_v.iter().zip(&fused.weights) {
        let mut s = vec![0.0; d];
        for (w, o) in row.iter().zip(&proxy_set.features) {
            for (sv, ov) in s.iter_mut().zip(o) {
                *sv += w * ov;
            }
        }
        let mut z = v.clone();
        z.extend_from_slice(&s);
        combined.push(model.fusion_combiner.forward(&z)?);
        weighted_sums.push(s);
    }
    let combined_mean = pool_mean(&combined)?;
    let field = predict_displacements(model, &fused, &centers)?;
    let assignments = propagate_assignments(scene, &centers, p.propagate_k)?;
    let points: Vec<Point3> = scene
        .points
        .iter()
        .zip(&assignments)
        .map(|(pt, assigned)| {
            let mut shift = [0.0; 3];
            for (idx, w) in assigned {
                for a in 0..3 {
                    shift[a] += w * field.0[*idx][a];
                }
            }
            Point3::new(pt.x + shift[0], pt.y + shift[1], pt.z + shift[2])
        })
        .collect();
    let output = PointCloud { points, frame_tag: scene.frame_tag.clone() };

    let trace = SceneTrace {
        center_indices: patches.center_indices.clone(),
        centers,
        membership: patches.membership.clone(),
        patch_pool_argmax,
        raw_tokens,
        raw_token_mean,
        tokens_v,
        mesh_selected,
        mesh_neighbors,
        mesh_pool_argmax,
        proxies: proxy_set.features,
        fusion_weights: fused.weights,
        weighted_sums,
        combined,
        combined_mean,
        tokens_h: fused.tokens,
        displacements: field.0,
        assignments,
        scene: scene.clone(),
        mesh_points: mesh_cloud.points.clone(),
        output: output.clone(),
    };
    Ok((output, trace))
}

fn mix_forward(
    net: &Network,
    tokens: &[Vec<f64>],
    mean: &[f64],
) -> Result<Vec<Vec<f64>>, ReconstructError> {
    tokens
        .iter()
        .map(|t| {
            let mut z = t.clone();
            z.extend_from_slice(mean);
            let delta = net.forward(&z)?;
            Ok(t.iter().zip(&delta).map(|(a, b)| a + b).collect())
        })
        .collect()
}

/// Backward through the residual mixer: out_i = t_i + net([t_i ; mean(t)]).
fn mix_backward(
    net: &Network,
    tokens: &[Vec<f64>],
    mean: &[f64],
    upstream: &[Vec<f64>],
    grads: &mut NetworkGrad,
) -> Result<Vec<Vec<f64>>, ReconstructError> {
    let d = mean.len();
    let mut dt: Vec<Vec<f64>> = upstream.to_vec();
    let mut mean_grad = vec![0.0; d];
    for (i, (t, up)) in tokens.iter().zip(upstream).enumerate() {
        let mut z = t.clone();
        z.extend_from_slice(mean);
        let g = net.backward(&z, up)?;
        grads.add_assign(&g);
        for k in 0..d {
            dt[i][k] += g.input[k];
            mean_grad[k] += g.input[d + k];
        }
    }
    let inv = 1.0 / tokens.len() as f64;
    for row in dt.iter_mut() {
        for k in 0..d {
            row[k] += mean_grad[k] * inv;
        }
    }
    Ok(dt)
}

/// Chamfer distance between `recon` and `clean` plus dLoss/d(recon point),
/// with both nearest-neighbor assignments held fixed.
pub fn chamfer_gradient(recon: &PointCloud, clean: &PointCloud) -> (f64, Vec<[f64; 3]>) {
    let tree_clean = KdTree::build(&clean.points);
    let tree_recon = KdTree::build(&recon.points);
    let n_r = recon.len() as f64;
    let n_g = clean.len() as f64;
    let mut grads = vec![[0.0; 3]; recon.len()];
    let mut loss = 0.0;
    for (i, r) in recon.points.iter().enumerate() {
        let (idx, dist) = tree_clean.nearest(*r);
        loss += dist / n_r;
        if dist > 1e-12 {
            let g = clean.points[idx];
            let scale = 1.0 / (n_r * dist);
            grads[i][0] += (r.x - g.x) * scale;
            grads[i][1] += (r.y - g.y) * scale;
            grads[i][2] += (r.z - g.z) * scale;
        }
    }
    for g in &clean.points {
        let (idx, dist) = tree_recon.nearest(*g);
        loss += dist / n_g;
        if dist > 1e-12 {
            let r = recon.points[idx];
            let scale = 1.0 / (n_g * dist);
            grads[idx][0] += (r.x - g.x) * scale;
            grads[idx][1] += (r.y - g.y) * scale;
            grads[idx][2] += (r.z - g.z) * scale;
        }
    }
    (loss, grads)
}

/// Exact gradients of `Σ_n point_grads[n] · output_n` with respect to every
/// model parameter.
pub fn backward_scene(
    model: &ReconstructionModel,
    trace: &SceneTrace,
    point_grads: &[[f64; 3]],
) -> Result<ReconGrads, ReconstructError> {
    let d = model.params.feature_dim;
    let i_count = trace.centers.len();
    let j_count = trace.proxies.len();
    let mut grads = ReconGrads::zeros_like(model);

    // Propagation: displacements receive the weighted point gradients.
    let mut d_disp = vec![[0.0; 3]; i_count];
    for (pg, assigned) in point_grads.iter().zip(&trace.assignments) {
        for (idx, w) in assigned {
            for a in 0..3 {
                d_disp[*idx][a] += w * pg[a];
            }
        }
    }

    // Displacement head.
    let scale = model.params.input_scale;
    let mut d_h = vec![vec![0.0; d]; i_count];
    for i in 0..i_count {
        let c = trace.centers[i].scale(scale);
        let mut z = vec![c.x, c.y, c.z];
        z.extend_from_slice(&trace.tokens_h[i]);
        let g = model.displacement_head.backward(&z, &d_disp[i])?;
        grads.displacement_head.add_assign(&g);
        d_h[i].copy_from_slice(&g.input[3..]);
    }

    // Decoder mixer.
    let d_combined = mix_backward(
        &model.decoder_mixer,
        &trace.combined,
        &trace.combined_mean,
        &d_h,
        &mut grads.decoder_mixer,
    )?;

    // Combiner, fusion weighted sum and scorer.
    let mut d_v = vec![vec![0.0; d]; i_count];
    let mut d_o = vec![vec![0.0; d]; j_count];
    for i in 0..i_count {
        let mut z = trace.tokens_v[i].clone();
        z.extend_from_slice(&trace.weighted_sums[i]);
        let g = model.fusion_combiner.backward(&z, &d_combined[i])?;
        grads.fusion_combiner.add_assign(&g);
        for k in 0..d {
            d_v[i][k] += g.input[k];
        }
        let d_s = &g.input[d..];
        for j in 0..j_count {
            let w = trace.fusion_weights[i][j];
            let o = &trace.proxies[j];
            let dw: f64 = d_s.iter().zip(o).map(|(a, b)| a * b).sum();
            for k in 0..d {
                d_o[j][k] += w * d_s[k];
            }
            let mut z = trace.tokens_v[i].clone();
            z.extend_from_slice(o);
            let sg = model.fusion_scorer.backward(&z, &[dw])?;
            grads.fusion_scorer.add_assign(&sg);
            for k in 0..d {
                d_v[i][k] += sg.input[k];
                d_o[j][k] += sg.input[d + k];
            }
        }
    }

    // Encoder mixer.
    let d_raw = mix_backward(
        &model.encoder_mixer,
        &trace.raw_tokens,
        &trace.raw_token_mean,
        &d_v,
        &mut grads.encoder_mixer,
    )?;

    // Positional encoder and pooled patch encoder.
    for i in 0..i_count {
        let center = trace.centers[i];
        let g = model
            .positional_encoder
            .backward(&center.scale(scale).to_array(), &d_raw[i])?;
        grads.positional_encoder.add_assign(&g);

        let mut per_point: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for k in 0..d {
            per_point
                .entry(trace.patch_pool_argmax[i][k])
                .or_insert_with(|| vec![0.0; d])[k] += d_raw[i][k];
        }
        for (member_pos, upstream) in per_point {
            let point_idx = trace.membership[i][member_pos];
            let rel = trace.scene.points[point_idx].sub(center).scale(scale);
            let g = model.patch_encoder.backward(&rel.to_array(), &upstream)?;
            grads.patch_encoder.add_assign(&g);
        }
    }

    // Mesh edge features: only pool-argmax neighbor pairs carry gradient.
    for j in 0..j_count {
        let i = trace.mesh_selected[j];
        let xi = trace.mesh_points[i];
        let mut per_neighbor: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for k in 0..d {
            per_neighbor
                .entry(trace.mesh_pool_argmax[j][k])
                .or_insert_with(|| vec![0.0; d])[k] += d_o[j][k];
        }
        for (nb_pos, upstream) in per_neighbor {
            let nb = trace.mesh_neighbors[j][nb_pos];
            let xs = xi.scale(scale);
            let rel = trace.mesh_points[nb].sub(xi).scale(scale);
            let input = [xs.x, xs.y, xs.z, rel.x, rel.y, rel.z];
            let g = model.mesh_encoder.backward(&input, &upstream)?;
            grads.mesh_encoder.add_assign(&g);
        }
    }

    Ok(grads)
}

/// Chamfer loss of one sample plus full parameter gradients.
pub fn loss_and_grads(
    model: &ReconstructionModel,
    sample: &ReconSample,
) -> Result<(f64, ReconGrads), ReconstructError> {
    let (output, trace) = forward_scene(model, &sample.corrupted, &sample.mesh_cloud)?;
    if output.points.iter().any(|p| !p.is_finite()) {
        return Err(ReconstructError::NonFiniteForward);
    }
    let (loss, point_grads) = chamfer_gradient(&output, &sample.clean);
    let grads = backward_scene(model, &trace, &point_grads)?;
    Ok((loss, grads))
}

/// Mini-batch gradient descent on chamfer(reconstruct(P), P_gt), seeded and
/// deterministic. The `loss` tag of the config is ignored — reconstruction
/// always trains on the Chamfer distance.
pub fn train_reconstruction(
    dataset: &[ReconSample],
    model: ReconstructionModel,
    config: &TrainConfig,
) -> Result<(ReconstructionModel, TrainReport), ReconstructError> {
    if dataset.is_empty() {
        return Err(ReconstructError::InvalidInput("empty dataset".into()));
    }
    config.validate()?;
    let mut model = model;
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity: Option<ReconGrads> = None;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate / (1.0 + config.lr_decay * epoch as f64);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = ReconGrads::zeros_like(&model);
            for &i in batch {
                let (loss, g) = match loss_and_grads(&model, &dataset[i]) {
                    Ok(v) => v,
                    Err(ReconstructError::NonFiniteForward) => {
                        return Err(ReconstructError::Diverged { epoch })
                    }
                    Err(e) => return Err(e),
                };
                if !loss.is_finite() || !g.is_finite() {
                    return Err(ReconstructError::Diverged { epoch });
                }
                epoch_loss += loss;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if config.momentum > 0.0 {
                let v = velocity.get_or_insert_with(|| ReconGrads::zeros_like(&model));
                v.scale(config.momentum);
                v.add_assign(&grads);
                v.apply(&mut model, lr);
            } else {
                grads.apply(&mut model, lr);
            }
        }
        let mean = epoch_loss / dataset.len() as f64;
        let finite = model.components().iter().all(|(_, n)| n.all_weights_finite());
        if !mean.is_finite() || !finite {
            return Err(ReconstructError::Diverged { epoch });
        }
        epoch_losses.push(mean);
    }
    let counts = vec![vec![dataset.len()]; epoch_losses.len()];
    Ok((model, TrainReport { epoch_losses, source_sample_counts: counts }))
}

const MODEL_KIND: &str = "reconstruction";

pub fn save_model(
    model: &ReconstructionModel,
    path: impl AsRef<Path>,
) -> Result<(), ReconstructError> {
    let mut doc = WeightDoc::new(MODEL_KIND);
    for (name, net) in model.components() {
        doc.push_network(name, net);
    }
    doc.insert_meta(
        "hyperparams",
        serde_json::to_value(model.params).expect("hyperparams serialize"),
    );
    doc.save(path)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ReconstructionModel, ReconstructError> {
    let doc = WeightDoc::load_kind(path, MODEL_KIND)?;
    let params: ReconHyperparams = serde_json::from_value(
        doc.metadata
            .get("hyperparams")
            .cloned()
            .ok_or_else(|| crate::nnet::NnetError::WeightFile("missing hyperparams".into()))?,
    )
    .map_err(|e| crate::nnet::NnetError::WeightFile(e.to_string()))?;
    let model = ReconstructionModel {
        patch_encoder: doc.network("patch_encoder")?,
        positional_encoder: doc.network("positional_encoder")?,
        encoder_mixer: doc.network("encoder_mixer")?,
        mesh_encoder: doc.network("mesh_encoder")?,
        fusion_scorer: doc.network("fusion_scorer")?,
        fusion_combiner: doc.network("fusion_combiner")?,
        decoder_mixer: doc.network("decoder_mixer")?,
        displacement_head: doc.network("displacement_head")?,
        params,
    };
    model.validate()?;
    Ok(model)
}
