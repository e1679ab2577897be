//! Inverse editor q(z | x′, x) and the edit-vector prior.
//!
//! An edit is summarised by the embeddings of the words it inserts and
//! deletes, projected by a linear adapter to `f`. The posterior is
//! vMF(f/‖f‖, κ) for the direction and a uniform window of width ε above
//! the clipped norm of `f`. The prior is uniform on the sphere with a norm
//! uniform in `[0, norm_max]`.
//!
//! Sampling is split into noise and composition. [`VmfNoise`] holds every
//! random quantity and never looks at `f`; [`compose`] (or
//! [`Graph::reparameterize`] on a tape) turns `f` plus noise into `z`. The
//! direction is built as `t·μ + √(1−t²)·v` where `t` is the Wood cosine and
//! `v` is a Gaussian draw projected onto the tangent space of `μ`, so
//! gradients reach `f` through `μ` and the noise stays parameter-free.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::corpus::{EmbeddingTable, TokenId, PAD};
use crate::error::{Error, Result};
use crate::seqmodel::{Graph, ModelState, ParamId, Var};
use crate::tensor::{Real, Tensor};

/// Below this ‖f‖ the mean direction is undefined and a random one is used.
pub const DEGENERATE_NORM: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct EditVaeConfig {
    pub d_edit: usize,
    pub kappa: f64,
    pub epsilon: f64,
    pub norm_max: f64,
}

impl Default for EditVaeConfig {
    fn default() -> Self {
        Self {
            d_edit: 128,
            kappa: 30.0,
            epsilon: 1.0,
            norm_max: 10.0,
        }
    }
}

impl EditVaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_edit < 2 {
            return Err(Error::Config(format!("d_edit must be at least 2, got {}", self.d_edit)));
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("epsilon", self.epsilon),
            ("norm_max", self.norm_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.epsilon > self.norm_max {
            return Err(Error::Config(format!(
                "epsilon ({}) exceeds norm_max ({})",
                self.epsilon, self.norm_max
            )));
        }
        Ok(())
    }

    /// Upper bound on ‖f‖ before the norm window is added.
    pub fn norm_cap(&self) -> f64 {
        self.norm_max - self.epsilon
    }
}

/// A latent edit: unit direction and magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct EditVector {
    pub direction: Vec<f64>,
    pub norm: f64,
}

impl EditVector {
    /// The vector the generator sees: `direction · norm`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.direction.iter().map(|d| d * self.norm).collect()
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }
}

/// Trainable linear map from `[Σ inserted; Σ deleted]` (width `2·d_emb`) to
/// `f` (width `d_edit`).
#[derive(Clone, Debug, PartialEq)]
pub struct EditAdapter {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Token sets `(inserted, deleted)` of the edit x′ → x, sorted by id.
pub fn edit_sets(x_prime: &[TokenId], x: &[TokenId]) -> (Vec<TokenId>, Vec<TokenId>) {
    let a: BTreeSet<TokenId> = x_prime.iter().copied().filter(|&t| t != PAD).collect();
    let b: BTreeSet<TokenId> = x.iter().copied().filter(|&t| t != PAD).collect();
    (
        b.difference(&a).copied().collect(),
        a.difference(&b).copied().collect(),
    )
}

/// `[Σ_{w∈I} Φ(w); Σ_{w∈D} Φ(w)]`, zero where a set is empty.
pub fn diff_features(emb: &EmbeddingTable, x_prime: &[TokenId], x: &[TokenId]) -> Vec<f64> {
    let d = emb.dim();
    let (ins, del) = edit_sets(x_prime, x);
    let mut out = vec![0.0; 2 * d];
    for (half, set) in [(0, &ins), (d, &del)] {
        for &w in set {
            for (o, &v) in out[half..half + d].iter_mut().zip(emb.row(w)) {
                *o += v as f64;
            }
        }
    }
    out
}

impl<T: Real> Graph<'_, T> {
    /// `f` for the pair as a `1 × d_edit` row; only the adapter receives
    /// gradients.
    pub fn edit_summary(&mut self, x_prime: &[TokenId], x: &[TokenId]) -> Var {
        let model = self.model();
        let feats = diff_features(&model.embeddings, x_prime, x);
        let c = self
            .tape
            .constant(Tensor::row_vector(feats.into_iter().map(T::from_f64).collect()));
        let w = self.param(model.adapter.weight);
        let b = self.param(model.adapter.bias);
        let h = self.tape.matmul(c, w);
        self.tape.add_row(h, b)
    }

    /// `z = direction · norm` for posterior noise applied to `f`, recorded
    /// on the tape so the loss is differentiable in `f`.
    pub fn reparameterize(&mut self, f: Var, noise: &VmfNoise, cfg: &EditVaeConfig) -> Result<Var> {
        let fv = self.tape.value(f);
        if !fv.all_finite() {
            return Err(Error::NonFiniteInput("edit summary"));
        }
        let fnorm = fv.sum_sq().as_f64().sqrt();
        let tape = &mut self.tape;
        if fnorm < DEGENERATE_NORM {
            let z = noise.degenerate(cfg).to_vec();
            return Ok(tape.constant(Tensor::row_vector(z.into_iter().map(T::from_f64).collect())));
        }
        let sq = tape.hadamard(f, f);
        let n2 = tape.sum(sq);
        let n = tape.sqrt(n2);
        let inv = tape.recip(n);
        let mu = tape.scale_by(f, inv);

        let g = tape.constant(Tensor::row_vector(
            noise.tangent.iter().map(|&x| T::from_f64(x)).collect(),
        ));
        let gm = tape.matmul_nt(g, mu);
        let along = tape.scale_by(mu, gm);
        let perp = tape.sub(g, along);
        let psq = tape.hadamard(perp, perp);
        let p2 = tape.sum(psq);
        let pn = tape.sqrt(p2);
        let pinv = tape.recip(pn);
        let v = tape.scale_by(perp, pinv);

        let t = noise.cosine;
        let a = tape.scale(mu, T::from_f64(t));
        let b = tape.scale(v, T::from_f64((1.0 - t * t).max(0.0).sqrt()));
        let dir = tape.add(a, b);

        let clipped = tape.min_const(n, T::from_f64(cfg.norm_cap()));
        let offset = tape.constant(Tensor::scalar(T::from_f64(cfg.epsilon * noise.u)));
        let norm = tape.add(clipped, offset);
        Ok(tape.scale_by(dir, norm))
    }
}

/// `f` for the pair, evaluated outside any training graph.
pub fn edit_summary<T: Real>(model: &ModelState<T>, x_prime: &[TokenId], x: &[TokenId]) -> Vec<f64> {
    let mut g = Graph::new(model);
    let f = g.edit_summary(x_prime, x);
    g.tape.value(f).to_f64_vec()
}

/// All randomness of one posterior draw, independent of `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct VmfNoise {
    /// Cosine between the sample and the mean direction.
    pub cosine: f64,
    /// Gaussian vector whose component orthogonal to the mean gives the
    /// tangent direction.
    pub tangent: Vec<f64>,
    /// Position inside the norm window, in `[0, 1)`.
    pub u: f64,
    /// Direction used when `f` is (numerically) zero.
    pub fallback: Vec<f64>,
}

impl VmfNoise {
    /// Draws, in order: the Wood cosine, `d_edit` tangent normals, the
    /// window position, then `d_edit` normals for the fallback direction.
    pub fn draw(cfg: &EditVaeConfig, rng: &mut impl Rng) -> Self {
        let cosine = sample_cosine(cfg.kappa, cfg.d_edit, rng);
        let tangent = gaussian(cfg.d_edit, rng);
        let u = rng.random::<f64>();
        let fallback = unit(gaussian(cfg.d_edit, rng));
        Self {
            cosine,
            tangent,
            u,
            fallback,
        }
    }

    fn degenerate(&self, cfg: &EditVaeConfig) -> EditVector {
        EditVector {
            direction: self.fallback.clone(),
            norm: cfg.epsilon * self.u,
        }
    }
}

/// Applies posterior noise to `f` without a tape.
pub fn compose(f: &[f64], noise: &VmfNoise, cfg: &EditVaeConfig) -> Result<EditVector> {
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput("edit summary"));
    }
    if f.len() != cfg.d_edit {
        return Err(Error::DimMismatch {
            expected: cfg.d_edit,
            actual: f.len(),
        });
    }
    let fnorm = dot(f, f).sqrt();
    if fnorm < DEGENERATE_NORM {
        return Ok(noise.degenerate(cfg));
    }
    let mu: Vec<f64> = f.iter().map(|x| x / fnorm).collect();
    let gm = dot(&noise.tangent, &mu);
    let perp: Vec<f64> = noise.tangent.iter().zip(&mu).map(|(g, m)| g - gm * m).collect();
    let v = unit(perp);
    let t = noise.cosine;
    let s = (1.0 - t * t).max(0.0).sqrt();
    let direction = mu.iter().zip(&v).map(|(m, v)| t * m + s * v).collect();
    Ok(EditVector {
        direction,
        norm: fnorm.min(cfg.norm_cap()) + cfg.epsilon * noise.u,
    })
}

/// z ~ q(z | f): vMF(f/‖f‖, κ) direction, norm uniform in
/// `[min(‖f‖, norm_max − ε), that + ε]`.
pub fn posterior_sample(f: &[f64], cfg: &EditVaeConfig, rng: &mut impl Rng) -> Result<EditVector> {
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput("edit summary"));
    }
    let noise = VmfNoise::draw(cfg, rng);
    compose(f, &noise, cfg)
}

/// z ~ p(z): uniform direction, norm uniform in `[0, norm_max]`.
pub fn prior_sample(cfg: &EditVaeConfig, rng: &mut impl Rng) -> EditVector {
    let direction = unit(gaussian(cfg.d_edit, rng));
    let norm = rng.random::<f64>() * cfg.norm_max;
    EditVector { direction, norm }
}

/// The KL term of the objective. With fixed κ and ε it does not depend on
/// any parameter (vMF entropy depends on κ only, the uniform window on ε
/// only, and the prior is rotation invariant), so it contributes 0 to the
/// optimised loss.
pub fn kl_term() -> f64 {
    0.0
}

/// Wood's rejection sampler for the cosine `t = ⟨sample, μ⟩` of a
/// vMF(μ, κ) draw on the sphere in `m` dimensions.
pub fn sample_cosine(kappa: f64, m: usize, rng: &mut impl Rng) -> f64 {
    let m1 = (m - 1) as f64;
    // b = (m−1)/(2κ + √(4κ² + (m−1)²)), the cancellation-free form
    let b = m1 / (2.0 * kappa + (4.0 * kappa * kappa + m1 * m1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    // 1 − x0² = 4b/(1+b)²
    let c = kappa * x0 + m1 * (4.0 * b / ((1.0 + b) * (1.0 + b))).ln();
    let beta = Beta::new(m1 / 2.0, m1 / 2.0).expect("positive shape");
    loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random();
        if kappa * w + m1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            return w;
        }
    }
}

fn gaussian(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
