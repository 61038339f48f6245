//! Linear-Gaussian surrogate of the encoder/generator pipeline.
//!
//! Identity and attribute codes are jointly Gaussian with identity marginal
//! covariances and a cross-covariance `U diag(rho) V^T`, so the canonical
//! correlations are exactly `rho` and the code-level mutual information is
//! `-1/2 sum ln(1 - rho_i^2)` in closed form. The generator is linear,
//! `G(id, attr) = A id + B attr + sigma_g * noise`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::cosine_sim;
use crate::linalg::{
    gaussian_matrix, gaussian_vector, log_det_spd, matrix_to_rows, psd_pinv, random_orthonormal,
    range_whitener, rows_to_matrix, spectral_norm,
};
use crate::stats;

pub const DEFAULT_SIGMA_G: f64 = 0.05;
pub const DEFAULT_IMPOSTOR_PAIRS: usize = 10_000;
const RANGE_TOL: f64 = 1e-12;

/// Joint law of the codes plus the linear generator.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    p: usize,
    q: usize,
    m: usize,
    rho: Vec<f64>,
    id_frame: DMatrix<f64>,
    attr_frame: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma_g: f64,
    attr_shape: Option<(usize, usize, usize)>,
    seed: Option<u64>,
}

/// One draw of `(z_id, z_attr)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub z_id: DVector<f64>,
    pub z_attr: DVector<f64>,
}

/// Builds a world with Haar-random canonical frames and generator columns.
///
/// When `m >= p + q` the identity and attribute channels of the generator
/// are mutually orthogonal; otherwise each matrix has orthonormal columns on
/// its own (or is a unit-spectral-norm Gaussian matrix if `m` is too small).
pub fn make_world<R: Rng + ?Sized>(
    p: usize,
    q: usize,
    m: usize,
    rho: &[f64],
    sigma_g: f64,
    rng: &mut R,
) -> Result<WorldModel> {
    if p == 0 || q == 0 || m == 0 {
        return Err(Error::InvalidDimension(format!(
            "world dimensions must be positive (p={p}, q={q}, m={m})"
        )));
    }
    if rho.len() > p.min(q) {
        return Err(Error::InvalidDimension(format!(
            "{} canonical correlations exceed min(p, q) = {}",
            rho.len(),
            p.min(q)
        )));
    }
    if let Some(&bad) = rho.iter().find(|&&r| !(0.0..1.0).contains(&r)) {
        return Err(Error::DegenerateCoupling(bad));
    }
    if !(sigma_g >= 0.0) || !sigma_g.is_finite() {
        return Err(Error::Domain(format!("sigma_g {sigma_g} must be >= 0")));
    }
    let r = rho.len();
    let id_frame = random_orthonormal(p, r, rng)?;
    let attr_frame = random_orthonormal(q, r, rng)?;
    let (a, b) = if m >= p + q {
        let frame = random_orthonormal(m, p + q, rng)?;
        (
            frame.columns(0, p).into_owned(),
            frame.columns(p, q).into_owned(),
        )
    } else {
        (channel_matrix(m, p, rng)?, channel_matrix(m, q, rng)?)
    };
    Ok(WorldModel {
        p,
        q,
        m,
        rho: rho.to_vec(),
        id_frame,
        attr_frame,
        a,
        b,
        sigma_g,
        attr_shape: None,
        seed: None,
    })
}

/// Same as [`make_world`] but driven by (and recording) a construction seed.
pub fn make_world_seeded(
    p: usize,
    q: usize,
    m: usize,
    rho: &[f64],
    sigma_g: f64,
    seed: u64,
) -> Result<WorldModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = make_world(p, q, m, rho, sigma_g, &mut rng)?;
    world.seed = Some(seed);
    Ok(world)
}

fn channel_matrix<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if m >= k {
        random_orthonormal(m, k, rng)
    } else {
        let g = gaussian_matrix(m, k, rng);
        let s = spectral_norm(&g);
        Ok(g / s)
    }
}

impl WorldModel {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn sigma_g(&self) -> f64 {
        self.sigma_g
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn identity_mixing(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn attribute_mixing(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn attr_shape(&self) -> Option<(usize, usize, usize)> {
        self.attr_shape
    }

    /// Tags the flat attribute code with a `(channels, h, w)` layout.
    pub fn with_attr_shape(mut self, shape: (usize, usize, usize)) -> Result<Self> {
        if shape.0 * shape.1 * shape.2 != self.q {
            return Err(Error::DimensionMismatch {
                expected: self.q,
                got: shape.0 * shape.1 * shape.2,
            });
        }
        self.attr_shape = Some(shape);
        Ok(self)
    }

    /// Replaces the generator matrices, keeping the code law.
    pub fn with_generator(&self, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != b.nrows() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: b.nrows(),
            });
        }
        if a.ncols() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: a.ncols(),
            });
        }
        if b.ncols() != self.q {
            return Err(Error::DimensionMismatch {
                expected: self.q,
                got: b.ncols(),
            });
        }
        let mut w = self.clone();
        w.m = a.nrows();
        w.a = a;
        w.b = b;
        Ok(w)
    }

    pub fn with_sigma_g(&self, sigma_g: f64) -> Self {
        let mut w = self.clone();
        w.sigma_g = sigma_g;
        w
    }

    /// `Cov(z_id, z_attr) = U diag(rho) V^T`.
    pub fn cross_cov(&self) -> DMatrix<f64> {
        let r = self.rho.len();
        let diag = DMatrix::from_diagonal(&DVector::from_column_slice(&self.rho));
        if r == 0 {
            return DMatrix::zeros(self.p, self.q);
        }
        &self.id_frame * diag * self.attr_frame.transpose()
    }

    /// Covariance of the stacked code `(z_id, z_attr)`.
    pub fn joint_cov(&self) -> DMatrix<f64> {
        let n = self.p + self.q;
        let mut cov = DMatrix::identity(n, n);
        let c = self.cross_cov();
        cov.view_mut((0, self.p), (self.p, self.q)).copy_from(&c);
        cov.view_mut((self.p, 0), (self.q, self.p))
            .copy_from(&c.transpose());
        cov
    }

    /// `[A B]`, the generator acting on the stacked code.
    pub fn generator_matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.m, self.p + self.q);
        g.view_mut((0, 0), (self.m, self.p)).copy_from(&self.a);
        g.view_mut((0, self.p), (self.m, self.q)).copy_from(&self.b);
        g
    }

    /// Covariance of a raw image `G(z_id, z_attr)`.
    pub fn raw_cov(&self) -> DMatrix<f64> {
        let g = self.generator_matrix();
        &g * self.joint_cov() * g.transpose() + self.noise_cov()
    }

    fn noise_cov(&self) -> DMatrix<f64> {
        DMatrix::identity(self.m, self.m) * (self.sigma_g * self.sigma_g)
    }

    /// Covariance of an anonymized image `G(z'_id, z_attr)` with `z'_id`
    /// independent of the original codes.
    pub fn safe_cov(&self) -> DMatrix<f64> {
        &self.a * self.a.transpose() + &self.b * self.b.transpose() + self.noise_cov()
    }

    /// `Cov(z_id, G(z'_id, z_attr)) = C B^T`.
    pub fn id_safe_cross_cov(&self) -> DMatrix<f64> {
        self.cross_cov() * self.b.transpose()
    }

    /// Orthogonal projector onto the column space of `B`.
    pub fn attribute_projector(&self) -> DMatrix<f64> {
        let btb = self.b.transpose() * &self.b;
        &self.b * psd_pinv(&btb, RANGE_TOL) * self.b.transpose()
    }

    fn conditional_attr_sqrt(&self) -> DMatrix<f64> {
        // sqrt(I - C^T C) = I - V diag(1 - sqrt(1 - rho^2)) V^T.
        let shrink: Vec<f64> = self.rho.iter().map(|r| 1.0 - (1.0 - r * r).sqrt()).collect();
        let mut s = DMatrix::identity(self.q, self.q);
        if !shrink.is_empty() {
            let d = DMatrix::from_diagonal(&DVector::from_vec(shrink));
            s -= &self.attr_frame * d * self.attr_frame.transpose();
        }
        s
    }

    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> SamplePair {
        let z_id = gaussian_vector(self.p, rng);
        let z_attr = self.sample_attr_given_id(&z_id, rng);
        SamplePair { z_id, z_attr }
    }

    /// Draws `z_attr | z_id`.
    pub fn sample_attr_given_id<R: Rng + ?Sized>(
        &self,
        z_id: &DVector<f64>,
        rng: &mut R,
    ) -> DVector<f64> {
        let noise = gaussian_vector(self.q, rng);
        self.cross_cov().transpose() * z_id + self.conditional_attr_sqrt() * noise
    }

    /// `A id + B attr + sigma_g * noise`; noise is drawn only when
    /// `sigma_g > 0`.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        id_code: &DVector<f64>,
        attr_code: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        if id_code.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: id_code.len(),
            });
        }
        if attr_code.len() != self.q {
            return Err(Error::DimensionMismatch {
                expected: self.q,
                got: attr_code.len(),
            });
        }
        let mut out = &self.a * id_code + &self.b * attr_code;
        if self.sigma_g > 0.0 {
            out += gaussian_vector(self.m, rng) * self.sigma_g;
        }
        Ok(out)
    }

    /// Raw image of a fresh identity/attribute draw.
    pub fn sample_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let pair = self.sample_pair(rng);
        self.generate(&pair.z_id, &pair.z_attr, rng)
            .expect("dimensions come from the world")
    }

    pub fn to_document(&self) -> WorldDocument {
        WorldDocument {
            p: self.p,
            q: self.q,
            m: self.m,
            rho: self.rho.clone(),
            sigma_g: self.sigma_g,
            seed: self.seed,
            attr_shape: self.attr_shape,
            id_frame: matrix_to_rows(&self.id_frame),
            attr_frame: matrix_to_rows(&self.attr_frame),
            identity_mixing: matrix_to_rows(&self.a),
            attribute_mixing: matrix_to_rows(&self.b),
        }
    }

    pub fn from_document(doc: &WorldDocument) -> Result<Self> {
        let r = doc.rho.len();
        if let Some(&bad) = doc.rho.iter().find(|&&x| !(0.0..1.0).contains(&x)) {
            return Err(Error::DegenerateCoupling(bad));
        }
        let world = WorldModel {
            p: doc.p,
            q: doc.q,
            m: doc.m,
            rho: doc.rho.clone(),
            id_frame: frame_from_rows(&doc.id_frame, doc.p, r)?,
            attr_frame: frame_from_rows(&doc.attr_frame, doc.q, r)?,
            a: frame_from_rows(&doc.identity_mixing, doc.m, doc.p)?,
            b: frame_from_rows(&doc.attribute_mixing, doc.m, doc.q)?,
            sigma_g: doc.sigma_g,
            attr_shape: doc.attr_shape,
            seed: doc.seed,
        };
        Ok(world)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("world document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: WorldDocument =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_document(&doc)
    }
}

fn frame_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if ncols == 0 {
        return Ok(DMatrix::zeros(nrows, 0));
    }
    let m = rows_to_matrix(rows)?;
    if m.nrows() != nrows || m.ncols() != ncols {
        return Err(Error::DimensionMismatch {
            expected: nrows * ncols,
            got: m.nrows() * m.ncols(),
        });
    }
    Ok(m)
}

/// Serialized form of a world; matrices are row-major lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldDocument {
    pub p: usize,
    pub q: usize,
    pub m: usize,
    pub rho: Vec<f64>,
    pub sigma_g: f64,
    pub seed: Option<u64>,
    pub attr_shape: Option<(usize, usize, usize)>,
    pub id_frame: Vec<Vec<f64>>,
    pub attr_frame: Vec<Vec<f64>>,
    pub identity_mixing: Vec<Vec<f64>>,
    pub attribute_mixing: Vec<Vec<f64>>,
}

/// Exact code-level mutual information `-1/2 sum ln(1 - rho_i^2)` (nats).
pub fn epsilon_dis(world: &WorldModel) -> f64 {
    -0.5 * world.rho.iter().map(|r| (-r * r).ln_1p()).sum::<f64>()
}

/// Exact `I(z_id; G(z'_id, z_attr))` with `z'_id` independent of the codes.
pub fn closed_form_leakage(world: &WorldModel) -> Result<f64> {
    gaussian_leakage(&world.id_safe_cross_cov(), &world.safe_cov())
}

/// Leakage after a fixed linear post-map `post` is applied to the
/// anonymized output.
pub fn closed_form_leakage_post(world: &WorldModel, post: &DMatrix<f64>) -> Result<f64> {
    if post.ncols() != world.m {
        return Err(Error::DimensionMismatch {
            expected: world.m,
            got: post.ncols(),
        });
    }
    let cross = world.id_safe_cross_cov() * post.transpose();
    let cov = post * world.safe_cov() * post.transpose();
    gaussian_leakage(&cross, &cov)
}

/// `I(X; Y)` for `X ~ N(0, I)` and `Y` with covariance `cov_y` and
/// cross-covariance `cross = Cov(X, Y)`. `Y` is restricted to the range of
/// its covariance, so noiseless generators are handled exactly.
fn gaussian_leakage(cross: &DMatrix<f64>, cov_y: &DMatrix<f64>) -> Result<f64> {
    let whitener = range_whitener(cov_y, RANGE_TOL);
    let k = cross.nrows();
    if whitener.ncols() == 0 {
        return Ok(0.0);
    }
    let m = cross * whitener;
    let residual = DMatrix::identity(k, k) - &m * m.transpose();
    let log_det = log_det_spd(&residual).map_err(|_| {
        Error::DegenerateCovariance(
            "identity code is a deterministic function of the output; use sigma_g > 0".into(),
        )
    })?;
    Ok((-0.5 * log_det).max(0.0))
}

/// Linear recognition embedding `x -> W x` with unit spectral norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    w: DMatrix<f64>,
    lipschitz: f64,
    pub impostor_mean: f64,
    pub impostor_sd: f64,
    /// Decision threshold; defaults to the 99th percentile of impostor
    /// similarities and is recalibrated by the threat suite.
    pub theta: f64,
}

impl Oracle {
    /// Wraps an embedding matrix, rescaling it to unit spectral norm and
    /// estimating impostor statistics on `impostor_pairs` raw-image pairs.
    pub fn from_matrix<R: Rng + ?Sized>(
        world: &WorldModel,
        w: DMatrix<f64>,
        impostor_pairs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if w.ncols() != world.m {
            return Err(Error::DimensionMismatch {
                expected: world.m,
                got: w.ncols(),
            });
        }
        let norm = spectral_norm(&w);
        if !(norm > 0.0) {
            return Err(Error::DegenerateCovariance("oracle embedding is zero".into()));
        }
        let w = w / norm;
        let lipschitz = spectral_norm(&w);
        let mut oracle = Oracle {
            w,
            lipschitz,
            impostor_mean: 0.0,
            impostor_sd: 0.0,
            theta: 1.0,
        };
        if impostor_pairs >= 2 {
            let sims = oracle.impostor_sims(world, impostor_pairs, rng)?;
            oracle.impostor_mean = stats::mean(&sims);
            oracle.impostor_sd = stats::sample_sd(&sims);
            oracle.theta = stats::quantile(&sims, 0.99)?;
        }
        Ok(oracle)
    }

    pub fn embedding(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn embed_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn embed(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x
    }

    /// Cosine similarity of the two embeddings.
    pub fn similarity(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let ex = self.embed(x);
        let ey = self.embed(y);
        cosine_sim(ex.as_slice(), ey.as_slice())
    }

    /// Similarities between raw images of independently drawn identities.
    pub fn impostor_sims<R: Rng + ?Sized>(
        &self,
        world: &WorldModel,
        pairs: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        (0..pairs)
            .map(|_| {
                let x = world.sample_raw(rng);
                let y = world.sample_raw(rng);
                self.similarity(&x, &y)
            })
            .collect()
    }

    /// Similarities between two images of the same identity with
    /// independently drawn attributes.
    pub fn genuine_sims<R: Rng + ?Sized>(
        &self,
        world: &WorldModel,
        pairs: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        (0..pairs)
            .map(|_| {
                let pair = world.sample_pair(rng);
                let other_attr = world.sample_attr_given_id(&pair.z_id, rng);
                let x = world.generate(&pair.z_id, &pair.z_attr, rng)?;
                let y = world.generate(&pair.z_id, &other_attr, rng)?;
                self.similarity(&x, &y)
            })
            .collect()
    }
}

/// A recognition oracle trained on this world's raw images: a random
/// `d_f x p` mixing of the best linear estimate `E[z_id | x]`, rescaled to
/// unit spectral norm. The mixing has orthonormal rows when `d_f <= p`, so
/// embeddings of an isotropic identity code stay isotropic.
pub fn make_oracle<R: Rng + ?Sized>(world: &WorldModel, d_f: usize, rng: &mut R) -> Result<Oracle> {
    make_oracle_with(world, d_f, DEFAULT_IMPOSTOR_PAIRS, rng)
}

pub fn make_oracle_with<R: Rng + ?Sized>(
    world: &WorldModel,
    d_f: usize,
    impostor_pairs: usize,
    rng: &mut R,
) -> Result<Oracle> {
    if d_f == 0 {
        return Err(Error::InvalidDimension("oracle embedding dim must be >= 1".into()));
    }
    let readout = identity_readout(world);
    let mixing = if d_f <= world.p {
        random_orthonormal(world.p, d_f, rng)?.transpose()
    } else {
        gaussian_matrix(d_f, world.p, rng)
    };
    Oracle::from_matrix(world, mixing * readout, impostor_pairs, rng)
}

/// `Cov(z_id, x) Cov(x)^+`, the least-squares identity estimate from a raw
/// image.
pub fn identity_readout(world: &WorldModel) -> DMatrix<f64> {
    let g = world.generator_matrix();
    let joint = world.joint_cov();
    let id_rows = joint.rows(0, world.p).into_owned();
    let cross = id_rows * g.transpose();
    cross * psd_pinv(&world.raw_cov(), RANGE_TOL)
}
