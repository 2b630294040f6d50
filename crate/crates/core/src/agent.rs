//! Peer learning of the deployed rule and closed-form agent best responses.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ContributionMatrix, GroupParams, Sampler};

/// Peer feature rows with the scores the deployed rule assigned them.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerDataset {
    features: DMatrix<f64>,
    scores: DVector<f64>,
}

impl PeerDataset {
    pub fn new(features: DMatrix<f64>, scores: DVector<f64>) -> Result<Self> {
        if features.nrows() != scores.len() {
            return Err(Error::Input(format!(
                "{} feature rows but {} scores",
                features.nrows(),
                scores.len()
            )));
        }
        Ok(PeerDataset { features, scores })
    }

    /// Noiseless scores `X w`.
    pub fn scored(features: DMatrix<f64>, w: &DVector<f64>) -> Result<Self> {
        if features.ncols() != w.len() {
            return Err(Error::Input("feature width differs from policy length".into()));
        }
        let scores = &features * w;
        Self::new(features, scores)
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn scores(&self) -> &DVector<f64> {
        &self.scores
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub exogenous_effort: DVector<f64>,
    pub altered_features: DVector<f64>,
    pub utility: f64,
}

fn check_len(what: &str, v: &DVector<f64>, d: usize) -> Result<()> {
    if v.len() != d {
        return Err(Error::Input(format!("{what} has length {}, expected {d}", v.len())));
    }
    Ok(())
}

/// Π_g w.
pub fn peer_estimate_closed_form(projector: &DMatrix<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    if !projector.is_square() {
        return Err(Error::Input("projector must be square".into()));
    }
    check_len("policy", w, projector.ncols())?;
    Ok(projector * w)
}

/// Minimum-norm least-squares solution of `features · w = scores`.
pub fn peer_estimate_erm(peers: &PeerDataset) -> DVector<f64> {
    linalg::pinv(&peers.features) * &peers.scores
}

/// x_e = A_g⁻¹ Cᵀ Π_g w.
pub fn best_response_effort(
    w: &DVector<f64>,
    group: &GroupParams,
    c: &ContributionMatrix,
) -> Result<DVector<f64>> {
    check_len("policy", w, c.dim())?;
    let rhs = c.matrix().transpose() * (&group.projector * w);
    group.cost_solve(&rhs)
}

/// x' = x + C x_e.
pub fn altered_features(x: &DVector<f64>, x_e: &DVector<f64>, c: &ContributionMatrix) -> DVector<f64> {
    x + c.matrix() * x_e
}

/// (Π_g w)ᵀ(x + C x_e) − ½ x_eᵀ A_g x_e.
pub fn agent_utility(
    x: &DVector<f64>,
    x_e: &DVector<f64>,
    group: &GroupParams,
    c: &ContributionMatrix,
    w: &DVector<f64>,
) -> f64 {
    let est = &group.projector * w;
    let score = est.dot(&altered_features(x, x_e, c));
    score - 0.5 * x_e.dot(&(&group.cost * x_e))
}

/// Gradient of the utility in x_e: Cᵀ Π_g w − A_g x_e.
pub fn utility_gradient(
    x_e: &DVector<f64>,
    group: &GroupParams,
    c: &ContributionMatrix,
    w: &DVector<f64>,
) -> DVector<f64> {
    c.matrix().transpose() * (&group.projector * w) - &group.cost * x_e
}

pub fn best_response(
    x: &DVector<f64>,
    group: &GroupParams,
    c: &ContributionMatrix,
    w: &DVector<f64>,
) -> Result<BestResponse> {
    check_len("features", x, c.dim())?;
    let x_e = best_response_effort(w, group, c)?;
    let altered = altered_features(x, &x_e, c);
    let utility = agent_utility(x, &x_e, group, c, w);
    Ok(BestResponse {
        exogenous_effort: x_e,
        altered_features: altered,
        utility,
    })
}

/// Draw `n` peers from `sampler` and score them with `w`; optional additive score noise.
pub fn sample_peers(
    sampler: &Sampler,
    w: &DVector<f64>,
    n: usize,
    seed: u64,
    noise_sd: f64,
) -> Result<PeerDataset> {
    use rand_distr::{Distribution, Normal};
    let d = sampler.dim();
    check_len("policy", w, d)?;
    let mut features = DMatrix::zeros(n, d);
    let mut scores = DVector::zeros(n);
    for i in 0..n {
        let mut rng = crate::rng::stream(seed, &[0x9ee7, i as u64]);
        let x = sampler.draw(&mut rng);
        let mut y = x.dot(w);
        if noise_sd > 0.0 {
            let nd = Normal::new(0.0, noise_sd)
                .map_err(|e| Error::Input(format!("noise level: {e}")))?;
            y += nd.sample(&mut rng);
        }
        features.set_row(i, &x.transpose());
        scores[i] = y;
    }
    PeerDataset::new(features, scores)
}
