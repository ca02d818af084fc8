use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::seed;

use super::latent::TrajLatent;
use super::net::{self, Architecture, ForwardCache};

/// The trajectory generator. The network predicts the clean latent `x̂_θ(z_t, t, c)`
/// and the velocity is `v̂_θ = (x̂_θ − z_t) / (1 − t)`, defined for `t < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPolicy {
    arch: Architecture,
    params: Vec<f64>,
}

impl FlowPolicy {
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let params = net::init_params(&arch, &mut seed::rng(seed));
        FlowPolicy { arch, params }
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(invalid(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("policy parameters must be finite"));
        }
        Ok(FlowPolicy { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim()
    }

    pub fn velocity(&self, z: &DMatrix<f64>, t: &[f64], cond: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward(z, t, cond).0
    }

    /// Velocities of a batch plus what `backward` needs.
    pub fn forward(&self, z: &DMatrix<f64>, t: &[f64], cond: &DMatrix<f64>) -> (DMatrix<f64>, PolicyCache) {
        debug_assert!(t.iter().all(|&tj| tj < 1.0), "velocity is undefined at t = 1");
        let (mut v, net) = net::forward(&self.arch, &self.params, z, t, cond);
        let inv: Vec<f64> = t.iter().map(|tj| 1.0 / (1.0 - tj)).collect();
        v -= z;
        for (mut col, s) in v.column_iter_mut().zip(&inv) {
            col *= *s;
        }
        (v, PolicyCache { net, inv })
    }

    /// Adds `∂L/∂θ` to `grad`, given `∂L/∂v̂` for the batch in `cache`.
    pub fn backward(&self, cache: &PolicyCache, grad_v: &DMatrix<f64>, grad: &mut [f64]) {
        let mut g = grad_v.clone();
        for (mut col, s) in g.column_iter_mut().zip(&cache.inv) {
            col *= *s;
        }
        net::backward(&self.arch, &self.params, &cache.net, &g, grad)
    }

    /// Checks that `c` has this policy's latent size.
    pub fn check_condition(&self, c: &TrajLatent) -> Result<()> {
        if c.0.len() != self.latent_dim() {
            return Err(invalid(format!(
                "condition has {} latent entries, policy expects {}",
                c.0.len(),
                self.latent_dim()
            )));
        }
        Ok(())
    }
}

pub struct PolicyCache {
    net: ForwardCache,
    inv: Vec<f64>,
}

/// `cols` copies of `c` side by side.
pub(crate) fn broadcast(c: &TrajLatent, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(c.0.len(), cols, |i, _| c.0[i])
}
