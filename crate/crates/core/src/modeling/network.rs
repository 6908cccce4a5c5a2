//! A compact residual CNN.
//!
//! stem conv (stride 2) → residual block → downsampling conv (stride 2) →
//! residual block → global average pool → linear head. The second conv of
//! each residual block starts at zero so every block begins as the
//! identity, which keeps training stable without normalisation layers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{global_avg_pool, global_avg_pool_backward, Conv2d, ConvCache, Feature, Linear, Param};
use super::ModelError;

/// Architecture selected by a backbone id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub stem_channels: usize,
    pub wide_channels: usize,
}

pub const DEFAULT_BACKBONE: &str = "resnet-mini";

impl BackboneSpec {
    pub fn from_id(id: &str) -> Result<Self, ModelError> {
        match id {
            "resnet-mini" => Ok(Self {
                stem_channels: 16,
                wide_channels: 32,
            }),
            "resnet-mini-wide" => Ok(Self {
                stem_channels: 32,
                wide_channels: 64,
            }),
            "resnet-micro" => Ok(Self {
                stem_channels: 8,
                wide_channels: 16,
            }),
            other => Err(ModelError::Config(format!(
                "unknown backbone {other:?} (known: resnet-micro, resnet-mini, resnet-mini-wide)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Residual {
    conv1: Conv2d,
    conv2: Conv2d,
}

struct ResidualTrace {
    c1: ConvCache,
    a1: Feature,
    c2: ConvCache,
    out: Feature,
}

impl Residual {
    fn new(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let conv1 = Conv2d::new(channels, channels, 3, 1, rng);
        let mut conv2 = Conv2d::new(channels, channels, 3, 1, rng);
        conv2.weight.value.iter_mut().for_each(|w| *w = 0.0);
        Self { conv1, conv2 }
    }

    fn forward(&self, x: &Feature) -> ResidualTrace {
        let (z1, c1) = self.conv1.forward(x);
        let a1 = z1.relu();
        let (mut z2, c2) = self.conv2.forward(&a1);
        z2.data.iter_mut().zip(&x.data).for_each(|(z, s)| *z += s);
        ResidualTrace {
            c1,
            a1,
            c2,
            out: z2.relu(),
        }
    }

    fn backward(&mut self, t: &ResidualTrace, dout: Feature) -> Feature {
        let dz2 = Feature::relu_backward(&t.out, dout);
        let da1 = self.conv2.backward(&t.c2, &dz2);
        let dz1 = Feature::relu_backward(&t.a1, da1);
        let mut dx = self.conv1.backward(&t.c1, &dz1);
        dx.data.iter_mut().zip(&dz2.data).for_each(|(d, s)| *d += s);
        dx
    }

    fn params_mut(&mut self) -> [&mut Param; 4] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
        ]
    }
}

/// The network: a backbone plus a linear head with `outputs` units.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: BackboneSpec,
    pub outputs: usize,
    stem: Conv2d,
    block1: Residual,
    down: Conv2d,
    block2: Residual,
    head: Linear,
}

/// Intermediate values kept for the backward pass.
pub struct Trace {
    stem: ConvCache,
    a0: Feature,
    b1: ResidualTrace,
    down: ConvCache,
    a2: Feature,
    b2: ResidualTrace,
    pooled: Vec<f32>,
}

impl Network {
    pub fn new(spec: BackboneSpec, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = Conv2d::new(3, spec.stem_channels, 3, 2, &mut rng);
        let block1 = Residual::new(spec.stem_channels, &mut rng);
        let down = Conv2d::new(spec.stem_channels, spec.wide_channels, 3, 2, &mut rng);
        let block2 = Residual::new(spec.wide_channels, &mut rng);
        let head = Linear::new(spec.wide_channels, outputs, &mut rng);
        Self {
            spec,
            outputs,
            stem,
            block1,
            down,
            block2,
            head,
        }
    }

    pub fn forward(&self, x: &Feature) -> (Vec<f32>, Trace) {
        let (z0, stem) = self.stem.forward(x);
        let a0 = z0.relu();
        let b1 = self.block1.forward(&a0);
        let (z2, down) = self.down.forward(&b1.out);
        let a2 = z2.relu();
        let b2 = self.block2.forward(&a2);
        let pooled = global_avg_pool(&b2.out);
        let out = self.head.forward(&pooled);
        (
            out,
            Trace {
                stem,
                a0,
                b1,
                down,
                a2,
                b2,
                pooled,
            },
        )
    }

    pub fn predict(&self, x: &Feature) -> Vec<f32> {
        self.forward(x).0
    }

    /// Accumulates gradients of a loss whose gradient w.r.t. the outputs is
    /// `dout`.
    pub fn backward(&mut self, t: &Trace, dout: &[f32]) {
        let dpooled = self.head.backward(&t.pooled, dout);
        let out = &t.b2.out;
        let db2 = global_avg_pool_backward(&dpooled, (out.c, out.h, out.w));
        let da2 = self.block2.backward(&t.b2, db2);
        let dz2 = Feature::relu_backward(&t.a2, da2);
        let db1 = self.down.backward(&t.down, &dz2);
        let da0 = self.block1.backward(&t.b1, db1);
        let dz0 = Feature::relu_backward(&t.a0, da0);
        self.stem.backward(&t.stem, &dz0);
    }

    /// All parameters; the last two are the head.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.stem.weight, &mut self.stem.bias];
        out.extend(self.block1.params_mut());
        out.push(&mut self.down.weight);
        out.push(&mut self.down.bias);
        out.extend(self.block2.params_mut());
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// Flattened parameter values in `params_mut` order.
    pub fn weights(&mut self) -> Vec<f32> {
        self.params_mut().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn load_weights(&mut self, weights: &[f32]) -> Result<(), ModelError> {
        let expected = self.param_count();
        if weights.len() != expected {
            return Err(ModelError::Checkpoint(format!(
                "weight count {} does not match architecture ({expected})",
                weights.len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value.copy_from_slice(&weights[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Copies every backbone parameter from `other`, keeping this head.
    pub fn load_backbone(&mut self, other: &mut Network) -> Result<(), ModelError> {
        if self.spec != other.spec {
            return Err(ModelError::Config(
                "pretrained backbone has a different architecture".into(),
            ));
        }
        let mine = self.params_mut();
        let theirs = other.params_mut();
        let backbone = mine.len() - 2;
        for (dst, src) in mine.into_iter().zip(theirs).take(backbone) {
            dst.value.copy_from_slice(&src.value);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn input(seed: u64, px: usize) -> Feature {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Feature::new(
            3,
            px,
            px,
            (0..3 * px * px).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    fn perturb_residuals(net: &mut Network, seed: u64) {
        // Make the zero-initialised convs non-trivial so their gradients are exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in net
            .block1
            .conv2
            .weight
            .value
            .iter_mut()
            .chain(net.block2.conv2.weight.value.iter_mut())
        {
            *w = rng.random_range(-0.2..0.2);
        }
    }

    #[test]
    fn end_to_end_gradient_check() {
        let mut net = Network::new(
            BackboneSpec {
                stem_channels: 3,
                wide_channels: 4,
            },
            2,
            11,
        );
        perturb_residuals(&mut net, 5);
        let x = input(3, 8);
        let probe = [0.7f32, -1.3];
        let loss = |n: &Network| -> f64 {
            n.predict(&x)
                .iter()
                .zip(probe)
                .map(|(o, p)| (*o as f64) * p as f64)
                .sum()
        };
        let (_, trace) = net.forward(&x);
        net.zero_grad();
        net.backward(&trace, &probe);
        let analytic: Vec<Vec<f32>> = net.params_mut().iter().map(|p| p.grad.clone()).collect();
        let eps = 2e-3f32;
        let mut checked = 0;
        for (pi, grads) in analytic.iter().enumerate() {
            for i in (0..grads.len()).step_by(grads.len().div_ceil(3).max(1)) {
                let mut plus = net.clone();
                plus.params_mut()[pi].value[i] += eps;
                let mut minus = net.clone();
                minus.params_mut()[pi].value[i] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps as f64);
                let tol = 2e-3 + 2e-2 * fd.abs();
                assert!(
                    (fd - grads[i] as f64).abs() < tol,
                    "param {pi}[{i}]: fd {fd} vs {}",
                    grads[i]
                );
                checked += 1;
            }
        }
        assert!(checked >= 24);
    }

    #[test]
    fn weights_round_trip_and_backbone_transfer() {
        let spec = BackboneSpec::from_id("resnet-micro").unwrap();
        let mut a = Network::new(spec, 1, 1);
        let mut b = Network::new(spec, 1, 2);
        let wa = a.weights();
        b.load_weights(&wa).unwrap();
        assert_eq!(b.weights(), wa);
        assert!(b.load_weights(&wa[1..]).is_err());

        let mut clf = Network::new(spec, 2, 3);
        let head_before = clf.head.clone();
        clf.load_backbone(&mut a).unwrap();
        assert_eq!(clf.stem, a.stem);
        assert_eq!(clf.head, head_before);
        let x = input(1, 16);
        assert_eq!(clf.predict(&x).len(), 2);
    }

    #[test]
    fn unknown_backbone() {
        assert!(BackboneSpec::from_id("resnet50").is_err());
    }
}
