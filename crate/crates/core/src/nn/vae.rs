use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::network::{GradientBundle, Loss, Network};

/// β-VAE with a Gaussian encoder `x ↦ (μ, log σ²)` and a deterministic decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    /// Outputs `2k` rows: μ on top, log-variance below.
    pub encoder: Network,
    pub decoder: Network,
    pub beta: f64,
}

/// Loss parts and gradients of one VAE batch.
#[derive(Clone, Debug)]
pub struct VaeStep {
    pub reconstruction: f64,
    pub kl: f64,
    /// `reconstruction + β · kl`.
    pub total: f64,
    pub encoder: GradientBundle,
    pub decoder: GradientBundle,
    pub mu: Matrix,
    pub logvar: Matrix,
}

impl VaeModel {
    pub fn new(encoder: Network, decoder: Network, beta: f64) -> Result<Self> {
        if encoder.output_dim() != 2 * decoder.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "vae latent",
                left: (encoder.output_dim(), 1),
                right: (decoder.input_dim(), 1),
            });
        }
        if encoder.input_dim() != decoder.output_dim() {
            return Err(Error::ShapeMismatch {
                op: "vae data dim",
                left: (encoder.input_dim(), 1),
                right: (decoder.output_dim(), 1),
            });
        }
        if !(beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be ≥ 0, got {beta}")));
        }
        Ok(Self { encoder, decoder, beta })
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    /// Posterior means and log-variances (`k × B` each).
    pub fn encode(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let out = self.encoder.predict(x)?;
        let k = self.latent_dim();
        Ok((out.row_range(0, k), out.row_range(k, 2 * k)))
    }

    /// Reparameterized forward and backward pass with externally supplied noise.
    pub fn step(&self, x: &Matrix, noise: &Matrix) -> Result<VaeStep> {
        let k = self.latent_dim();
        let batch = x.cols();
        if noise.shape() != (k, batch) {
            return Err(Error::ShapeMismatch {
                op: "vae noise",
                left: (k, batch),
                right: noise.shape(),
            });
        }
        let enc = self.encoder.forward(x)?;
        let out = enc.output();
        let mu = out.row_range(0, k);
        let logvar = out.row_range(k, 2 * k);
        let sigma = logvar.map(|v| (0.5 * v).exp());
        let z = mu.add(&sigma.hadamard(noise)?)?;

        let dec = self.decoder.forward(&z)?;
        let (reconstruction, dz_dec) = self.decoder.loss_and_logit_grad(&dec, Loss::Mse, x)?;
        let decoder = self.decoder.backprop(&dec, dz_dec)?;
        let dz = &decoder.hidden[0];

        let b = batch as f64;
        let mut kl = 0.0;
        let mut d_out = Matrix::zeros(2 * k, batch);
        for r in 0..k {
            for c in 0..batch {
                let m = mu[(r, c)];
                let lv = logvar[(r, c)];
                let var = lv.exp();
                kl += 0.5 * (m * m + var - lv - 1.0);
                d_out[(r, c)] = dz[(r, c)] + self.beta * m / b;
                d_out[(k + r, c)] =
                    dz[(r, c)] * noise[(r, c)] * 0.5 * sigma[(r, c)] + self.beta * 0.5 * (var - 1.0) / b;
            }
        }
        kl /= b;
        let readout = self.encoder.readout();
        for (g, &zv) in d_out.as_mut_slice().iter_mut().zip(enc.logits().as_slice()) {
            *g *= readout.derivative(zv);
        }
        let encoder = self.encoder.backprop(&enc, d_out)?;
        Ok(VaeStep {
            reconstruction,
            kl,
            total: reconstruction + self.beta * kl,
            encoder,
            decoder,
            mu,
            logvar,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::activation::Activation;
    use crate::nn::network::{InitScheme, Layer, NetworkSpec};
    use crate::rng::SplitMix64;

    fn toy(beta: f64, seed: u64) -> VaeModel {
        let enc = Network::init(
            &NetworkSpec {
                dims: vec![3, 4, 2],
                hidden: Activation::Gelu,
                readout: Activation::Identity,
                bias: true,
                init: InitScheme::He,
            },
            seed,
        )
        .unwrap();
        let dec = Network::init(
            &NetworkSpec {
                dims: vec![1, 4, 3],
                hidden: Activation::Gelu,
                readout: Activation::Sigmoid,
                bias: true,
                init: InitScheme::He,
            },
            seed + 1,
        )
        .unwrap();
        VaeModel::new(enc, dec, beta).unwrap()
    }

    fn batch(seed: u64) -> (Matrix, Matrix) {
        let mut rng = SplitMix64::new(seed);
        let x = Matrix::from_fn(3, 5, |_, _| rng.next_f64());
        let noise = Matrix::from_fn(1, 5, |_, _| rng.normal());
        (x, noise)
    }

    #[test]
    fn prior_match_has_zero_kl() {
        // Encoder that always outputs zeros: μ = 0, log σ² = 0.
        let enc = Network::new(vec![
            Layer::new(Matrix::zeros(2, 3), None, Activation::Identity).unwrap()
        ])
        .unwrap();
        let dec = Network::new(vec![
            Layer::new(Matrix::zeros(3, 1), None, Activation::Identity).unwrap()
        ])
        .unwrap();
        let vae = VaeModel::new(enc, dec, 1.0).unwrap();
        let (x, noise) = batch(1);
        let s = vae.step(&x, &noise).unwrap();
        assert_eq!(s.kl, 0.0);
    }

    #[test]
    fn zero_beta_is_pure_reconstruction() {
        let vae = toy(0.0, 3);
        let (x, noise) = batch(2);
        let s = vae.step(&x, &noise).unwrap();
        assert_eq!(s.total, s.reconstruction);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let vae = toy(0.7, 5);
        let (x, noise) = batch(4);
        let s = vae.step(&x, &noise).unwrap();
        let h = 1e-6;

        let enc0 = vae.encoder.parameters();
        let analytic = s.encoder.flatten();
        for i in 0..enc0.len() {
            let mut m = vae.clone();
            let mut p = enc0.clone();
            p[i] += h;
            m.encoder.set_parameters(&p).unwrap();
            let up = m.step(&x, &noise).unwrap().total;
            p[i] -= 2.0 * h;
            m.encoder.set_parameters(&p).unwrap();
            let down = m.step(&x, &noise).unwrap().total;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - analytic[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "enc {i}");
        }

        let dec0 = vae.decoder.parameters();
        let analytic = s.decoder.flatten();
        for i in 0..dec0.len() {
            let mut m = vae.clone();
            let mut p = dec0.clone();
            p[i] += h;
            m.decoder.set_parameters(&p).unwrap();
            let up = m.step(&x, &noise).unwrap().total;
            p[i] -= 2.0 * h;
            m.decoder.set_parameters(&p).unwrap();
            let down = m.step(&x, &noise).unwrap().total;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - analytic[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "dec {i}");
        }
    }

    #[test]
    fn noise_shape_is_checked() {
        let vae = toy(1.0, 1);
        let (x, _) = batch(1);
        assert!(vae.step(&x, &Matrix::zeros(2, 5)).is_err());
    }
}
