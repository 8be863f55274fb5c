use crate::error::{AiftError, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Likelihoods are clamped into `[EPS, 1 - EPS]` before any logarithm.
pub const LIKELIHOOD_EPS: f64 = 1e-7;

fn check_likelihoods(g: &Graph, vs: &[Var]) -> Result<()> {
    for &v in vs {
        if g.data(v).iter().any(|x| !x.is_finite()) {
            return Err(AiftError::Contract("discriminator likelihood is not finite".into()));
        }
    }
    Ok(())
}

/// `mean(log(clamp(d)))`.
pub fn mean_log(g: &mut Graph, d: Var) -> Result<Var> {
    let c = g.clamp(d, LIKELIHOOD_EPS, 1.0 - LIKELIHOOD_EPS);
    let l = g.log(c)?;
    Ok(g.mean(l))
}

/// `mean(log(1 - clamp(d)))`.
pub fn mean_log_complement(g: &mut Graph, d: Var) -> Result<Var> {
    let c = g.clamp(d, LIKELIHOOD_EPS, 1.0 - LIKELIHOOD_EPS);
    let one_minus = g.affine(c, -1.0, 1.0);
    let l = g.log(one_minus)?;
    Ok(g.mean(l))
}

/// Adversarial transform consistency loss over both domains:
///
/// `E[log D_I(x_I)] + E[log D_F(x_F)] + E[log(1 - D_F(G+(x_I)))] + E[log(1 - D_I(G-(x_F)))]`.
///
/// The discriminators maximize it. Each argument is `[N, 1]`.
pub fn atcl_loss(
    g: &mut Graph,
    image_real: Var,
    frequency_real: Var,
    frequency_fake: Var,
    image_fake: Var,
) -> Result<Var> {
    check_likelihoods(g, &[image_real, frequency_real, frequency_fake, image_fake])?;
    let a = mean_log(g, image_real)?;
    let b = mean_log(g, frequency_real)?;
    let c = mean_log_complement(g, frequency_fake)?;
    let d = mean_log_complement(g, image_fake)?;
    let ab = g.add(a, b)?;
    let cd = g.add(c, d)?;
    g.add(ab, cd)
}

/// Pixel-wise reconstruction loss `mean((x_F - G+(x_I))^2) + mean((x_I - G-(x_F))^2)`.
pub fn recon_loss(g: &mut Graph, image: Var, frequency: Var, gen_frequency: Var, gen_image: Var) -> Result<Var> {
    let df = g.sub(frequency, gen_frequency)?;
    let sf = g.mul(df, df)?;
    let mf = g.mean(sf);
    let di = g.sub(image, gen_image)?;
    let si = g.mul(di, di)?;
    let mi = g.mean(si);
    g.add(mf, mi)
}

/// `atcl + lambda * recon`.
pub fn total_loss(atcl: f64, recon: f64, lambda: f64) -> f64 {
    atcl + lambda * recon
}

/// Graph form of [`total_loss`].
pub fn total_loss_var(g: &mut Graph, atcl: Var, recon: Var, lambda: f64) -> Result<Var> {
    let weighted = g.affine(recon, lambda, 0.0);
    g.add(atcl, weighted)
}

fn column(values: &[f64]) -> Result<Tensor> {
    Tensor::new(vec![values.len(), 1], values.to_vec())
}

/// Evaluates [`atcl_loss`] on plain likelihood slices.
pub fn atcl_value(
    image_real: &[f64],
    frequency_real: &[f64],
    frequency_fake: &[f64],
    image_fake: &[f64],
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = [image_real, frequency_real, frequency_fake, image_fake]
        .iter()
        .map(|v| column(v).map(|t| g.constant(&t)))
        .collect::<Result<Vec<_>>>()?;
    let l = atcl_loss(&mut g, vars[0], vars[1], vars[2], vars[3])?;
    g.scalar(l)
}

/// Evaluates [`recon_loss`] on plain tensors.
pub fn recon_value(image: &Tensor, frequency: &Tensor, gen_frequency: &Tensor, gen_image: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let (a, b, c, d) = (g.constant(image), g.constant(frequency), g.constant(gen_frequency), g.constant(gen_image));
    let l = recon_loss(&mut g, a, b, c, d)?;
    g.scalar(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_half_likelihoods() {
        let v = atcl_value(&[0.5], &[0.5], &[0.5], &[0.5]).unwrap();
        assert!((v - 4.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((v + 2.7726).abs() < 1e-4);
    }

    #[test]
    fn perfect_discriminators_reach_maximum() {
        let v = atcl_value(&[1.0], &[1.0], &[0.0], &[0.0]).unwrap();
        let expected = 4.0 * (1.0 - LIKELIHOOD_EPS).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!(v < 0.0 && v > -1e-6);
    }

    #[test]
    fn mean_reduction_ignores_duplication() {
        let one = atcl_value(&[0.3], &[0.8], &[0.4], &[0.1]).unwrap();
        let two = atcl_value(&[0.3, 0.3], &[0.8, 0.8], &[0.4, 0.4], &[0.1, 0.1]).unwrap();
        assert!((one - two).abs() < 1e-15);
    }

    #[test]
    fn nan_likelihood_is_contract_error() {
        assert!(matches!(atcl_value(&[f64::NAN], &[0.5], &[0.5], &[0.5]), Err(AiftError::Contract(_))));
    }

    #[test]
    fn atcl_partials_have_the_right_signs() {
        let mut g = Graph::new();
        let col = |v: f64| Tensor::new(vec![1, 1], vec![v]).unwrap();
        let vars: Vec<Var> = [0.6, 0.7, 0.3, 0.2].iter().map(|&v| g.param(&col(v))).collect();
        let l = atcl_loss(&mut g, vars[0], vars[1], vars[2], vars[3]).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(vars[0]).unwrap()[0] > 0.0);
        assert!(grads.get(vars[1]).unwrap()[0] > 0.0);
        assert!(grads.get(vars[2]).unwrap()[0] < 0.0);
        assert!(grads.get(vars[3]).unwrap()[0] < 0.0);
    }

    #[test]
    fn recon_cases() {
        let t = |v: f64| Tensor::new(vec![1, 1, 1, 1], vec![v]).unwrap();
        assert_eq!(recon_value(&t(1.0), &t(1.0), &t(0.0), &t(0.0)).unwrap(), 2.0);
        let x = Tensor::new(vec![1, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(recon_value(&x, &x, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(-2.5, 7.0, 0.0), -2.5);
        assert!((total_loss(-2.0, 4.0, 0.1) - (-1.6)).abs() < 1e-15);
    }
}
