//! Small feedforward networks, reverse-mode differentiation and Adam.

mod adam;
mod mlp;
mod tape;

pub use adam::{adam_step, Adam, Moments, BETA1, BETA2, EPS};
pub use mlp::{param_count, Mlp};
pub use tape::{Bound, Eval, Gradients, Ops, ParamBlock, Tape, Var};

use crate::error::{Error, Result};

/// Gradient of a scalar loss with respect to every parameter of `net`.
///
/// The closure receives a fresh tape and the network bound to it.
pub fn grad<'n, F>(net: &'n Mlp, loss: F) -> Result<Vec<f64>>
where
    F: FnOnce(&mut Tape<'n>, Bound<'n>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = tape.bind(net);
    let out = loss(&mut tape, bound)?;
    let value = tape.value(out);
    if !value.is_finite() {
        return Err(Error::numerical(format!("loss is {value}")));
    }
    let grads = tape.backward(out);
    let block = bound.params.expect("bound network carries its parameters");
    Ok(grads.block(block).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use rand::Rng;

    #[test]
    fn half_squared_norm_gradient_is_params() {
        let net = Mlp::init(&[3, 4, 1], &mut SeedStream::new(5).rng("n")).unwrap();
        let g = grad(&net, |t, b| {
            let block = b.params.unwrap();
            let sq: Vec<Var> = (0..block.len())
                .map(|i| {
                    let p = block.var(i);
                    t.mul(p, p)
                })
                .collect();
            let s = t.sum(&sq);
            Ok(t.affine(s, 0.5, 0.0))
        })
        .unwrap();
        assert_eq!(g, net.params());
    }

    #[test]
    fn unused_block_gets_zero_gradient() {
        let net = Mlp::init(&[2, 3, 1], &mut SeedStream::new(5).rng("n")).unwrap();
        let g = grad(&net, |t, b| {
            let p0 = b.params.unwrap().var(0);
            Ok(t.mul(p0, p0))
        })
        .unwrap();
        assert!(g[1..].iter().all(|&x| x == 0.0));
        assert_eq!(g[0], 2.0 * net.params()[0]);
    }

    #[test]
    fn non_finite_loss_faults() {
        let net = Mlp::zeros(&[1, 1]).unwrap();
        let r = grad(&net, |t, _| Ok(t.var(f64::NAN)));
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn l1_loss_matches_central_differences() {
        let s = SeedStream::new(11);
        let mut rng = s.rng("gc");
        let net = Mlp::init(&[6, 10, 1], &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = net.forward_scalar(&x).unwrap() + 0.5;
        let loss = |m: &Mlp| (m.forward_scalar(&x).unwrap() - target).abs();
        let g = grad(&net, |t, b| {
            let xs: Vec<Var> = x.iter().map(|&v| t.var(v)).collect();
            let y = t.mlp(b, &xs)?;
            let d = t.affine(y, 1.0, -target);
            Ok(t.abs(d))
        })
        .unwrap();
        let h = 1e-4;
        for i in 0..net.params().len() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let denom = fd.abs().max(g[i].abs()).max(1e-8);
            assert!((fd - g[i]).abs() / denom < 1e-5 || (fd - g[i]).abs() < 1e-10, "param {i}: {fd} vs {}", g[i]);
        }
    }
}
