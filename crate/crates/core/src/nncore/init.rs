use super::{RngStream, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    GlorotUniform,
    Zeros,
}

/// Fan-in and fan-out in the Keras convention: the last axis is the output,
/// leading axes beyond the first are a receptive field.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [i, o] => (*i, *o),
        _ => {
            let field: usize = shape[..shape.len() - 2].iter().product();
            (field * shape[shape.len() - 2], field * shape[shape.len() - 1])
        }
    }
}

pub fn glorot_uniform(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let (fi, fo) = fans(shape);
    let lim = (6.0 / (fi + fo) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.uniform(-lim, lim);
    }
    t
}

pub fn init_params(shape: &[usize], scheme: InitScheme, rng: &mut RngStream) -> Tensor {
    match scheme {
        InitScheme::GlorotUniform => glorot_uniform(shape, rng),
        InitScheme::Zeros => Tensor::zeros(shape),
    }
}

/// LSTM bias `[4u]`: zeros except the forget-gate block, which is 1.
pub fn lstm_bias(units: usize) -> Tensor {
    let mut b = Tensor::zeros(&[4 * units]);
    b.data_mut()[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = init_params(&[7, 5, 3], InitScheme::GlorotUniform, &mut RngStream::new(1));
        let b = init_params(&[7, 5, 3], InitScheme::GlorotUniform, &mut RngStream::new(1));
        assert_eq!(a, b);
        let lim = (6.0f64 / (35 + 21) as f64).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= lim));
        assert_eq!(init_params(&[4], InitScheme::Zeros, &mut RngStream::new(1)).sum(), 0.0);
        assert_eq!(lstm_bias(2).data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empirical_mean_near_zero() {
        let t = glorot_uniform(&[400, 250], &mut RngStream::new(2));
        let n = t.len() as f64;
        let lim = (6.0f64 / 650.0).sqrt();
        let sigma = lim / 3f64.sqrt();
        let mean = t.sum() / n;
        assert!(mean.abs() < 3.0 * sigma / n.sqrt());
    }
}
