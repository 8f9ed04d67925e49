use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{ParamStore, Scalar, Tensor};

/// Initialization schemes for [`init_param`].
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot,
    Zeros,
    Ones,
    /// Uniform in ±limit.
    Uniform(f64),
    Const(f64),
}

/// Create and register one parameter. For 2-D shapes fan_in/fan_out are
/// rows/cols (conv kernels are stored as (width·cin)×cout, so fan_in already
/// includes the receptive field).
pub fn init_param<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    shape: Vec<usize>,
    init: Init,
) -> Result<()> {
    let n: usize = shape.iter().product();
    let data: Vec<T> = match init {
        Init::Zeros => vec![T::zero(); n],
        Init::Ones => vec![T::one(); n],
        Init::Const(v) => vec![T::cast_from(v); n],
        Init::Uniform(limit) => (0..n)
            .map(|_| T::cast_from((rng.random::<f64>() * 2.0 - 1.0) * limit))
            .collect(),
        Init::Glorot => {
            let (fan_in, fan_out) = match shape.as_slice() {
                [r, c] => (*r, *c),
                [c] => (*c, *c),
                _ => (n, n),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n)
                .map(|_| T::cast_from((rng.random::<f64>() * 2.0 - 1.0) * limit))
                .collect()
        }
    };
    store.insert(name, Tensor::new(shape, data)?);
    Ok(())
}

pub fn init_glorot<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    shape: Vec<usize>,
) -> Result<()> {
    init_param(store, rng, name, shape, Init::Glorot)
}

pub fn init_zeros<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    shape: Vec<usize>,
) -> Result<()> {
    init_param(store, rng, name, shape, Init::Zeros)
}
