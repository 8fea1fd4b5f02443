use std::f64::consts::PI;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Cosine ramp from `base` at iteration 0 up to 1 at `iter_max`.
pub fn dynamic_momentum(iter: usize, iter_max: usize, base: f64) -> Result<f64> {
    if iter > iter_max {
        return Err(Error::OutOfRange(format!("iteration {iter} past iter_max {iter_max}")));
    }
    if !(base > 0.0 && base < 1.0) {
        return Err(Error::OutOfRange(format!("base momentum {base} outside (0, 1)")));
    }
    if iter_max == 0 {
        return Ok(1.0);
    }
    let cos = (PI * iter as f64 / iter_max as f64).cos();
    Ok(1.0 - (1.0 - base) * (cos + 1.0) / 2.0)
}

/// `key <- m * key + (1 - m) * query`, entry by entry.
pub fn momentum_update<T: Scalar>(key: &mut ParamStore<T>, query: &ParamStore<T>, m: f64) -> Result<()> {
    key.same_structure(query)?;
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::OutOfRange(format!("momentum {m} outside [0, 1]")));
    }
    let names: Vec<String> = key.names().map(str::to_string).collect();
    for name in names {
        let q = query.get(&name).unwrap();
        let k = key.get_mut(&name).unwrap();
        let blended: Vec<T> = k
            .as_slice()
            .iter()
            .zip(q.as_slice())
            .map(|(&kv, &qv)| {
                if m == 0.0 {
                    qv
                } else if m == 1.0 {
                    kv
                } else {
                    T::from_f64(m * kv.as_f64() + (1.0 - m) * qv.as_f64())
                }
            })
            .collect();
        *k = Tensor::from_vec(k.shape(), blended)?;
    }
    Ok(())
}
