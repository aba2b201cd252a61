use std::collections::BTreeMap;

use unetgan_autograd::Real;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Adam with bias correction; moment estimates are kept per parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
}

impl Adam {
    /// Zero moments for every parameter in `store`.
    pub fn new(store: &ParamStore<f32>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: BTreeMap<String, Vec<f32>> = store
            .params
            .iter()
            .map(|(k, t)| (k.clone(), vec![0.0; t.data.len()]))
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update of every parameter named in `grads`; the rest of the
    /// store is left untouched.
    pub fn update(&mut self, store: &mut ParamStore<f32>, grads: &BTreeMap<String, Vec<f32>>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (name, g) in grads {
            let (Some(m), Some(v)) = (self.m.get_mut(name), self.v.get_mut(name)) else {
                return Err(Error::InvalidArgument(format!("no optimizer state for {name}")));
            };
            let p = &mut store.param_mut(name).data;
            if p.len() != g.len() {
                return Err(Error::Shape(format!("gradient for {name} has {} values, parameter {}", g.len(), p.len())));
            }
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `ema ← decay·ema + (1 − decay)·current`, parameter by parameter.
pub fn ema_update<T: Real>(ema: &mut ParamStore<T>, current: &ParamStore<T>, decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::InvalidArgument(format!("ema decay {decay} outside [0, 1)")));
    }
    if ema.params.len() != current.params.len() {
        return Err(Error::Shape("EMA and generator have different parameter sets".into()));
    }
    let d = T::lit(decay);
    for (name, e) in ema.params.iter_mut() {
        let c = current
            .params
            .get(name)
            .ok_or_else(|| Error::Shape(format!("generator lacks EMA parameter {name}")))?;
        if c.shape != e.shape {
            return Err(Error::Shape(format!("{name}: {:?} vs {:?}", e.shape, c.shape)));
        }
        if decay == 0.0 {
            e.data.copy_from_slice(&c.data);
        } else {
            e.data.iter_mut().zip(&c.data).for_each(|(a, &b)| *a = d * *a + (T::one() - d) * b);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NamedTensor;

    fn store(v: &[f32]) -> ParamStore<f32> {
        let mut s = ParamStore::default();
        s.insert_param("w", NamedTensor::new(&[v.len()], v.to_vec()));
        s
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut s = store(&[1.0, -2.0]);
        let mut opt = Adam::new(&s, 0.1, 0.0, 0.999, 1e-8);
        let grads = BTreeMap::from([("w".to_string(), vec![3.0, -0.5])]);
        opt.update(&mut s, &grads).unwrap();
        let p = &s.param("w").data;
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn untouched_params_keep_values() {
        let mut s = store(&[1.0]);
        s.insert_param("u", NamedTensor::new(&[1], vec![5.0]));
        let mut opt = Adam::new(&s, 0.1, 0.5, 0.9, 1e-8);
        opt.update(&mut s, &BTreeMap::from([("w".to_string(), vec![1.0])])).unwrap();
        assert_eq!(s.param("u").data, vec![5.0]);
    }

    #[test]
    fn ema_zero_decay_copies() {
        let mut e = store(&[1.0, 2.0]);
        ema_update(&mut e, &store(&[3.0, 4.0]), 0.0).unwrap();
        assert_eq!(e.param("w").data, vec![3.0, 4.0]);
        assert!(ema_update(&mut e, &store(&[1.0]), 0.5).is_err());
        assert!(ema_update(&mut e, &store(&[1.0, 1.0]), 1.0).is_err());
    }
}
