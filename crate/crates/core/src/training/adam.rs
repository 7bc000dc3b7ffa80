use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::networks::checkpoint::NamedTensors;
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a named parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Adam {
        Adam {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    /// One bias-corrected Adam update. Returns the new parameter tensors in
    /// input order; nothing changes if any gradient is non-finite.
    pub fn step(&mut self, params: &[(String, Tensor)], grads: &[Tensor]) -> Result<Vec<Tensor>> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::invalid(format!(
                    "adam: gradient of `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut out = Vec::with_capacity(params.len());
        for ((name, p), g) in params.iter().zip(grads) {
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.numel()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.numel()]);
            let mut data = Vec::with_capacity(p.numel());
            for i in 0..p.numel() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data.push(p.data()[i] - lr * m_hat / (v_hat.sqrt() + eps));
            }
            out.push(Tensor::parameter(data, p.shape(), p.dtype())?);
        }
        Ok(out)
    }

    /// Moments and step counter as named tensors under `prefix`.
    pub fn to_entries(&self, prefix: &str, out: &mut NamedTensors) {
        out.insert(
            format!("{prefix}/step"),
            Tensor::with_dtype(vec![self.step as f64], &[1], DType::F64).expect("scalar"),
        );
        for (kind, map) in [("m", &self.m), ("v", &self.v)] {
            for (name, vals) in map {
                let t = Tensor::with_dtype(vals.clone(), &[vals.len()], DType::F64).expect("moment");
                out.insert(format!("{prefix}/{kind}/{name}"), t);
            }
        }
    }

    pub fn from_entries(config: AdamConfig, prefix: &str, entries: &NamedTensors) -> Result<Adam> {
        let step_key = format!("{prefix}/step");
        let step = entries
            .get(&step_key)
            .ok_or_else(|| Error::CheckpointMissing(vec![step_key.clone()]))?
            .data()[0] as u64;
        let mut adam = Adam::new(config);
        adam.step = step;
        for kind in ["m", "v"] {
            let p = format!("{prefix}/{kind}/");
            for (k, t) in entries.range(p.clone()..) {
                let Some(name) = k.strip_prefix(&p) else { break };
                let map = if kind == "m" { &mut adam.m } else { &mut adam.v };
                map.insert(name.to_string(), t.to_vec());
            }
        }
        Ok(adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Vec<(String, Tensor)> {
        vec![("p".into(), Tensor::parameter(vec![v], &[1], DType::F64).unwrap())]
    }

    #[test]
    fn first_step_hand_value() {
        let mut a = Adam::new(AdamConfig::new(1e-4));
        let p = a.step(&scalar_param(0.0), &[Tensor::new(vec![0.5], &[1]).unwrap()]).unwrap();
        let want = -1e-4 * 0.5 / (0.25f64.sqrt() + 1e-8);
        assert!((p[0].data()[0] - want).abs() < 1e-18);
        assert!((p[0].data()[0] + 9.9999e-5).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut a = Adam::new(AdamConfig::new(1e-3));
        let params = scalar_param(1.25);
        let p = a.step(&params, &[Tensor::zeros(&[1])]).unwrap();
        assert!(p[0].bit_eq(&params[0].1));
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut a = Adam::new(AdamConfig::new(1e-3));
        match a.step(&scalar_param(0.0), &[Tensor::new(vec![f64::NAN], &[1]).unwrap()]) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains('p')),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(a.step, 0);
    }

    #[test]
    fn entries_round_trip() {
        let mut a = Adam::new(AdamConfig::new(1e-3));
        a.step(&scalar_param(0.0), &[Tensor::new(vec![0.3], &[1]).unwrap()]).unwrap();
        let mut e = NamedTensors::new();
        a.to_entries("adam/x", &mut e);
        assert_eq!(Adam::from_entries(a.config, "adam/x", &e).unwrap(), a);
    }
}
