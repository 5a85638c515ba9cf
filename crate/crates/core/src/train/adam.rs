use crate::model::{ParamGroup, Parameters};

/// Adam moments over the full parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Parameters,
    v: Parameters,
    t: u64,
}

impl Adam {
    /// Default hyper-parameters β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(like: &Parameters) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of every tensor whose group passes
    /// `trainable`.
    pub fn step(
        &mut self,
        params: &mut Parameters,
        grads: &Parameters,
        lr: f64,
        trainable: impl Fn(ParamGroup) -> bool,
    ) {
        self.t += 1;
        let g_named = grads.named();
        let m_named = self.m.named_mut();
        let v_named = self.v.named_mut();
        for (((name, p), (_, g)), ((_, m), (_, v))) in params
            .named_mut()
            .into_iter()
            .zip(g_named)
            .zip(m_named.into_iter().zip(v_named))
        {
            if trainable(ParamGroup::of(&name)) {
                adam_update(p, g, m, v, self.t, lr, self.beta1, self.beta2, self.eps);
            }
        }
    }
}

/// Bias-corrected Adam update on flat slices; `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        p[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Which parameter groups each phase updates.
pub fn pretrain_groups(g: ParamGroup) -> bool {
    g != ParamGroup::ClassifierHead
}

/// Fine-tuning leaves the MLM head frozen.
pub fn finetune_groups(g: ParamGroup) -> bool {
    g != ParamGroup::MlmHead
}
