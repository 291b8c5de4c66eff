//! Differentiable training objectives, expressed per sequence as a loss and
//! its derivatives with respect to the target log-probabilities and value
//! estimates. All objectives are minimized.

/// A `(source, target)` id pair. The target includes the final EOS if the
/// episode produced one.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

/// Loss contribution of one sequence and its partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTerms {
    pub loss: f64,
    pub d_logp: Vec<f64>,
    pub d_value: Vec<f64>,
}

impl SequenceTerms {
    pub fn zeros(len: usize) -> Self {
        Self {
            loss: 0.0,
            d_logp: vec![0.0; len],
            d_value: vec![0.0; len],
        }
    }
}

pub trait Objective {
    fn sequences(&self) -> &[Sequence];

    /// `logp[t]` and `values[t]` are the current model outputs at step `t`.
    fn terms(&self, index: usize, logp: &[f64], values: &[f64]) -> SequenceTerms;

    /// When true, value-loss derivatives reach only the value head; the
    /// shared layers see the policy terms alone (a stop-gradient on the
    /// value head's input features).
    fn detach_value(&self) -> bool {
        false
    }
}

/// Teacher-forced negative log-likelihood averaged over target tokens.
#[derive(Debug, Clone)]
pub struct MleObjective {
    sequences: Vec<Sequence>,
    n_tokens: usize,
}

impl MleObjective {
    pub fn new(sequences: Vec<Sequence>) -> Self {
        let n_tokens = sequences.iter().map(|s| s.tgt.len()).sum::<usize>().max(1);
        Self { sequences, n_tokens }
    }
}

impl Objective for MleObjective {
    fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    fn terms(&self, _index: usize, logp: &[f64], _values: &[f64]) -> SequenceTerms {
        let n = self.n_tokens as f64;
        SequenceTerms {
            loss: -logp.iter().sum::<f64>() / n,
            d_logp: vec![-1.0 / n; logp.len()],
            d_value: vec![0.0; logp.len()],
        }
    }
}

/// Policy-gradient surrogate `-(1/N) Σ_i Σ_t w_it log p(y_it)`; the weights
/// carry the (sentence or reward-to-go) return.
#[derive(Debug, Clone)]
pub struct ReinforceObjective {
    sequences: Vec<Sequence>,
    weights: Vec<Vec<f64>>,
}

impl ReinforceObjective {
    pub fn new(sequences: Vec<Sequence>, weights: Vec<Vec<f64>>) -> Self {
        assert_eq!(sequences.len(), weights.len());
        for (s, w) in sequences.iter().zip(&weights) {
            assert_eq!(s.tgt.len(), w.len(), "one weight per target token");
        }
        Self { sequences, weights }
    }
}

impl Objective for ReinforceObjective {
    fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    fn terms(&self, index: usize, logp: &[f64], _values: &[f64]) -> SequenceTerms {
        let n = self.sequences.len().max(1) as f64;
        let w = &self.weights[index];
        SequenceTerms {
            loss: -w.iter().zip(logp).map(|(w, l)| w * l).sum::<f64>() / n,
            d_logp: w.iter().map(|w| -w / n).collect(),
            d_value: vec![0.0; logp.len()],
        }
    }
}

/// Per-token data for the clipped surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoTarget {
    pub old_logp: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Clipped surrogate plus value regression, both averaged over tokens:
/// `-mean min(ρA, clip(ρ,1-ε,1+ε)A) + c_v · 0.5 · mean (V - R)²`.
#[derive(Debug, Clone)]
pub struct PpoObjective {
    sequences: Vec<Sequence>,
    targets: Vec<PpoTarget>,
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub detach_value: bool,
    n_tokens: usize,
}

impl PpoObjective {
    pub fn new(sequences: Vec<Sequence>, targets: Vec<PpoTarget>, clip_epsilon: f64, value_coef: f64) -> Self {
        assert_eq!(sequences.len(), targets.len());
        for (s, t) in sequences.iter().zip(&targets) {
            let n = s.tgt.len();
            assert!(t.old_logp.len() == n && t.advantages.len() == n && t.returns.len() == n);
        }
        let n_tokens = sequences.iter().map(|s| s.tgt.len()).sum::<usize>().max(1);
        Self {
            sequences,
            targets,
            clip_epsilon,
            value_coef,
            detach_value: false,
            n_tokens,
        }
    }

    pub fn with_detached_value(mut self, detach: bool) -> Self {
        self.detach_value = detach;
        self
    }

    pub fn targets(&self) -> &[PpoTarget] {
        &self.targets
    }
}

/// `min(ρA, clip(ρ, 1-ε, 1+ε)A)` and whether the clipped branch is active.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if clipped < unclipped {
        (clipped, true)
    } else {
        (unclipped, false)
    }
}

impl Objective for PpoObjective {
    fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    fn terms(&self, index: usize, logp: &[f64], values: &[f64]) -> SequenceTerms {
        let n = self.n_tokens as f64;
        let target = &self.targets[index];
        let mut out = SequenceTerms::zeros(logp.len());
        for t in 0..logp.len() {
            let ratio = (logp[t] - target.old_logp[t]).exp();
            let a = target.advantages[t];
            let (surrogate, clipped) = clipped_surrogate(ratio, a, self.clip_epsilon);
            out.loss -= surrogate / n;
            if !clipped {
                out.d_logp[t] = -ratio * a / n;
            }
            let err = values[t] - target.returns[t];
            out.loss += self.value_coef * 0.5 * err * err / n;
            out.d_value[t] = self.value_coef * err / n;
        }
        out
    }

    fn detach_value(&self) -> bool {
        self.detach_value
    }
}

/// Identically zero; its gradient is the zero tensor collection.
#[derive(Debug, Clone)]
pub struct ZeroObjective {
    sequences: Vec<Sequence>,
}

impl ZeroObjective {
    pub fn new(sequences: Vec<Sequence>) -> Self {
        Self { sequences }
    }
}

impl Objective for ZeroObjective {
    fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    fn terms(&self, _index: usize, logp: &[f64], _values: &[f64]) -> SequenceTerms {
        SequenceTerms::zeros(logp.len())
    }
}
