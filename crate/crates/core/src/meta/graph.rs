//! A fixed three-node computation graph over four primitives whose
//! per-node operation choice is learned: `n1 = op1(g1, g2)`,
//! `n2 = op2(g3, g4)`, `out = op3(n1, n2)`. With four candidate operations
//! per node the graph has twelve selection weights.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grpo::{train, CategoricalPolicy, Choice, GrpoError, Mask, PolicyRole, RolloutSampler, StepLog, TrainingConfig};
use crate::Scalar;

pub const NUM_NODES: usize = 3;
pub const NUM_WEIGHTS: usize = 12;
/// Graph outputs at or above this value predict outcome 1.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphOp {
    Add,
    Sub,
    Mul,
    /// Forwards the left operand.
    Pass,
}

impl GraphOp {
    pub const ALL: [GraphOp; 4] = [GraphOp::Add, GraphOp::Sub, GraphOp::Mul, GraphOp::Pass];

    pub fn apply<F: Scalar>(self, a: F, b: F) -> F {
        match self {
            GraphOp::Add => a + b,
            GraphOp::Sub => a - b,
            GraphOp::Mul => a * b,
            GraphOp::Pass => a,
        }
    }

    /// Partial derivatives with respect to the left and right operand.
    fn partials<F: Scalar>(self, a: F, b: F) -> (F, F) {
        match self {
            GraphOp::Add => (F::one(), F::one()),
            GraphOp::Sub => (F::one(), -F::one()),
            GraphOp::Mul => (b, a),
            GraphOp::Pass => (F::one(), F::zero()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("graph needs {NUM_WEIGHTS} weights over {NUM_NODES} nodes, got {0} operations per node")]
    WrongOpCount(usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Grpo(#[from] GrpoError),
}

/// One labelled example: primitive values and the true outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphExample<F> {
    pub g: [F; 4],
    pub outcome: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphMetaParams<F> {
    ops: Vec<GraphOp>,
    policy: CategoricalPolicy<F>,
}

impl<F: Scalar> GraphMetaParams<F> {
    /// Uniform weights over `ops` at every node.
    pub fn new(ops: Vec<GraphOp>) -> Result<Self, GraphError> {
        if ops.len() * NUM_NODES != NUM_WEIGHTS {
            return Err(GraphError::WrongOpCount(ops.len()));
        }
        let policy = CategoricalPolicy::uniform(vec![ops.len(); NUM_NODES], PolicyRole::Meta);
        Ok(Self { ops, policy })
    }

    pub fn weights(&self) -> &[F] {
        self.policy.params()
    }

    pub fn weights_mut(&mut self) -> &mut [F] {
        self.policy.params_mut()
    }

    pub fn ops(&self) -> &[GraphOp] {
        &self.ops
    }

    fn node_probs(&self, node: usize) -> Vec<F> {
        self.policy.probs(node, Mask::ALL)
    }

    /// Expected output with each node's operation mixed by its softmax.
    pub fn soft_output(&self, g: &[F; 4]) -> F {
        self.soft_forward(g).out
    }

    fn soft_forward(&self, g: &[F; 4]) -> Forward<F> {
        let p: Vec<Vec<F>> = (0..NUM_NODES).map(|n| self.node_probs(n)).collect();
        let mix = |node: usize, a: F, b: F| -> F { self.ops.iter().zip(&p[node]).map(|(op, &w)| w * op.apply(a, b)).sum() };
        let n1 = mix(0, g[0], g[1]);
        let n2 = mix(1, g[2], g[3]);
        let out = mix(2, n1, n2);
        Forward { p, n1, n2, out }
    }

    /// Output with a discrete operation index per node.
    pub fn hard_output(&self, g: &[F; 4], choice: [usize; NUM_NODES]) -> F {
        hard_output(&self.ops, g, choice)
    }

    pub fn greedy_ops(&self) -> [usize; NUM_NODES] {
        std::array::from_fn(|n| self.policy.greedy(n, Mask::ALL))
    }

    /// Gradient of the soft output with respect to the twelve weights.
    fn soft_grad(&self, g: &[F; 4], f: &Forward<F>) -> Vec<F> {
        let k = self.ops.len();
        let mut grad = vec![F::zero(); NUM_WEIGHTS];
        let (mut d_n1, mut d_n2) = (F::zero(), F::zero());
        for (j, op) in self.ops.iter().enumerate() {
            let (da, db) = op.partials(f.n1, f.n2);
            d_n1 = d_n1 + f.p[2][j] * da;
            d_n2 = d_n2 + f.p[2][j] * db;
        }
        let mut node = |n: usize, upstream: F, a: F, b: F, value: F| {
            for (j, op) in self.ops.iter().enumerate() {
                grad[n * k + j] = upstream * f.p[n][j] * (op.apply(a, b) - value);
            }
        };
        node(0, d_n1, g[0], g[1], f.n1);
        node(1, d_n2, g[2], g[3], f.n2);
        node(2, F::one(), f.n1, f.n2, f.out);
        grad
    }
}

struct Forward<F> {
    p: Vec<Vec<F>>,
    n1: F,
    n2: F,
    out: F,
}

fn label<F: Scalar>(outcome: bool) -> F {
    if outcome {
        F::one()
    } else {
        F::zero()
    }
}

/// Mean squared error of the soft output and its gradient.
pub fn mse_and_grad<F: Scalar>(graph: &GraphMetaParams<F>, corpus: &[GraphExample<F>]) -> (F, Vec<F>) {
    let n = F::lit(corpus.len() as f64);
    let mut loss = F::zero();
    let mut grad = vec![F::zero(); NUM_WEIGHTS];
    for ex in corpus {
        let f = graph.soft_forward(&ex.g);
        let err = f.out - label::<F>(ex.outcome);
        loss = loss + err * err / n;
        let scale = F::lit(2.0) * err / n;
        for (acc, d) in grad.iter_mut().zip(graph.soft_grad(&ex.g, &f)) {
            *acc = *acc + scale * d;
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub steps: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2.0,
            steps: 500,
        }
    }
}

/// Regresses the soft output onto the outcome labels by full-batch
/// gradient descent. Returns the fitted graph and its final MSE.
pub fn graph_fit_sft<F: Scalar>(
    graph: &GraphMetaParams<F>,
    corpus: &[GraphExample<F>],
    cfg: &SftConfig,
) -> Result<(GraphMetaParams<F>, F), GraphError> {
    if corpus.is_empty() {
        return Err(GraphError::EmptyCorpus);
    }
    let mut g = graph.clone();
    let lr = F::lit(cfg.learning_rate);
    for _ in 0..cfg.steps {
        let (_, grad) = mse_and_grad(&g, corpus);
        for (w, d) in g.weights_mut().iter_mut().zip(grad) {
            *w = *w - lr * d;
        }
    }
    let (mse, _) = mse_and_grad(&g, corpus);
    Ok((g, mse))
}

/// Fraction of examples with `|soft output - outcome| < 0.5`.
pub fn soft_agreement<F: Scalar>(graph: &GraphMetaParams<F>, corpus: &[GraphExample<F>]) -> f64 {
    let half = F::lit(0.5);
    let hits = corpus
        .iter()
        .filter(|ex| (graph.soft_output(&ex.g) - label::<F>(ex.outcome)).abs() < half)
        .count();
    hits as f64 / corpus.len().max(1) as f64
}

fn hard_output<F: Scalar>(ops: &[GraphOp], g: &[F; 4], choice: [usize; NUM_NODES]) -> F {
    let n1 = ops[choice[0]].apply(g[0], g[1]);
    let n2 = ops[choice[1]].apply(g[2], g[3]);
    ops[choice[2]].apply(n1, n2)
}

fn matches<F: Scalar>(ops: &[GraphOp], ex: &GraphExample<F>, choice: [usize; NUM_NODES]) -> bool {
    (hard_output(ops, &ex.g, choice) >= F::lit(THRESHOLD)) == ex.outcome
}

/// Fraction of examples where the greedy discrete graph predicts the outcome.
pub fn match_rate<F: Scalar>(graph: &GraphMetaParams<F>, corpus: &[GraphExample<F>]) -> f64 {
    let choice = graph.greedy_ops();
    let hits = corpus.iter().filter(|ex| matches(&graph.ops, ex, choice)).count();
    hits as f64 / corpus.len().max(1) as f64
}

struct OpSampler<'a, F> {
    corpus: &'a [GraphExample<F>],
}

impl<F: Scalar> RolloutSampler<F> for OpSampler<'_, F> {
    type Context = GraphExample<F>;
    type Output = [usize; NUM_NODES];

    fn contexts(&self) -> &[GraphExample<F>] {
        self.corpus
    }

    fn sample(&self, policy: &CategoricalPolicy<F>, _: &GraphExample<F>, rng: &mut ChaCha8Rng) -> ([usize; NUM_NODES], Vec<Choice>) {
        let ops: [usize; NUM_NODES] = std::array::from_fn(|n| policy.sample(n, Mask::ALL, rng));
        let choices = ops.iter().enumerate().map(|(n, &a)| Choice::new(n, a)).collect();
        (ops, choices)
    }
}

/// Trains the operation weights by GRPO: per example, a group of discrete
/// graphs is sampled and each earns 1 iff its thresholded output matches
/// the outcome.
pub fn graph_fit_rl<F: Scalar>(
    graph: &GraphMetaParams<F>,
    corpus: &[GraphExample<F>],
    cfg: &TrainingConfig,
) -> Result<(GraphMetaParams<F>, Vec<StepLog>), GraphError> {
    if corpus.is_empty() {
        return Err(GraphError::EmptyCorpus);
    }
    let sampler = OpSampler { corpus };
    let reward = |choice: &[usize; NUM_NODES], ex: &GraphExample<F>| Ok(label::<F>(matches(&graph.ops, ex, *choice)));
    let out = train(graph.policy.clone(), &sampler, reward, cfg)?;
    Ok((
        GraphMetaParams {
            ops: graph.ops.clone(),
            policy: out.policy,
        },
        out.log,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> GraphMetaParams<f64> {
        GraphMetaParams::new(GraphOp::ALL.to_vec()).unwrap()
    }

    #[test]
    fn exactly_twelve_weights() {
        assert_eq!(graph().weights().len(), NUM_WEIGHTS);
        assert!(GraphMetaParams::<f64>::new(vec![]).is_err());
        assert!(GraphMetaParams::<f64>::new(vec![GraphOp::Add; 3]).is_err());
    }

    #[test]
    fn soft_grad_matches_finite_differences() {
        let mut g = graph();
        for (i, w) in g.weights_mut().iter_mut().enumerate() {
            *w = (i as f64 * 0.37).sin();
        }
        let corpus = [
            GraphExample {
                g: [0.2, 0.9, 0.4, 0.1],
                outcome: true,
            },
            GraphExample {
                g: [0.7, 0.3, 0.5, 0.8],
                outcome: false,
            },
        ];
        let (_, grad) = mse_and_grad(&g, &corpus);
        let h = 1e-6;
        for i in 0..NUM_WEIGHTS {
            let mut p = g.clone();
            p.weights_mut()[i] += h;
            let mut m = g.clone();
            m.weights_mut()[i] -= h;
            let fd = (mse_and_grad(&p, &corpus).0 - mse_and_grad(&m, &corpus).0) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8, "weight {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn constant_outcome_is_fit() {
        let corpus: Vec<_> = (0..20)
            .map(|i| GraphExample {
                g: [0.0, (i as f64) / 20.0, 0.5, 0.25],
                outcome: false,
            })
            .collect();
        let (_, mse) = graph_fit_sft(&graph(), &corpus, &SftConfig::default()).unwrap();
        assert!(mse < 1e-3, "{mse}");
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(graph_fit_sft::<f64>(&graph(), &[], &SftConfig::default()).is_err());
        assert!(graph_fit_rl::<f64>(&graph(), &[], &TrainingConfig::default()).is_err());
    }
}
