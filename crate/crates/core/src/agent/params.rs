use std::ops::Range;

use rand::Rng as _;

use crate::rng;

/// Shapes of every parameter block, all stored in one flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    /// Token vocabulary size.
    pub tokens: usize,
    /// Landmark vocabulary size.
    pub landmarks: usize,
    pub embed: usize,
}

impl Dims {
    /// Per-step trajectory features: here, visible, stop, move, bias.
    pub fn traj_features(&self) -> usize {
        2 * self.landmarks + 3
    }

    /// Policy input: here, visible, previous action (3), u, z, bias.
    pub fn policy_input(&self) -> usize {
        2 * self.landmarks + 3 + 2 * self.embed + 1
    }

    /// Candidate features: stop flag, here (stop only), landmarks in the
    /// move direction, cos and sin of the turn, move bias, then four
    /// grounding counts.
    pub fn candidate(&self) -> usize {
        2 * self.landmarks + 8
    }
}

/// Named views into the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub dims: Dims,
    pub token_embedding: Range<usize>,
    pub traj_projection: Range<usize>,
    pub g_w1: Range<usize>,
    pub g_b1: Range<usize>,
    pub g_w2: Range<usize>,
    pub g_b2: Range<usize>,
    pub rec_a: Range<usize>,
    pub rec_b: Range<usize>,
    pub rec_bias: Range<usize>,
    pub action: Range<usize>,
    pub len: usize,
}

impl Layout {
    pub fn new(dims: Dims) -> Self {
        let d = dims.embed;
        let mut at = 0;
        let mut block = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let token_embedding = block(dims.tokens * d);
        let traj_projection = block(d * dims.traj_features());
        let g_w1 = block(d * 2 * d);
        let g_b1 = block(d);
        let g_w2 = block(d * d);
        let g_b2 = block(d);
        let rec_a = block(4 * d * d);
        let rec_b = block(4 * d * d);
        let rec_bias = block(2 * d);
        let action = block(dims.candidate() * dims.policy_input());
        Layout {
            dims,
            token_embedding,
            traj_projection,
            g_w1,
            g_b1,
            g_w2,
            g_b2,
            rec_a,
            rec_b,
            rec_bias,
            action,
            len: at,
        }
    }

    /// `(name, range)` of every block, in storage order.
    pub fn blocks(&self) -> [(&'static str, Range<usize>); 10] {
        [
            ("token_embedding", self.token_embedding.clone()),
            ("traj_projection", self.traj_projection.clone()),
            ("g_w1", self.g_w1.clone()),
            ("g_b1", self.g_b1.clone()),
            ("g_w2", self.g_w2.clone()),
            ("g_b2", self.g_b2.clone()),
            ("rec_a", self.rec_a.clone()),
            ("rec_b", self.rec_b.clone()),
            ("rec_bias", self.rec_bias.clone()),
            ("action", self.action.clone()),
        ]
    }
}

pub const INIT_SCALE: f64 = 0.08;

/// All learnable parameters of the context network and the policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(dims: Dims) -> Self {
        let layout = Layout::new(dims);
        PolicyParams { values: vec![0.0; layout.len], layout }
    }

    /// Uniform in `[-0.08, 0.08]`.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut p = Self::zeros(dims);
        let mut rng = rng::stream(seed, &[rng::tag::PARAM_INIT]);
        for v in &mut p.values {
            *v = rng.gen_range(-INIT_SCALE..=INIT_SCALE);
        }
        p
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn unflatten(dims: Dims, values: Vec<f64>) -> Option<Self> {
        let layout = Layout::new(dims);
        (values.len() == layout.len).then_some(PolicyParams { layout, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn block(&self, r: &Range<usize>) -> &[f64] {
        &self.values[r.clone()]
    }
}

/// `out = M x` for a row-major `rows x x.len()` matrix.
pub(crate) fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out += M^T y`.
pub(crate) fn matvec_t_add(m: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (&yi, row) in y.iter().zip(m.chunks_exact(cols)) {
        if yi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
    }
}

/// `grad += y x^T`.
pub(crate) fn outer_add(grad: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (&yi, row) in y.iter().zip(grad.chunks_exact_mut(cols)) {
        if yi != 0.0 {
            for (g, xj) in row.iter_mut().zip(x) {
                *g += yi * xj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let l = Layout::new(Dims { tokens: 7, landmarks: 3, embed: 4 });
        let mut next = 0;
        for (_, r) in l.blocks() {
            assert_eq!(r.start, next);
            next = r.end;
        }
        assert_eq!(next, l.len);
    }

    #[test]
    fn flatten_round_trip() {
        let dims = Dims { tokens: 5, landmarks: 2, embed: 3 };
        let p = PolicyParams::init(dims, 1);
        assert!(p.values.iter().all(|v| v.abs() <= INIT_SCALE));
        assert_eq!(PolicyParams::unflatten(dims, p.flatten()).unwrap(), p);
        assert!(PolicyParams::unflatten(dims, vec![0.0; 3]).is_none());
    }
}
