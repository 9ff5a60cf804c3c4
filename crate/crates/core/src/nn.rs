//! Feed-forward blocks and dropout shared by the span encoder and the
//! scoring heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Graph, ParamId, Params, Tensor, Var};

/// `tanh(x W1 + b1) W2 + b2`: one hidden layer, linear output.
#[derive(Clone, Copy, Debug)]
pub struct Ffn {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Ffn {
    pub fn new<R: Rng>(
        params: &mut Params,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Ffn {
        Ffn {
            w1: params.add_xavier(&format!("{name}.w1"), input, hidden, rng),
            b1: params.add_zeros(&format!("{name}.b1"), 1, hidden),
            w2: params.add_xavier(&format!("{name}.w2"), hidden, output, rng),
            b2: params.add_zeros(&format!("{name}.b2"), 1, output),
            input,
            output,
        }
    }

    /// Resolves an existing block by name.
    pub fn lookup(params: &Params, name: &str) -> Option<Ffn> {
        let w1 = params.id(&format!("{name}.w1"))?;
        let w2 = params.id(&format!("{name}.w2"))?;
        Some(Ffn {
            w1,
            b1: params.id(&format!("{name}.b1"))?,
            w2,
            b2: params.id(&format!("{name}.b2"))?,
            input: params.get(w1).rows,
            output: params.get(w2).cols,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, dropout: &mut Dropout) -> Result<Var> {
        let x = dropout.apply(g, x)?;
        let w1 = g.param(self.w1);
        let b1 = g.param(self.b1);
        let w2 = g.param(self.w2);
        let b2 = g.param(self.b2);
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.tanh(h);
        let o = g.matmul(h, w2)?;
        g.add_row(o, b2)
    }
}

/// Inverted dropout driven by a seeded generator; a no-op at inference.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn inference() -> Dropout<'static> {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn training(rate: f64, rng: &'r mut ChaCha8Rng) -> Dropout<'r> {
        Dropout { rate, rng: Some(rng) }
    }

    pub fn is_active(&self) -> bool {
        self.rate > 0.0 && self.rng.is_some()
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let rate = self.rate;
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if rate <= 0.0 {
            return Ok(x);
        }
        let (r, c) = g.shape(x);
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..r * c)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        g.mul_const(x, Tensor::from_vec(r, c, mask))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn ffn_shapes_and_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Params::new();
        let f = Ffn::new(&mut p, "ffn", 6, 4, 2, &mut rng);
        let again = Ffn::lookup(&p, "ffn").unwrap();
        assert_eq!((again.input, again.output), (6, 2));
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::zeros(3, 6));
        let y = f.forward(&mut g, x, &mut Dropout::inference()).unwrap();
        assert_eq!(g.shape(y), (3, 2));
    }

    #[test]
    fn dropout_is_seeded_and_scaled() {
        let p = Params::new();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::new(&p);
            let x = g.constant(Tensor::from_vec(1, 1000, vec![1.0; 1000]));
            let mut d = Dropout::training(0.1, &mut rng);
            let y = d.apply(&mut g, x).unwrap();
            g.value(y).data.clone()
        };
        let a = run(5);
        assert_eq!(a, run(5));
        let zeros = a.iter().filter(|v| **v == 0.0).count();
        assert!((50..150).contains(&zeros), "{zeros}");
        assert!(a.iter().all(|v| *v == 0.0 || (*v - 1.0 / 0.9).abs() < 1e-12));
    }
}
