use crate::error::AutodiffError;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{Mode, Tape, Var};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One forward/backward pass over a [`ParamStore`].
///
/// Parameters are copied onto the tape the first time they are used. Train-mode
/// batch norm writes its running statistics straight back into the store.
pub struct Session<'s, T: Real> {
    pub tape: Tape<T>,
    store: &'s mut ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    rng: ChaCha8Rng,
}

impl<'s, T: Real> Session<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, mode: Mode, seed: u64) -> Self {
        let n = store.len();
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; n],
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let v = self.tape.param(self.store.get(id).clone());
        self.bound[id.index()] = Some(v);
        v
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.tape.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
    ) -> Result<Var, AutodiffError> {
        let g = self.param(gamma);
        let b = self.param(beta);
        let (rm, rv) = self.store.pair_mut(running_mean, running_var);
        self.tape
            .batch_norm(x, g, b, rm.data_mut(), rv.data_mut(), self.mode)
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        self.tape.dropout(x, p, self.mode, &mut self.rng)
    }

    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        self.tape.backward(loss)
    }

    /// Gradients of every bound parameter, in store order. Parameters that
    /// were not reached by the loss get zeros.
    pub fn grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .map(|(i, v)| {
                let g = self
                    .tape
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.tape.value(v).shape()));
                (ParamId(i), g)
            })
            .collect()
    }
}
