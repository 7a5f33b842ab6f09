//! Hypergraph attention: per-frame joint-to-joint maps mixing pairwise
//! correlations with point-group correlations from each hypergraph.

use super::config::HamMode;
use super::layers::Conv1x1;
use crate::autodiff::{ContractKind, ParamStore, Session, TensorId};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Produces one row-normalized `(B,T,V,V)` attention map per enabled
/// hypergraph (the stacked view is `(S,B,T,V,V)`). In summed mode all
/// group terms collapse into a single shared map.
#[derive(Debug, Clone)]
pub struct HyperAttention {
    query: Conv1x1,
    key: Conv1x1,
    group_keys: Vec<Conv1x1>,
    pub embed_width: usize,
    pub mode: HamMode,
}

impl HyperAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        embed_width: usize,
        num_hypergraphs: usize,
        mode: HamMode,
    ) -> Self {
        let query = Conv1x1::new(store, rng, &format!("{name}.q"), c_in, embed_width, true);
        let key = Conv1x1::new(store, rng, &format!("{name}.k"), c_in, embed_width, true);
        let group_keys = (0..num_hypergraphs)
            .map(|s| Conv1x1::new(store, rng, &format!("{name}.hk{s}"), c_in, embed_width, true))
            .collect();
        HyperAttention {
            query,
            key,
            group_keys,
            embed_width,
            mode,
        }
    }

    /// `x (B,C,T,V)` and the hypergraph-averaged copies `hx[s] (B,C,T,V)`
    /// (from the same `x`). Logits are scaled by `1/sqrt(C_e)` before the
    /// row softmax.
    pub fn forward(
        &self,
        sess: &mut Session,
        store: &ParamStore,
        x: TensorId,
        hx: &[TensorId],
    ) -> Result<Vec<TensorId>> {
        if hx.len() != self.group_keys.len() {
            return Err(Error::Shape(format!(
                "attention got {} hypergraph features, built for {}",
                hx.len(),
                self.group_keys.len()
            )));
        }
        let q = self.query.forward(sess, store, x)?;
        let k = self.key.forward(sess, store, x)?;
        let scale = 1.0 / (self.embed_width as f64).sqrt();
        match self.mode {
            HamMode::PerBranch => {
                let mut maps = Vec::with_capacity(hx.len());
                for (s, &hxs) in hx.iter().enumerate() {
                    let hk = self.group_keys[s].forward(sess, store, hxs)?;
                    let keys = sess.tape.add(k, hk)?;
                    let logits = sess.tape.contract(ContractKind::PairwiseChannel, q, keys)?;
                    let scaled = sess.tape.scale(logits, scale)?;
                    maps.push(sess.tape.softmax_lastdim(scaled)?);
                }
                Ok(maps)
            }
            HamMode::Summed => {
                let mut keys = k;
                for (s, &hxs) in hx.iter().enumerate() {
                    let hk = self.group_keys[s].forward(sess, store, hxs)?;
                    keys = sess.tape.add(keys, hk)?;
                }
                let logits = sess.tape.contract(ContractKind::PairwiseChannel, q, keys)?;
                let scaled = sess.tape.scale(logits, scale)?;
                let map = sess.tape.softmax_lastdim(scaled)?;
                Ok(vec![map; hx.len()])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn zero_params(store: &mut ParamStore) {
        for p in store.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
    }

    #[test]
    fn zero_parameters_give_uniform_attention() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ham = HyperAttention::new(&mut store, &mut rng, "ham", 4, 2, 3, HamMode::PerBranch);
        zero_params(&mut store);
        let mut sess = Session::new();
        let x = sess.constant(Tensor::uniform(&[2, 4, 3, 5], 1.0, &mut rng));
        let hx: Vec<TensorId> = (0..3)
            .map(|_| sess.constant(Tensor::uniform(&[2, 4, 3, 5], 1.0, &mut rng)))
            .collect();
        let maps = ham.forward(&mut sess, &store, x, &hx).unwrap();
        assert_eq!(maps.len(), 3);
        for &m in &maps {
            assert_eq!(sess.tape.shape(m), &[2, 3, 5, 5]);
            for &v in sess.tape.value(m).data() {
                assert!((v - 0.2).abs() < 1e-12, "expected uniform 1/V, got {v}");
            }
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [HamMode::PerBranch, HamMode::Summed] {
            let ham = HyperAttention::new(&mut store, &mut rng, &format!("h{mode}"), 4, 2, 2, mode);
            let mut sess = Session::new();
            let x = sess.constant(Tensor::uniform(&[1, 4, 2, 6], 2.0, &mut rng));
            let hx: Vec<TensorId> = (0..2)
                .map(|_| sess.constant(Tensor::uniform(&[1, 4, 2, 6], 2.0, &mut rng)))
                .collect();
            let maps = ham.forward(&mut sess, &store, x, &hx).unwrap();
            for &m in &maps {
                for row in sess.tape.value(m).data().chunks(6) {
                    let sum: f64 = row.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn wrong_hypergraph_count_rejected() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ham = HyperAttention::new(&mut store, &mut rng, "ham", 4, 2, 3, HamMode::PerBranch);
        let mut sess = Session::new();
        let x = sess.constant(Tensor::zeros(&[1, 4, 2, 5]));
        let hx = vec![sess.constant(Tensor::zeros(&[1, 4, 2, 5]))];
        assert!(ham.forward(&mut sess, &store, x, &hx).is_err());
    }
}
