//! Hypergraph convolution: channel-level topology refinement. One unit per
//! enabled hypergraph; each unit fuses a channel-difference map, a
//! hypergraph-difference map, the static adjacency, and the gated attention
//! branch, all applied to its own value transform.

use super::config::XiInput;
use super::layers::Conv1x1;
use crate::autodiff::{ContractKind, ParamId, ParamStore, Session, TensorId};
use crate::error::Result;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct HgcmUnit {
    phi: Conv1x1,
    psi: Conv1x1,
    xi: Conv1x1,
    delta: Conv1x1,
    expand_static: Conv1x1,
    expand_hyper: Conv1x1,
    gate: ParamId,
    xi_input: XiInput,
}

impl HgcmUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        embed_width: usize,
        gate_init: f64,
        xi_input: XiInput,
    ) -> Self {
        HgcmUnit {
            phi: Conv1x1::new(store, rng, &format!("{name}.phi"), c_in, embed_width, true),
            psi: Conv1x1::new(store, rng, &format!("{name}.psi"), c_in, embed_width, true),
            xi: Conv1x1::new(store, rng, &format!("{name}.xi"), c_in, embed_width, true),
            delta: Conv1x1::new(store, rng, &format!("{name}.delta"), c_in, c_out, true),
            expand_static: Conv1x1::new(
                store,
                rng,
                &format!("{name}.expand_static"),
                embed_width,
                c_out,
                true,
            ),
            expand_hyper: Conv1x1::new(
                store,
                rng,
                &format!("{name}.expand_hyper"),
                embed_width,
                c_out,
                true,
            ),
            gate: store.add(format!("{name}.gate"), Tensor::scalar(gate_init), true),
            xi_input,
        }
    }

    /// `x (B,C_in,T,V)`, this unit's hypergraph feature `hx_s`, its attention
    /// map `ha_s (B,T,V,V)`, and the constant normalized adjacency `(V,V)`.
    ///
    /// Output `(B,C_out,T,V)`:
    /// the per-channel topology `lift(tanh(phi(x̄)_i - psi(x̄)_j)) +
    /// lift(tanh(phi(x̄)_i - xi(h̄_s)_j)) + A` applied to `delta(x)`, plus the
    /// gated attention contraction `ha_s · delta(x)`.
    pub fn forward(
        &self,
        sess: &mut Session,
        store: &ParamStore,
        x: TensorId,
        hx_s: TensorId,
        ha_s: TensorId,
        adjacency: TensorId,
    ) -> Result<TensorId> {
        debug_assert!(attention_rows_normalized(sess, ha_s));
        // Temporal pooling first: these branches model channel-level
        // topology, not per-frame maps.
        let x_bar = sess.tape.mean_axes(x, &[2])?; // (B,C,V)
        let phi = self.phi.forward(sess, store, x_bar)?;
        let psi = self.psi.forward(sess, store, x_bar)?;
        let xi_in = match self.xi_input {
            XiInput::Hypergraph => sess.tape.mean_axes(hx_s, &[2])?,
            XiInput::Feature => x_bar,
        };
        let xi = self.xi.forward(sess, store, xi_in)?;

        let diff_static = sess.tape.pairwise_diff(phi, psi)?;
        let map_static = sess.tape.tanh(diff_static)?;
        let diff_hyper = sess.tape.pairwise_diff(phi, xi)?;
        let map_hyper = sess.tape.tanh(diff_hyper)?;

        let lift_static = self.expand_static.forward(sess, store, map_static)?;
        let lift_hyper = self.expand_hyper.forward(sess, store, map_hyper)?;
        let refined = sess.tape.add(lift_static, lift_hyper)?;
        let topology = sess.tape.add_broadcast(refined, adjacency)?; // + A

        let values = self.delta.forward(sess, store, x)?;
        let static_out = sess
            .tape
            .contract(ContractKind::ChannelTopologyApply, topology, values)?;
        let attn_out = sess
            .tape
            .contract(ContractKind::AttentionApply, ha_s, values)?;
        let gate = sess.param(store, self.gate);
        let gated = sess.tape.mul_scalar_param(attn_out, gate)?;
        sess.tape.add(static_out, gated)
    }
}

fn attention_rows_normalized(sess: &Session, ha: TensorId) -> bool {
    let t = sess.tape.value(ha);
    let v = *t.shape().last().unwrap();
    t.data()
        .chunks(v)
        .all(|row| (row.iter().sum::<f64>() - 1.0).abs() < 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zero_all(store: &mut ParamStore) {
        for p in store.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
    }

    #[test]
    fn cancelled_maps_reduce_to_plain_graph_convolution() {
        // With phi == psi == xi and features identical across joints, the
        // pairwise differences cancel, the tanh maps vanish (lift biases
        // zeroed), and a zero gate drops the attention branch: the unit
        // reduces to delta(x) contracted with A alone.
        let (b, c_in, c_out, ce, t, v) = (2, 4, 5, 2, 3, 4);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let unit = HgcmUnit::new(&mut store, &mut rng, "u", c_in, c_out, ce, 0.0, XiInput::Hypergraph);
        // Force phi == psi == xi by copying values; zero the lift biases.
        let phi_w = store.by_name("u.phi.w").unwrap().value.clone();
        let phi_b = store.by_name("u.phi.b").unwrap().value.clone();
        for name in ["u.psi", "u.xi"] {
            let w = store.iter().position(|p| p.name == format!("{name}.w")).unwrap();
            store.get_mut(crate::autodiff::ParamId(w)).value = phi_w.clone();
            let bb = store.iter().position(|p| p.name == format!("{name}.b")).unwrap();
            store.get_mut(crate::autodiff::ParamId(bb)).value = phi_b.clone();
        }
        for name in ["u.expand_static.b", "u.expand_hyper.b"] {
            let i = store.iter().position(|p| p.name == name).unwrap();
            store.get_mut(crate::autodiff::ParamId(i)).value = Tensor::zeros(&[c_out]);
        }

        // Joint-constant input: x[b,c,t,:] is one value, so pooled features
        // are equal across joints and hypergraph averaging is the identity.
        let mut xt = Tensor::zeros(&[b, c_in, t, v]);
        for bi in 0..b {
            for c in 0..c_in {
                for ti in 0..t {
                    let val = 0.1 * (bi + 2 * c + 3 * ti) as f64 - 0.4;
                    for j in 0..v {
                        xt.set(&[bi, c, ti, j], val);
                    }
                }
            }
        }
        let mut sess = Session::new();
        let x = sess.constant(xt);
        let hx = x; // identical features
        let ha = sess.constant(Tensor::filled(&[b, t, v, v], 1.0 / v as f64));
        let mut a = Tensor::zeros(&[v, v]);
        for i in 0..v {
            for j in 0..v {
                a.set(&[i, j], 0.1 * (i + 2 * j) as f64);
            }
        }
        let a_id = sess.constant(a.clone());
        let y = unit.forward(&mut sess, &store, x, hx, ha, a_id).unwrap();

        // Oracle: delta(x) then contract with A over joints.
        let w = store.by_name("u.delta.w").unwrap().value.clone();
        let bias = store.by_name("u.delta.b").unwrap().value.clone();
        let dx = crate::autodiff::kernels::conv1x1(
            sess.tape.value(x),
            &w,
            Some(&bias),
        )
        .unwrap();
        let expect = crate::autodiff::kernels::contract(
            ContractKind::JointMatrixApply,
            &a,
            &dx,
        )
        .unwrap();
        assert!(sess.tape.value(y).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn identity_adjacency_and_zeroed_maps_pass_delta_through() {
        let (b, c, t, v) = (1, 3, 2, 4);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let unit = HgcmUnit::new(&mut store, &mut rng, "u", c, c, 2, 0.0, XiInput::Feature);
        zero_all(&mut store);
        // delta = identity channel mix
        let di = store.iter().position(|p| p.name == "u.delta.w").unwrap();
        let mut eye = Tensor::zeros(&[c, c]);
        for i in 0..c {
            eye.set(&[i, i], 1.0);
        }
        store.get_mut(crate::autodiff::ParamId(di)).value = eye;

        let mut sess = Session::new();
        let x = sess.constant(Tensor::uniform(&[b, c, t, v], 1.0, &mut rng));
        let ha = sess.constant(Tensor::filled(&[b, t, v, v], 1.0 / v as f64));
        let mut a = Tensor::zeros(&[v, v]);
        for i in 0..v {
            a.set(&[i, i], 1.0);
        }
        let a_id = sess.constant(a);
        let y = unit.forward(&mut sess, &store, x, x, ha, a_id).unwrap();
        assert!(sess.tape.value(y).max_abs_diff(sess.tape.value(x)) < 1e-12);
    }
}
