//! Small parameterized layers shared by the model modules.

use crate::autodiff::{ParamId, ParamStore, Session, TensorId};
use crate::error::Result;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

/// Pointwise channel mix with optional bias; weights drawn from a symmetric
/// uniform at scale 1/sqrt(fan_in) unless overridden.
#[derive(Debug, Clone)]
pub struct Conv1x1 {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Conv1x1 {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        bias: bool,
    ) -> Self {
        let scale = 1.0 / (c_in as f64).sqrt();
        Self::with_scale(store, rng, name, c_in, c_out, bias, scale)
    }

    pub fn with_scale(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        bias: bool,
        scale: f64,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            Tensor::uniform(&[c_out, c_in], scale, rng),
            true,
        );
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[c_out]), false));
        Conv1x1 { w, b }
    }

    pub fn forward(&self, sess: &mut Session, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let w = sess.param(store, self.w);
        let b = self.b.map(|b| sess.param(store, b));
        sess.tape.conv1x1(x, w, b)
    }
}

/// 1-D convolution along the frame axis with stride/dilation and same
/// padding; kernel 1 with stride doubles as a strided projection.
#[derive(Debug, Clone)]
pub struct TemporalConvLayer {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl TemporalConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        bias: bool,
    ) -> Self {
        let scale = 1.0 / ((c_in * kernel) as f64).sqrt();
        let w = store.add(
            format!("{name}.w"),
            Tensor::uniform(&[c_out, c_in, kernel], scale, rng),
            true,
        );
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[c_out]), false));
        TemporalConvLayer {
            w,
            b,
            kernel,
            stride,
            dilation,
        }
    }

    pub fn forward(&self, sess: &mut Session, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let w = sess.param(store, self.w);
        let b = self.b.map(|b| sess.param(store, b));
        sess.tape
            .temporal_conv(x, w, b, self.stride, self.dilation)
    }
}
