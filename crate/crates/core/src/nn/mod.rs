//! The two view encoders, their parameters, Adam and the learning-rate
//! schedule.

mod adam;
mod checkpoint;
mod encoder;

pub use adam::{Adam, LrSchedule};
pub use checkpoint::{load_weights, save_weights, WEIGHTS_MAGIC};
pub use encoder::{
    embed, embed_indices, embed_with_loss, encode, knn_indices, EncoderInput, LossGrads, COORD_SCALE,
    GRAPH_CHUNK, KNN_K, LEAKY_SLOPE,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Width of every embedding.
pub const EMBED_DIM: usize = 10;
/// Points per fiber the geometric encoder accepts.
pub const GEO_POINTS: usize = 25;
/// Samples per endpoint series the functional encoder accepts.
pub const BOLD_LEN: usize = 600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum View {
    Geometric,
    Functional,
}

impl View {
    pub fn tag(self) -> u8 {
        match self {
            View::Geometric => 1,
            View::Functional => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<View> {
        match tag {
            1 => Some(View::Geometric),
            2 => Some(View::Functional),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Geometric => "geo",
            View::Functional => "func",
        }
    }

    /// Parameter names and shapes in storage order.
    pub fn layout(self) -> &'static [(&'static str, usize, usize)] {
        match self {
            View::Geometric => &[
                ("edge1.w1", 6, 32),
                ("edge1.b1", 1, 32),
                ("edge1.w2", 32, 32),
                ("edge1.b2", 1, 32),
                ("edge2.w1", 64, 64),
                ("edge2.b1", 1, 64),
                ("edge2.w2", 64, 64),
                ("edge2.b2", 1, 64),
                ("head.w", 64, EMBED_DIM),
                ("head.b", 1, EMBED_DIM),
            ],
            View::Functional => &[
                ("mlp.w1", BOLD_LEN, 64),
                ("mlp.b1", 1, 64),
                ("mlp.w2", 64, 32),
                ("mlp.b2", 1, 32),
                ("head.w", 32, EMBED_DIM),
                ("head.b", 1, EMBED_DIM),
            ],
        }
    }
}

impl std::str::FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geo" | "geometric" | "1" => Ok(View::Geometric),
            "func" | "functional" | "2" => Ok(View::Functional),
            other => Err(Error::Config(format!("unknown view `{other}`"))),
        }
    }
}

/// Parameters of one view's encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    view: View,
    tensors: Vec<Tensor>,
}

impl EncoderWeights {
    /// Glorot-uniform weights and zero biases. Values are rounded to `f32`
    /// so a freshly initialised network survives a checkpoint round trip.
    pub fn init(view: View, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = view
            .layout()
            .iter()
            .map(|&(_, rows, cols)| {
                if rows == 1 {
                    return Tensor::zeros(rows, cols);
                }
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols)
                    .map(|_| rng.random_range(-limit..limit) as f32 as f64)
                    .collect();
                Tensor::from_vec(rows, cols, data).expect("layout shape")
            })
            .collect();
        Self { view, tensors }
    }

    /// Wraps tensors after checking them against the view's layout.
    pub fn from_tensors(view: View, tensors: Vec<Tensor>) -> Result<Self> {
        let layout = view.layout();
        if tensors.len() != layout.len() {
            return Err(Error::Shape(format!(
                "{} encoder has {} tensors, got {}",
                view.name(),
                layout.len(),
                tensors.len()
            )));
        }
        for (t, &(name, rows, cols)) in tensors.iter().zip(layout) {
            if t.shape() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "{name}: expected {rows}x{cols}, got {}x{}",
                    t.rows(),
                    t.cols()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(Self { view, tensors })
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn embed_dim(&self) -> usize {
        EMBED_DIM
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.view.layout().iter().map(|l| l.0).collect()
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Adds every tensor to `g` as a differentiable leaf.
    pub fn attach(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Adds every tensor to `g` as a constant.
    pub fn attach_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.constant(t.clone())).collect()
    }
}
