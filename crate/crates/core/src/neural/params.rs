//! Flat parameter storage and tensor layout for the SDF-Net / Hyper-Net
//! pair.
//!
//! Everything trainable on the model side lives in one `Vec<f64>`: the four
//! tensors of each hyper-MLP head (one head per predicted SDF-Net tensor),
//! followed by the directly-shared SDF-Net tensors. The layout doubles as
//! the checkpoint schema: the blob is the vector in declaration order.

use nalgebra::{DMatrixView, DMatrixViewMut};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::encoding::EncodingConfig;
use crate::error::{Error, Result};

/// Architecture hyperparameters; recorded verbatim in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of the SDF-Net hidden layers.
    pub hidden_width: usize,
    /// Number of rectified hidden layers (the output projection is extra).
    pub hidden_layers: usize,
    /// Shape code dimension.
    pub code_dim: usize,
    /// Hidden width of each 2-layer hyper-MLP.
    pub hyper_hidden: usize,
    /// The hypernetwork predicts weights and biases of the first k hidden
    /// layers; the remainder (and the output projection) are shared.
    pub hyper_predicted_layers: usize,
    pub encoding: EncodingConfig,
    /// Sampling-sphere radius in the alignment frame.
    pub sphere_radius: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_width: 256,
            hidden_layers: 5,
            code_dim: 128,
            hyper_hidden: 256,
            hyper_predicted_layers: 5,
            encoding: EncodingConfig::new(6, 0, 6000),
            sphere_radius: 0.15,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.encoding.output_len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0
            || self.hidden_layers == 0
            || self.code_dim == 0
            || self.hyper_hidden == 0
        {
            return Err(Error::InvalidParameter(
                "model dimensions must be positive".into(),
            ));
        }
        if self.hyper_predicted_layers > self.hidden_layers {
            return Err(Error::InvalidParameter(format!(
                "cannot predict {} layers of a {}-layer network",
                self.hyper_predicted_layers, self.hidden_layers
            )));
        }
        if self.sphere_radius <= 0.0 {
            return Err(Error::InvalidParameter("sphere radius must be positive".into()));
        }
        Ok(())
    }

    /// SDF-Net tensor shapes in order: (w0, b0, …, w_L, b_L, w_out, b_out).
    pub fn sdf_tensor_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut shapes = Vec::new();
        let mut prev = self.input_dim();
        for l in 0..self.hidden_layers {
            shapes.push((format!("sdf.w{l}"), self.hidden_width, prev));
            shapes.push((format!("sdf.b{l}"), self.hidden_width, 1));
            prev = self.hidden_width;
        }
        shapes.push(("sdf.w_out".into(), 1, prev));
        shapes.push(("sdf.b_out".into(), 1, 1));
        shapes
    }

    /// Indices into [`Self::sdf_tensor_shapes`] emitted by the hypernetwork.
    pub fn predicted_tensor_ids(&self) -> Vec<usize> {
        (0..2 * self.hyper_predicted_layers).collect()
    }
}

/// One named tensor inside a flat buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDescriptor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorDescriptor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Layout of the SDF parameter set for one shape (predicted + shared).
#[derive(Debug, Clone, PartialEq)]
pub struct SdfLayout {
    pub tensors: Vec<TensorDescriptor>,
    pub total: usize,
}

impl SdfLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (name, rows, cols) in config.sdf_tensor_shapes() {
            tensors.push(TensorDescriptor {
                name,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        }
        Self {
            tensors,
            total: offset,
        }
    }

    pub fn view<'a>(&self, data: &'a [f64], id: usize) -> DMatrixView<'a, f64> {
        let t = &self.tensors[id];
        DMatrixView::from_slice(&data[t.offset..t.offset + t.len()], t.rows, t.cols)
    }

    pub fn slice<'a>(&self, data: &'a [f64], id: usize) -> &'a [f64] {
        let t = &self.tensors[id];
        &data[t.offset..t.offset + t.len()]
    }

    pub fn slice_mut<'a>(&self, data: &'a mut [f64], id: usize) -> &'a mut [f64] {
        let t = &self.tensors[id];
        &mut data[t.offset..t.offset + t.len()]
    }
}

/// Layout of the whole trainable model-parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayout {
    pub tensors: Vec<TensorDescriptor>,
    pub total: usize,
    /// Per predicted SDF tensor: indices of its (a_w, a_b, b_w, b_b).
    pub head_tensors: Vec<[usize; 4]>,
    /// For each shared SDF tensor: (sdf layout id, model tensor index).
    pub shared_tensors: Vec<(usize, usize)>,
}

impl ModelLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let sdf = SdfLayout::new(config);
        let predicted = config.predicted_tensor_ids();
        let mut tensors: Vec<TensorDescriptor> = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize, offset: &mut usize| -> usize {
            tensors.push(TensorDescriptor {
                name,
                rows,
                cols,
                offset: *offset,
            });
            *offset += rows * cols;
            tensors.len() - 1
        };
        let mut head_tensors = Vec::new();
        for &id in &predicted {
            let target = &sdf.tensors[id];
            let base = format!("hyper.{}", target.name);
            let a_w = push(
                format!("{base}.a_w"),
                config.hyper_hidden,
                config.code_dim,
                &mut offset,
            );
            let a_b = push(format!("{base}.a_b"), config.hyper_hidden, 1, &mut offset);
            let b_w = push(
                format!("{base}.b_w"),
                target.len(),
                config.hyper_hidden,
                &mut offset,
            );
            let b_b = push(format!("{base}.b_b"), target.len(), 1, &mut offset);
            head_tensors.push([a_w, a_b, b_w, b_b]);
        }
        let mut shared_tensors = Vec::new();
        for (id, t) in sdf.tensors.iter().enumerate() {
            if !predicted.contains(&id) {
                let idx = push(t.name.clone(), t.rows, t.cols, &mut offset);
                shared_tensors.push((id, idx));
            }
        }
        Self {
            tensors,
            total: offset,
            head_tensors,
            shared_tensors,
        }
    }

    pub fn view<'a>(&self, data: &'a [f64], id: usize) -> DMatrixView<'a, f64> {
        let t = &self.tensors[id];
        DMatrixView::from_slice(&data[t.offset..t.offset + t.len()], t.rows, t.cols)
    }

    pub fn view_mut<'a>(&self, data: &'a mut [f64], id: usize) -> DMatrixViewMut<'a, f64> {
        let t = &self.tensors[id];
        DMatrixViewMut::from_slice(&mut data[t.offset..t.offset + t.len()], t.rows, t.cols)
    }

    pub fn slice<'a>(&self, data: &'a [f64], id: usize) -> &'a [f64] {
        let t = &self.tensors[id];
        &data[t.offset..t.offset + t.len()]
    }

    pub fn slice_mut<'a>(&self, data: &'a mut [f64], id: usize) -> &'a mut [f64] {
        let t = &self.tensors[id];
        &mut data[t.offset..t.offset + t.len()]
    }
}

fn uniform_fill(rng: &mut StdRng, data: &mut [f64], limit: f64) {
    for v in data {
        *v = rng.gen_range(-limit..limit);
    }
}

/// Initializes the model-parameter vector.
///
/// Direct tensors and hyper-head bias outputs take the usual
/// `U(±1/sqrt(fan_in))` of their target shape, so the network at a zero
/// shape code behaves like an ordinarily initialized MLP. Hyper output
/// weights are additionally scaled by 1/fan-out to keep early predicted
/// weights near those bias values.
pub fn init_params(config: &ModelConfig, seed: u64) -> Vec<f64> {
    let layout = ModelLayout::new(config);
    let sdf = SdfLayout::new(config);
    let predicted = config.predicted_tensor_ids();
    let mut data = vec![0.0; layout.total];
    let mut rng = StdRng::seed_from_u64(seed);

    let target_limit = |id: usize| -> f64 {
        // fan-in of the tensor's layer: columns of the weight matrix
        let weight_id = id & !1;
        1.0 / (sdf.tensors[weight_id].cols as f64).sqrt()
    };

    for (head, &id) in layout.head_tensors.iter().zip(&predicted) {
        let [a_w, a_b, b_w, b_b] = *head;
        let limit_in = 1.0 / (config.code_dim as f64).sqrt();
        let t = layout.tensors[a_w].clone();
        uniform_fill(&mut rng, &mut data[t.offset..t.offset + t.len()], limit_in);
        let t = layout.tensors[a_b].clone();
        uniform_fill(&mut rng, &mut data[t.offset..t.offset + t.len()], limit_in);
        let fan_out = layout.tensors[b_w].rows as f64;
        let limit_b = 1.0 / (config.hyper_hidden as f64).sqrt() / fan_out;
        let t = layout.tensors[b_w].clone();
        uniform_fill(&mut rng, &mut data[t.offset..t.offset + t.len()], limit_b);
        let t = layout.tensors[b_b].clone();
        uniform_fill(
            &mut rng,
            &mut data[t.offset..t.offset + t.len()],
            target_limit(id),
        );
    }
    for &(sdf_id, model_id) in &layout.shared_tensors {
        let t = layout.tensors[model_id].clone();
        uniform_fill(
            &mut rng,
            &mut data[t.offset..t.offset + t.len()],
            target_limit(sdf_id),
        );
    }
    data
}
