use alloc::vec::Vec;

use crate::camera::{AnchorImage, CameraParams, PluckerGrid};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::tensor::Tensor;

/// Per-view conditioning, read through accessors so a caller can observe
/// which inputs a forward pass touches.
pub trait Conditioning {
    fn views(&self) -> usize;
    fn camera(&self, view: usize) -> Option<&CameraParams>;
    fn plucker(&self, view: usize) -> Option<&PluckerGrid>;
    fn anchor(&self, view: usize) -> Option<&AnchorImage>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViewConditioning {
    pub camera: Option<CameraParams>,
    pub plucker: Option<PluckerGrid>,
    pub anchor: Option<AnchorImage>,
}

impl Conditioning for Vec<ViewConditioning> {
    fn views(&self) -> usize {
        self.len()
    }

    fn camera(&self, view: usize) -> Option<&CameraParams> {
        self.get(view)?.camera.as_ref()
    }

    fn plucker(&self, view: usize) -> Option<&PluckerGrid> {
        self.get(view)?.plucker.as_ref()
    }

    fn anchor(&self, view: usize) -> Option<&AnchorImage> {
        self.get(view)?.anchor.as_ref()
    }
}

/// Image-level conditioning vector added to the timestep embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEmbedding(Tensor);

impl GlobalEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("global embedding"));
        }
        let n = values.len();
        Ok(Self(Tensor::from_vec(1, n, values)?))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum GlobalSource<'a> {
    /// Encoded inside the graph by the trainable toy encoder.
    Image(&'a Grid),
    Embedding(&'a GlobalEmbedding),
}

#[derive(Clone, Copy)]
pub struct ModelInput<'a> {
    /// Noisy target latents, one per view.
    pub noisy: &'a [Grid],
    pub conditioning: &'a dyn Conditioning,
    pub reference: Option<&'a Grid>,
    pub face: Option<&'a Grid>,
    pub global: Option<GlobalSource<'a>>,
    pub t: usize,
    /// Softmax scale; `None` means `1/√d`.
    pub lambda: Option<f64>,
    /// Replace reference, face and global inputs with the learned null
    /// embeddings (the unconditional guidance branch).
    pub drop_conditioning: bool,
    /// Learned view-offset row used by each target; defaults to `0..N`.
    pub view_slots: Option<&'a [usize]>,
}

impl<'a> ModelInput<'a> {
    pub fn new(noisy: &'a [Grid], conditioning: &'a dyn Conditioning, t: usize) -> Self {
        Self {
            noisy,
            conditioning,
            reference: None,
            face: None,
            global: None,
            t,
            lambda: None,
            drop_conditioning: false,
            view_slots: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Target,
    Reference,
    Face,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub view: Option<usize>,
    pub role: Role,
}

/// The embedded token sequence with each token's origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTokenBatch {
    pub tokens: Tensor,
    pub segments: Vec<Segment>,
    pub cameras: Vec<Option<CameraParams>>,
}

impl ViewTokenBatch {
    pub fn loss_mask(&self) -> Vec<bool> {
        self.segments.iter().map(|s| s.role == Role::Target).collect()
    }
}

/// Per-block `(scale, shift)` over target tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    pub blocks: Vec<(Tensor, Tensor)>,
}

impl ControlSignal {
    pub fn is_zero(&self) -> bool {
        self.blocks
            .iter()
            .all(|(s, h)| s.data().iter().chain(h.data()).all(|&x| x == 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|(s, h)| s.data().iter().chain(h.data()))
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}
