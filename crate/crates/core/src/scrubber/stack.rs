use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::sequence::EmbeddingSequence;

/// An ordered sequence of frame-sequence transforms.
///
/// Layer `j` maps the state at index `j` to the state at index `j + 1`; index
/// 0 is the input to the first layer. Implementations must be deterministic
/// and preserve both `T` and `H`.
pub trait LayerStack: Sync {
    fn name(&self) -> &str;
    fn n_layers(&self) -> usize;
    fn hidden_dim(&self) -> usize;

    /// `utterance` gives access to per-utterance side data (a dump-backed
    /// stack reads its recorded states from it); purely functional stacks
    /// ignore it.
    fn apply(&self, layer: usize, input: &EmbeddingSequence, utterance: &Utterance) -> Result<EmbeddingSequence>;
}

/// Applies one layer and checks the shape contract.
pub fn apply_checked(
    stack: &dyn LayerStack,
    layer: usize,
    input: &EmbeddingSequence,
    utterance: &Utterance,
) -> Result<EmbeddingSequence> {
    if layer >= stack.n_layers() {
        return Err(Error::Config(format!(
            "layer {layer} out of range for {}-layer stack {}",
            stack.n_layers(),
            stack.name()
        )));
    }
    let out = stack.apply(layer, input, utterance)?;
    if out.width() != input.width() {
        return Err(Error::shape("layer output width", input.width(), out.width()));
    }
    if out.len() != input.len() {
        return Err(Error::shape("layer output length", input.len(), out.len()));
    }
    Ok(out)
}

/// Every layer passes its input through unchanged.
#[derive(Debug, Clone)]
pub struct IdentityStack {
    pub n_layers: usize,
    pub hidden_dim: usize,
}

impl LayerStack for IdentityStack {
    fn name(&self) -> &str {
        "identity"
    }

    fn n_layers(&self) -> usize {
        self.n_layers
    }

    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn apply(&self, layer: usize, input: &EmbeddingSequence, _: &Utterance) -> Result<EmbeddingSequence> {
        input.with_frames(layer + 1, input.as_slice().to_vec())
    }
}

/// A stack built from a closure, handy for ad-hoc experiments and tests.
pub struct FnStack<F> {
    name: String,
    n_layers: usize,
    hidden_dim: usize,
    f: F,
}

impl<F> FnStack<F>
where
    F: Fn(usize, &EmbeddingSequence) -> Result<EmbeddingSequence> + Sync,
{
    pub fn new(name: impl Into<String>, n_layers: usize, hidden_dim: usize, f: F) -> Self {
        Self {
            name: name.into(),
            n_layers,
            hidden_dim,
            f,
        }
    }
}

impl<F> LayerStack for FnStack<F>
where
    F: Fn(usize, &EmbeddingSequence) -> Result<EmbeddingSequence> + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn n_layers(&self) -> usize {
        self.n_layers
    }

    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn apply(&self, layer: usize, input: &EmbeddingSequence, _: &Utterance) -> Result<EmbeddingSequence> {
        (self.f)(layer, input)
    }
}
