use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("cycle detected in layer graph at `{0}`")]
    CycleDetected(String),

    #[error("layer `{0}` is missing weights: {1}")]
    MissingWeights(String, String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("layer `{id}` of kind `{kind}` is not supported here")]
    UnsupportedLayerKind { id: String, kind: String },

    #[error("index {index} out of range for {len} units")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("negative signal weight {0}")]
    NegativeWeight(f64),

    #[error("signal layer `{signal}` lies below target layer `{target}`")]
    SignalBelowTarget { signal: String, target: String },

    #[error("negative activation {value} under shift {shift}")]
    NegativeActivation { value: f64, shift: f64 },

    #[error("contrastive dual is undefined at `{0}`: not an affine layer")]
    DualUndefined(String),

    #[error("invalid target layer `{0}`: {1}")]
    InvalidTarget(String, String),

    #[error("chain would have {states} states, cap is {cap}")]
    TooLarge { states: usize, cap: usize },

    #[error("singular linear system")]
    SingularSystem,

    #[error("category `{0}` has no test cases")]
    EmptyCategory(String),

    #[error("no pixel passes the attention threshold")]
    EmptyAttention,

    #[error("proposal {0} has zero area")]
    EmptyProposal(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("at layer `{layer}`: {source}")]
    AtLayer {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn at_layer(self, layer: &str) -> Self {
        match self {
            e @ Error::AtLayer { .. } => e,
            e => Error::AtLayer {
                layer: layer.to_string(),
                source: Box::new(e),
            },
        }
    }
}
