//! Embedding losses. Each returns the loss value together with exact
//! gradients with respect to the raw embeddings and any trainable parameters.
//!
//! Losses that work on unit vectors normalize internally and pull gradients
//! back through the normalization, so callers always pass raw embeddings.

mod lifted;
mod margin;
mod npairs;
mod prototypical;
mod proxy;
mod ranked_list;
mod struct_clust;
mod triplet;

pub use lifted::{lifted_struct_loss, LiftedConfig};
pub use margin::{margin_loss, MarginLossParams};
pub use npairs::{angular_loss, npairs_loss, AngularParams, NpairsConfig};
pub use prototypical::prototypical_loss;
pub use proxy::{proxy_nca_loss, proxy_softmax_loss, proxy_triplet_loss, ProxyBank};
pub use ranked_list::{ranked_list_loss, RankedListParams};
pub use struct_clust::{struct_clust_loss, Inference, StructClustParams};
pub use triplet::{triplet_loss, TripletConfig};

use ndarray::{Array1, Array2, ArrayView2};

use crate::batch::{normalize_rows, normalize_rows_backward, EmbeddingBatch};
use crate::error::Result;
use crate::scalar::Scalar;

/// Embeddings as seen by a loss, optionally projected onto the unit sphere.
pub(crate) struct Prepared<T> {
    pub y: Array2<T>,
    norms: Option<Array1<T>>,
}

impl<T: Scalar> Prepared<T> {
    pub fn new(batch: &EmbeddingBatch<T>, normalize: bool) -> Result<Self> {
        Self::from_view(batch.view(), normalize)
    }

    pub fn from_view(x: ArrayView2<'_, T>, normalize: bool) -> Result<Self> {
        if normalize {
            let (y, n) = normalize_rows(x)?;
            Ok(Self { y, norms: Some(n) })
        } else {
            Ok(Self { y: x.to_owned(), norms: None })
        }
    }

    /// Pulls `dL/dy` back to the raw rows.
    pub fn backward(&self, grad_y: Array2<T>) -> Array2<T> {
        match &self.norms {
            Some(n) => normalize_rows_backward(self.y.view(), n, grad_y.view()),
            None => grad_y,
        }
    }
}

/// `[x]_+`.
pub(crate) fn hinge<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}
