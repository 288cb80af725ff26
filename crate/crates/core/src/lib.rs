//! Dense shape correspondence between triangle meshes from regularized
//! functional maps, sliced-Wasserstein feature alignment and Sinkhorn-driven
//! refinement.

pub mod align;
pub mod autodiff;
pub mod eval;
pub mod fmap;
pub mod formats;
pub mod mesh;
pub mod ot;
pub mod refine;
pub mod sparse;
pub mod spectral;
