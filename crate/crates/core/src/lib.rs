pub mod checkpoint;
pub mod classify;
pub mod eda;
pub mod ingest;
pub mod latent;
pub mod nn;
pub mod preprocess;
pub mod vae;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ingest.md")]
    mod ingest {}
    #[doc = include_str!("../../../book/src/silhouettes.md")]
    mod silhouettes {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/latent.md")]
    mod latent {}
}
