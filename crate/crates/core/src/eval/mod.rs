//! Experiment harness: masked-input error tables, ambiguity scores, latent
//! traces, depth-image curvature and the transfer matrix.

mod curvature;
mod latent;
mod rms;
mod transfer;

pub use curvature::mean_curvature;
pub use latent::{
    latent_trace, mean_intra_class_distance, object_latents, pca_2d, silhouette, trace_from_latents, LatentPoint,
    LatentTrace, ObjectLatent, Projection,
};
pub use rms::{ambiguity_scores, rms_table, AmbiguityScore, EvaluationReport, InputConfiguration, Predictor, ReportRow};
pub use transfer::{
    classify_push, pretrain_key, run_transfer, DemoSpec, PretrainCache, ProtocolRun, PushCheck, TransferProtocol, TransferReport,
    TransferSuite, TRANSFER_VERSION,
};
