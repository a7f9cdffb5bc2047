//! Depth-conditioned training-frame synthesis.
//!
//! The crate renders depth and semantic masks over box-composed terrain,
//! derives ground-truth optical flow from geometry and camera motion, and
//! propagates one generated keyframe into a short, temporally consistent
//! frame stack. Around that sit a prompt pool, the image-generator boundary
//! and a two-queue worker pipeline with offline and RPC modes.

pub mod bench;
pub mod camera;
pub mod dim;
pub mod eval;
pub mod flow;
pub mod generator;
pub mod imageio;
pub mod prompts;
pub mod pipeline;
pub mod raster;
pub mod scene;

pub use camera::{clip_depth, normalize_disparity, CameraIntrinsics, DepthMap, DisparityImage, Pose};
pub use dim::{assemble_stack, fill_holes, speedup_model, warp_frame, FillStrategy, FrameRender, FrameStack};
pub use flow::{compute_flow, visibility_mask, FlowField};
pub use scene::{binary_masks, build_terrain, raycast, LabelImage, Mask, SceneGeometry, TerrainSpec};
pub use generator::{GenerationRequest, GeneratedImage, Generator, RemoteGenerator, StubGenerator, ViewContext};
pub use prompts::{PromptBatch, PromptPair, PromptPool};
pub use pipeline::{run_offline_batch, run_onpolicy_loop, Broker, JobEnvelope, MemoryBroker, RpcClient, Store, StoreKey, TaskConfig};
pub use eval::{fgr, x_displacement, RolloutLog};
pub use bench::{bench_dim, BenchConfig, BenchReport};
