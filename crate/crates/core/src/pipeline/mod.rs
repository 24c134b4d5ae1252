//! Toy trajectory-generation forward pass on synthetic scenes.
//!
//! Tokens carry only pose-free features; absolute poses travel alongside in
//! [`PoseSet`](crate::attention::PoseSet)s and enter through the attention
//! embeddings. A rollout alternates decoding, action selection and a
//! kinematic step.

pub mod kinematics;
pub mod model;
pub mod rollout;
pub mod scene;
pub mod tokens;

pub use kinematics::{kinematic_step, ActionGrid, AgentState, ControlAction};
pub use model::{
    temporal_encoding, ActionDistribution, AttentionBlock, InteractionBlock, ModelConfig,
    TrajectoryModel,
};
pub use rollout::{
    exceeds_soft_horizon, min_ade, replay, rollout, scene_min_ade, Policy, Rollout,
    SOFT_HORIZON_SECONDS,
};
pub use scene::{
    segment_polyline, synthetic_scene, AgentTrack, MapSegment, RoadShape, Scene, SyntheticConfig,
    DEFAULT_DT, MAX_SEGMENT_LENGTH,
};
pub use tokens::{encode_agents, encode_map, tokenize_scene, SceneTokens, TokenEncoder};
