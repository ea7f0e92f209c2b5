//! Verify-Generate-Critique curation.
//!
//! Verify fans a clip out to two ASR engines and routes the pair on its
//! consistency score. Generate asks the teacher for a caption from the audio
//! alone. Critique has the teacher audit that caption, and expansion turns
//! approved captions into instruction pairs.

mod pipeline;
mod prompts;
mod router;
mod stages;

pub use pipeline::{
    candidates_from_results, run_pipeline, run_stage, Checkpoints, ClipError, PipelineError,
    RunOptions, RunReport, Services, Stage,
};
pub use prompts::{
    parse_instruction_pairs, parse_verdict, PromptTemplates, TemplateError, VerdictError,
};
pub use router::{route, RouteError, RouterConfig};
pub use stages::{
    apply_critique, critique_caption, expand_instructions, generate_caption, StageError,
    DEFAULT_MAX_PAIRS_PER_CLIP,
};
