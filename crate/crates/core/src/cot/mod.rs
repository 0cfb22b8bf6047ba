//! Chain-of-thought construction: structure-synthesis blocks for
//! exemplars, the iterative sub-question chain for targets, and the fixed
//! zero-shot reasoning instructions.

mod ms;
mod ss;

pub use ms::{ms_chain_to_cot_block, run_ms_chain, MsChain, Termination};
pub use ss::{build_ss_cot, composition_note, matched_elements, SsCotBlock};

use crate::error::Result;
use crate::prompt::Templates;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroShotVariant {
    StepByStep,
    Instructive,
}

/// The instruction footer for a zero-shot reasoning variant.
pub fn zero_shot_cot_instruction(templates: &Templates, variant: ZeroShotVariant) -> Result<String> {
    templates.render(
        match variant {
            ZeroShotVariant::StepByStep => "zero_shot_step_by_step",
            ZeroShotVariant::Instructive => "zero_shot_instructive",
        },
        &[],
    )
}
