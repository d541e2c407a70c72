//! Provider abstraction, role-specific prompt composition, response
//! parsing, and deterministic offline providers.

mod extract;
mod provider;
mod templates;

pub use extract::{embed_message, extract_code, extract_message};
pub use provider::{
    CassetteProvider, Gateway, GatewayConfig, HttpProvider, HttpProviderConfig, Provider,
    RetryPolicy, ScriptedProvider, SyntheticProvider,
};
pub use templates::{
    compose_prompt, render_icl_data, render_params_block, MechanismKind, PersonaKind,
    PromptContext,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The eight prompt roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Generator,
    Modifier,
    Fixer,
    PolicyGenerator,
    PolicyModifier,
    FarmSim,
    Explainer,
    Merger,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Modifier => "modifier",
            Role::Fixer => "fixer",
            Role::PolicyGenerator => "policy_generator",
            Role::PolicyModifier => "policy_modifier",
            Role::FarmSim => "farm_sim",
            Role::Explainer => "explainer",
            Role::Merger => "merger",
        }
    }
}

/// Pipeline stage a prompt belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Baseline,
    Global,
    Nudge,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Baseline => "baseline",
            Stage::Global => "global",
            Stage::Nudge => "nudge",
        }
    }
}

/// A composed, ready-to-send prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptBundle {
    pub role: Role,
    pub stage: Stage,
    pub text: String,
    /// Sampling index: distinguishes repeated draws from one prompt the way
    /// temperature sampling would, while keeping replays content-addressed.
    #[serde(default)]
    pub sample: u32,
    /// Content address over (role, stage, sample, text); keys the replay
    /// store.
    pub context_digest: String,
}

impl PromptBundle {
    pub fn new(role: Role, stage: Stage, text: String) -> Self {
        Self::with_sample(role, stage, text, 0)
    }

    pub fn with_sample(role: Role, stage: Stage, text: String, sample: u32) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(role.as_str().as_bytes());
        hasher.update(b"|");
        hasher.update(stage.as_str().as_bytes());
        hasher.update(b"|");
        hasher.update(sample.to_le_bytes());
        hasher.update(b"|");
        hasher.update(text.as_bytes());
        let context_digest = hex::encode(hasher.finalize());
        PromptBundle {
            role,
            stage,
            text,
            sample,
            context_digest,
        }
    }

    /// Re-keys the same prompt text under a different sampling index.
    pub fn resampled(&self, sample: u32) -> Self {
        Self::with_sample(self.role, self.stage, self.text.clone(), sample)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub raw: String,
    /// Extracted code block or message block; `None` when extraction failed.
    pub parsed: Option<String>,
    pub usage: TokenUsage,
    pub latency: f64,
}

/// Adapts the fixer role to the sandbox's repair hook.
pub struct GatewayFixer<'a> {
    gateway: &'a Gateway,
    stage: Stage,
}

impl<'a> GatewayFixer<'a> {
    pub fn new(gateway: &'a Gateway, stage: Stage) -> Self {
        GatewayFixer { gateway, stage }
    }
}

impl crate::sandbox::Fixer for GatewayFixer<'_> {
    fn fix(&self, body: &str, trace: &str) -> crate::error::Result<Option<String>> {
        let ctx = PromptContext {
            code: Some(body.to_string()),
            trace: Some(trace.to_string()),
            ..PromptContext::default()
        };
        let bundle = compose_prompt(Role::Fixer, self.stage, &ctx)?;
        match self.gateway.complete(&bundle) {
            Ok(response) => Ok(response.parsed),
            Err(_) => Ok(None), // provider failure counts as unrepaired
        }
    }
}
