//! Provider handles and the gateway that wraps them with retries, rate
//! limiting, role-aware response parsing, and a JSONL audit log.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{ProviderError, Result};
use crate::llm::{
    extract_code, extract_message, PromptBundle, ProviderResponse, Role, TokenUsage,
};

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn complete_raw(&self, bundle: &PromptBundle) -> Result<String, ProviderError>;
}

/// Replay store: responses addressed by prompt digest, one JSON file per
/// entry. With a `record` inner provider, misses are forwarded and the
/// response is persisted for future replays.
pub struct CassetteProvider {
    dir: PathBuf,
    cache: Mutex<BTreeMap<String, String>>,
    record: Option<Box<dyn Provider>>,
}

#[derive(Serialize, Deserialize)]
struct CassetteEntry {
    digest: String,
    role: String,
    stage: String,
    response: String,
}

impl CassetteProvider {
    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        CassetteProvider {
            dir: dir.into(),
            cache: Mutex::new(BTreeMap::new()),
            record: None,
        }
    }

    pub fn recording(dir: impl Into<PathBuf>, inner: Box<dyn Provider>) -> Self {
        CassetteProvider {
            dir: dir.into(),
            cache: Mutex::new(BTreeMap::new()),
            record: Some(inner),
        }
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }
}

impl Provider for CassetteProvider {
    fn name(&self) -> &str {
        "cassette"
    }

    fn complete_raw(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        if let Some(hit) = self.cache.lock().unwrap().get(&bundle.context_digest) {
            return Ok(hit.clone());
        }
        let path = self.path_for(&bundle.context_digest);
        if let Ok(text) = fs::read_to_string(&path) {
            let entry: CassetteEntry = serde_json::from_str(&text)
                .map_err(|e| ProviderError::Fatal(format!("corrupt cassette {path:?}: {e}")))?;
            self.cache
                .lock()
                .unwrap()
                .insert(bundle.context_digest.clone(), entry.response.clone());
            return Ok(entry.response);
        }
        match &self.record {
            Some(inner) => {
                let response = inner.complete_raw(bundle)?;
                let entry = CassetteEntry {
                    digest: bundle.context_digest.clone(),
                    role: bundle.role.as_str().to_string(),
                    stage: bundle.stage.as_str().to_string(),
                    response: response.clone(),
                };
                fs::create_dir_all(&self.dir)
                    .and_then(|_| {
                        fs::write(&path, serde_json::to_string_pretty(&entry).unwrap())
                    })
                    .map_err(|e| ProviderError::Fatal(format!("cassette write failed: {e}")))?;
                self.cache
                    .lock()
                    .unwrap()
                    .insert(bundle.context_digest.clone(), response.clone());
                Ok(response)
            }
            None => Err(ProviderError::NotRecorded(bundle.context_digest.clone())),
        }
    }
}

/// Test/offline provider driven by a closure.
pub struct ScriptedProvider<F> {
    name: String,
    strategy: F,
}

impl<F> ScriptedProvider<F>
where
    F: Fn(&PromptBundle) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, strategy: F) -> Self {
        ScriptedProvider {
            name: name.into(),
            strategy,
        }
    }
}

impl<F> Provider for ScriptedProvider<F>
where
    F: Fn(&PromptBundle) -> Result<String, ProviderError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn complete_raw(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        (self.strategy)(bundle)
    }
}

/// Deterministic offline provider covering every role, so the full
/// pipeline runs with zero network access. Responses vary with the prompt
/// digest, giving the evolutionary search a non-trivial landscape.
pub struct SyntheticProvider;

fn digest_seed(bundle: &PromptBundle) -> u64 {
    u64::from_str_radix(&bundle.context_digest[..16], 16).unwrap_or(0)
}

const GOOD_BASELINE_SCRIPT: &str = r#"import json

with open("input.geojson") as fh:
    data = json.load(fh)

for feature in data["features"]:
    props = feature["properties"]
    if props.get("type") == "ag_plot":
        y = float(props.get("yield", 0.0))
        props["margin_intervention"] = max(0.0, min(1.0, y / 6.0))
        props["habitat_conversion"] = 0.5 if y < 1.0 else 0.0
    else:
        props["margin_intervention"] = 0.0
        props["habitat_conversion"] = 0.0

with open("output.geojson", "w") as fh:
    json.dump(data, fh)
"#;

impl SyntheticProvider {
    fn baseline_script(seed: u64) -> String {
        let divisor = 3.0 + (seed % 12) as f64;
        let low_yield = 0.5 + (seed / 12 % 6) as f64 * 0.35;
        let hab_level = 0.25 * (1 + seed / 72 % 4) as f64;
        format!(
            r#"import json

with open("input.geojson") as fh:
    data = json.load(fh)

for feature in data["features"]:
    props = feature["properties"]
    if props.get("type") == "ag_plot":
        y = float(props.get("yield", 0.0))
        props["margin_intervention"] = max(0.0, min(1.0, y / {divisor}))
        props["habitat_conversion"] = {hab_level} if y < {low_yield} else 0.0
    else:
        props["margin_intervention"] = 0.0
        props["habitat_conversion"] = 0.0

with open("output.geojson", "w") as fh:
    json.dump(data, fh)
"#
        )
    }

    fn global_script(seed: u64) -> String {
        let margin_count = 1 + (seed % 3) as usize;
        let yield_cut = 1.0 + (seed / 3 % 5) as f64 * 0.5;
        format!(
            r#"import json

DIRS = ["north-west", "north-east", "south-west", "south-east"]

with open("input.geojson") as fh:
    data = json.load(fh)

out = []
for feature in data["features"]:
    props = feature["properties"]
    margin = []
    habitat = []
    if props.get("type") == "ag_plot":
        y = float(props.get("yield", 0.0))
        start = len(props.get("nbs", [])) % 4
        margin = [DIRS[(start + k) % 4] for k in range({margin_count})]
        if y < {yield_cut}:
            habitat = DIRS[:]
    out.append({{
        "plot_id": props["id"],
        "plot_type": props.get("type", ""),
        "label": props.get("label", ""),
        "margin_directions": margin,
        "habitat_directions": habitat,
    }})

with open("output.json", "w") as fh:
    json.dump(out, fh)
"#
        )
    }

    fn nudged_script(seed: u64) -> String {
        let margin = 0.25 * (seed % 5) as f64;
        let habitat = 0.25 * (seed / 5 % 5) as f64;
        format!(
            r#"import json

with open("input.geojson") as fh:
    data = json.load(fh)

for feature in data["features"]:
    props = feature["properties"]
    if props.get("type") == "ag_plot":
        props["margin_intervention"] = {margin}
        props["habitat_conversion"] = {habitat}
    else:
        props["margin_intervention"] = 0.0
        props["habitat_conversion"] = 0.0

with open("output.geojson", "w") as fh:
    json.dump(data, fh)
"#
        )
    }
}

impl Provider for SyntheticProvider {
    fn name(&self) -> &str {
        "mock-synthetic"
    }

    fn complete_raw(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        let seed = digest_seed(bundle);
        let response = match (bundle.role, bundle.stage) {
            (Role::Generator | Role::Modifier, crate::llm::Stage::Baseline) => {
                format!(
                    "Derived a threshold rule from the exemplars.\n\n```python\n{}```",
                    Self::baseline_script(seed)
                )
            }
            (Role::Generator | Role::Modifier, _) => {
                format!(
                    "Directions follow neighbor counts and yield.\n\n```python\n{}```",
                    Self::global_script(seed)
                )
            }
            (Role::Fixer, crate::llm::Stage::Global) => {
                format!("Rewrote the failing script.\n\n```python\n{}```", Self::global_script(seed))
            }
            (Role::Fixer, _) => {
                format!("Rewrote the failing script.\n\n```python\n{GOOD_BASELINE_SCRIPT}```")
            }
            (Role::PolicyGenerator | Role::PolicyModifier, _) => {
                let subsidy = 20 + (seed % 60);
                format!(
                    "Reasoning about incentives.\n\n\\communication{{Connecting your field margins to the neighbouring habitat qualifies for a {subsidy} percent establishment subsidy. Matching the recommended directions keeps your plan within the programme budget.}}"
                )
            }
            (Role::FarmSim, _) => {
                // A third of agents refuse and return the original code.
                if seed % 3 == 0 {
                    match extract_code(&bundle.text) {
                        Some(original) => format!("I will keep my practices.\n\n```python\n{original}\n```"),
                        None => "I will keep my practices.".to_string(),
                    }
                } else {
                    format!(
                        "The incentives are acceptable; adjusting levels.\n\n```python\n{}```",
                        Self::nudged_script(seed)
                    )
                }
            }
            (Role::Explainer, _) => format!(
                "The scripts move from flat assignments to yield-scaled thresholds (group digest {}).",
                &bundle.context_digest[..8]
            ),
            (Role::Merger, _) => format!(
                "Combined summary: threshold rules dominate; later versions add neighbor-aware placement (digest {}).",
                &bundle.context_digest[..8]
            ),
        };
        Ok(response)
    }
}

/// OpenAI-compatible chat-completions provider for the gated live path.
pub struct HttpProvider {
    config: HttpProviderConfig,
    client: reqwest::blocking::Client,
}

#[derive(Debug, Clone)]
pub struct HttpProviderConfig {
    /// Full completions endpoint, e.g. `https://host/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub temperature: Option<f64>,
    pub timeout: Duration,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Fatal(format!("http client: {e}")))?;
        Ok(HttpProvider { config, client })
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn complete_raw(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": bundle.text}],
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = serde_json::json!(t);
        }
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| ProviderError::Transient(format!("request failed: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| ProviderError::Transient(format!("body read failed: {e}")))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Fatal(format!("HTTP {status}: {text}")));
        }
        let doc: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Fatal(format!("invalid response JSON: {e}")))?;
        doc["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Fatal("response missing message content".into()))
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(50),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GatewayConfig {
    pub retry: RetryPolicy,
    /// Minimum spacing between provider calls (rate limiting).
    pub min_interval: Option<Duration>,
    /// JSONL audit log destination.
    pub audit_log: Option<PathBuf>,
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    role: &'a str,
    stage: &'a str,
    digest: &'a str,
    attempts: u32,
    prompt_chars: usize,
    response_chars: usize,
    prompt_tokens: u64,
    completion_tokens: u64,
    latency: f64,
    parsed: bool,
}

/// Wraps a provider with retry/backoff, rate limiting, role-aware parsing,
/// and audit logging. The rate limiter is the only synchronized component.
pub struct Gateway {
    provider: Box<dyn Provider>,
    config: GatewayConfig,
    last_call: Mutex<Option<Instant>>,
    audit: Option<Mutex<fs::File>>,
}

impl Gateway {
    pub fn new(provider: Box<dyn Provider>, config: GatewayConfig) -> Result<Self> {
        let audit = match &config.audit_log {
            Some(path) => {
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent)?;
                }
                Some(Mutex::new(
                    fs::OpenOptions::new().create(true).append(true).open(path)?,
                ))
            }
            None => None,
        };
        Ok(Gateway {
            provider,
            config,
            last_call: Mutex::new(None),
            audit,
        })
    }

    pub fn offline_synthetic() -> Self {
        Gateway::new(Box::new(SyntheticProvider), GatewayConfig::default())
            .expect("no audit file configured")
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    fn throttle(&self) {
        if let Some(interval) = self.config.min_interval {
            let mut last = self.last_call.lock().unwrap();
            if let Some(prev) = *last {
                let elapsed = prev.elapsed();
                if elapsed < interval {
                    std::thread::sleep(interval - elapsed);
                }
            }
            *last = Some(Instant::now());
        }
    }

    /// Completes a prompt with bounded retries and exponential backoff on
    /// transient failures. Every call is audited with the context digest.
    pub fn complete(&self, bundle: &PromptBundle) -> Result<ProviderResponse, ProviderError> {
        let start = Instant::now();
        let mut attempts = 0;
        let raw = loop {
            attempts += 1;
            self.throttle();
            match self.provider.complete_raw(bundle) {
                Ok(raw) => break raw,
                Err(ProviderError::Transient(msg)) => {
                    if attempts >= self.config.retry.max_attempts {
                        self.audit(bundle, attempts, 0, false, start.elapsed());
                        return Err(ProviderError::RetriesExhausted {
                            attempts,
                            last: msg,
                        });
                    }
                    let backoff = self.config.retry.base_delay * 2u32.pow(attempts - 1);
                    std::thread::sleep(backoff);
                }
                Err(e) => {
                    self.audit(bundle, attempts, 0, false, start.elapsed());
                    return Err(e);
                }
            }
        };
        let parsed = match bundle.role {
            Role::Generator | Role::Modifier | Role::Fixer | Role::FarmSim => extract_code(&raw),
            Role::PolicyGenerator | Role::PolicyModifier => extract_message(&raw),
            Role::Explainer | Role::Merger => {
                let t = raw.trim();
                (!t.is_empty()).then(|| t.to_string())
            }
        };
        let latency = start.elapsed();
        self.audit(bundle, attempts, raw.len(), parsed.is_some(), latency);
        Ok(ProviderResponse {
            usage: TokenUsage {
                // Rough 4-chars-per-token estimate; the http provider's real
                // usage is logged by the endpoint itself.
                prompt_tokens: (bundle.text.len() / 4) as u64,
                completion_tokens: (raw.len() / 4) as u64,
            },
            parsed,
            raw,
            latency: latency.as_secs_f64(),
        })
    }

    fn audit(
        &self,
        bundle: &PromptBundle,
        attempts: u32,
        response_chars: usize,
        parsed: bool,
        latency: Duration,
    ) {
        if let Some(audit) = &self.audit {
            let record = AuditRecord {
                role: bundle.role.as_str(),
                stage: bundle.stage.as_str(),
                digest: &bundle.context_digest,
                attempts,
                prompt_chars: bundle.text.len(),
                response_chars,
                prompt_tokens: (bundle.text.len() / 4) as u64,
                completion_tokens: (response_chars / 4) as u64,
                latency: latency.as_secs_f64(),
                parsed,
            };
            if let Ok(mut file) = audit.lock() {
                let _ = writeln!(file, "{}", serde_json::to_string(&record).unwrap());
            }
        }
    }
}
